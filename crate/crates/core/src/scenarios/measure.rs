//! Batch measurement experiments: Born frequencies, collapse fidelity and branch irrelevance.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::MeasureConfig;
use super::run::{Bound, Verdict};
use crate::equilibrium::derive_seed;
use crate::error::{Error, Result};
use crate::measurement::{
    born_statistics, branch_irrelevance, run_ideal_measurement, BornReport, BranchIrrelevanceReport, CollapseResult,
    MeasurementSetup, FIDELITY_GATE,
};

#[derive(Debug, Clone, Default)]
pub struct MeasureOptions {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MeasureOutcome {
    Single { result: CollapseResult },
    Batch { born: BornReport, branches: BranchIrrelevanceReport },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeasureSummary {
    pub experiment: String,
    pub seed: u64,
    pub runs: usize,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
    pub outputs: Vec<String>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// A single run is reported on its own; batches need at least 100 runs.
pub fn measure(cfg: &MeasureConfig, runs: usize, seed: u64) -> Result<(Vec<Verdict>, MeasureOutcome)> {
    if runs == 0 || (2..100).contains(&runs) {
        return Err(Error::Config(format!("field `runs`: {runs} (use 1 for a single run or at least 100)")));
    }
    let setup = MeasurementSetup::from_config(&cfg.measurement)?;
    if runs == 1 {
        let result = run_ideal_measurement(&setup, derive_seed(seed, 0))?;
        let verdicts = vec![Verdict::new("collapse_fidelity", result.fidelity, Bound::Above(FIDELITY_GATE))];
        return Ok((verdicts, MeasureOutcome::Single { result }));
    }
    let (born, ok) = born_statistics(&setup, runs, seed)?;
    let mut verdicts = Vec::new();
    for (a, (f, p)) in born.frequencies.iter().zip(&born.predictions).enumerate() {
        let se = (p * (1.0 - p) / (runs - born.failed_runs).max(1) as f64).sqrt();
        verdicts.push(Verdict::new(format!("frequency_{a}"), *f, Bound::Within([p - 3.0 * se, p + 3.0 * se])));
    }
    verdicts.push(Verdict::new("failed_runs", born.failed_runs as f64, Bound::Equals(0.0)));
    verdicts.push(Verdict::new("min_collapse_fidelity", born.min_fidelity, Bound::Above(FIDELITY_GATE)));
    let sample = &ok[..cfg.post.runs.min(ok.len())];
    let branches = branch_irrelevance(&setup, sample, cfg.post.steps, cfg.post.dt)?;
    verdicts.push(Verdict::new("discarded_branch_deviation", branches.max_deviation, Bound::Below(branches.threshold)));
    Ok((verdicts, MeasureOutcome::Batch { born, branches }))
}

fn write_runs_csv(path: &Path, born: &BornReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["seed", "outcome", "pointer_position", "fidelity", "error"])?;
    let opt = |x: Option<String>| x.unwrap_or_default();
    for r in &born.records {
        w.write_record([
            r.seed.to_string(),
            opt(r.outcome.map(|o| o.to_string())),
            opt(r.pointer_position.map(|y| y.to_string())),
            opt(r.fidelity.map(|f| f.to_string())),
            opt(r.error.clone()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Run the experiment and write `report.json` plus `collapse.json` or `runs.csv`.
pub fn run_measure(cfg: &MeasureConfig, opts: &MeasureOptions) -> Result<(MeasureSummary, MeasureOutcome, PathBuf)> {
    cfg.validate()?;
    let runs = opts.runs.unwrap_or(cfg.runs);
    let seed = opts.seed.unwrap_or(cfg.seed);
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let (verdicts, outcome) = measure(cfg, runs, seed)?;
    std::fs::create_dir_all(&dir)?;
    let mut outputs = Vec::new();
    match &outcome {
        MeasureOutcome::Single { result } => {
            write_json(&dir.join("collapse.json"), result)?;
            outputs.push("collapse.json".to_string());
        }
        MeasureOutcome::Batch { born, .. } => {
            write_runs_csv(&dir.join("runs.csv"), born)?;
            outputs.push("runs.csv".to_string());
        }
    }
    outputs.push("report.json".to_string());
    let passed = verdicts.iter().all(|v| v.passed);
    let summary = MeasureSummary { experiment: cfg.id.clone(), seed, runs, passed, verdicts, outputs };
    let report = serde_json::json!({ "summary": &summary, "details": match &outcome {
        MeasureOutcome::Single { .. } => serde_json::Value::Null,
        MeasureOutcome::Batch { born, branches } => serde_json::json!({
            "counts": born.counts,
            "frequencies": born.frequencies,
            "predictions": born.predictions,
            "z_scores": born.z_scores,
            "min_fidelity": born.min_fidelity,
            "branches": branches,
        }),
    }});
    write_json(&dir.join("report.json"), &report)?;
    Ok((summary, outcome, dir))
}
