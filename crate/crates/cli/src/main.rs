//! `bohmlab`: run scenarios, measurement batches and verification suites from JSON configs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bohmian::scenarios::build::{build_grid, build_initial, build_potential};
use bohmian::scenarios::{
    run_measure, run_scenario, verify, Bound, MeasureConfig, MeasureOptions, MeasureOutcome, RunOptions,
    ScenarioConfig, Suite, Verdict,
};
use bohmian::Error;
use chrono::{SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Like `println!`, but a closed stdout is not an error worth dying for.
macro_rules! say {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($arg)*);
    }};
}

const VERDICT_FAILED: u8 = 1;
const CONFIG_ERROR: u8 = 2;
const RUNTIME_ERROR: u8 = 3;

#[derive(Parser)]
#[command(name = "bohmlab", version, about = "Pilot-wave simulations driven by JSON configs")]
struct Cli {
    /// Worker threads; changes wall time only.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Check the config and build the initial state, then stop.
        #[arg(long)]
        validate_only: bool,
    },
    /// Run ideal measurements and compare outcome frequencies with the Born weights.
    Measure {
        config: PathBuf,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        validate_only: bool,
    },
    /// Run one test battery and print its statistics against thresholds.
    Verify {
        #[arg(long)]
        suite: String,
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct ManifestVerdict<'a> {
    check: &'a str,
    passed: bool,
}

#[derive(Serialize)]
struct RunManifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    config: String,
    config_sha256: String,
    seed: u64,
    started_at: String,
    finished_at: String,
    passed: bool,
    verdicts: Vec<ManifestVerdict<'a>>,
    outputs: Vec<String>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::NonPowerOfTwo { .. }
            | Error::EmptyDomain { .. }
            | Error::InvalidSchedule(_)
            | Error::InvalidSystem(_)
            | Error::DomainTooSmall(_)
            | Error::SeparationTooSmall(_)
            | Error::FactorizableSpec
            | Error::SeparationGateFailed(_)
            | Error::NonOrthonormalBasis(_)
            | Error::MemoryBudgetExceeded { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn read_config(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Write to a sibling temporary file, then rename over the target.
fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn bound_text(b: &Bound) -> String {
    match *b {
        Bound::Below(t) => format!("< {t:e}"),
        Bound::Above(t) => format!("> {t:e}"),
        Bound::AtLeast(t) => format!(">= {t}"),
        Bound::Within([a, c]) => format!("in [{a:.6}, {c:.6}]"),
        Bound::Equals(t) => format!("= {t}"),
    }
}

fn print_verdicts(verdicts: &[Verdict]) {
    for v in verdicts {
        say!(
            "{}  {:<34} {:>14.6e}  {}",
            if v.passed { "PASS" } else { "FAIL" },
            v.check,
            v.value,
            bound_text(&v.bound)
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn write_manifest(
    dir: &Path,
    command: &'static str,
    config: &Path,
    raw: &[u8],
    seed: u64,
    started_at: String,
    verdicts: &[Verdict],
    mut outputs: Vec<String>,
) -> Result<(), Failure> {
    outputs.push("manifest.json".to_string());
    let passed = verdicts.iter().all(|v| v.passed);
    let manifest = RunManifest {
        tool: "bohmlab",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: config.display().to_string(),
        config_sha256: sha256_hex(raw),
        seed,
        started_at,
        finished_at: now(),
        passed,
        verdicts: verdicts.iter().map(|v| ManifestVerdict { check: &v.check, passed: v.passed }).collect(),
        outputs,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| Failure::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &bytes).map_err(|e| Failure::Runtime(format!("manifest: {e}")))
}

fn parse_scenario(raw: &[u8], path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = std::str::from_utf8(raw).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    ScenarioConfig::from_json(text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn cmd_run(config: &Path, seed: Option<u64>, out_dir: Option<PathBuf>, validate_only: bool) -> Result<bool, Failure> {
    let started_at = now();
    let raw = read_config(config)?;
    let cfg = parse_scenario(&raw, config)?;
    let grid = build_grid(&cfg)?;
    let sys = cfg.system.build()?;
    build_initial(&cfg, &grid, &sys)?;
    build_potential(&cfg, &grid, &sys)?;
    if validate_only {
        say!("{}: configuration is valid", config.display());
        return Ok(true);
    }
    let opts = RunOptions { seed, out_dir };
    let (summary, dir) = run_scenario(&cfg, &opts)?;
    print_verdicts(&summary.verdicts);
    write_manifest(&dir, "run", config, &raw, summary.seed, started_at, &summary.verdicts, summary.outputs.clone())?;
    say!("{} {} -> {}", if summary.passed { "passed" } else { "failed" }, summary.scenario, dir.display());
    Ok(summary.passed)
}

fn cmd_measure(
    config: &Path,
    runs: Option<usize>,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    validate_only: bool,
) -> Result<bool, Failure> {
    let started_at = now();
    let raw = read_config(config)?;
    let text = std::str::from_utf8(&raw).map_err(|e| Failure::Config(e.to_string()))?;
    let cfg: MeasureConfig = bohmian::scenarios::config::parse_json(text)?;
    cfg.validate()?;
    if runs == Some(0) {
        return Err(Failure::Config("--runs must be positive".into()));
    }
    bohmian::measurement::MeasurementSetup::from_config(&cfg.measurement)?;
    if validate_only {
        say!("{}: configuration is valid", config.display());
        return Ok(true);
    }
    let opts = MeasureOptions { runs, seed, out_dir };
    let (summary, outcome, dir) = run_measure(&cfg, &opts)?;
    match &outcome {
        MeasureOutcome::Single { result } => {
            let json = serde_json::to_string_pretty(result).map_err(|e| Failure::Runtime(e.to_string()))?;
            say!("{json}");
        }
        MeasureOutcome::Batch { .. } => print_verdicts(&summary.verdicts),
    }
    write_manifest(&dir, "measure", config, &raw, summary.seed, started_at, &summary.verdicts, summary.outputs.clone())?;
    if !matches!(outcome, MeasureOutcome::Single { .. }) {
        say!("{} {} -> {}", if summary.passed { "passed" } else { "failed" }, summary.experiment, dir.display());
    }
    Ok(summary.passed)
}

fn cmd_verify(suite: &str, config: &Path, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<bool, Failure> {
    let suite: Suite = suite.parse()?;
    let raw = read_config(config)?;
    let cfg = parse_scenario(&raw, config)?;
    let report = verify(&cfg, suite, seed)?;
    say!("{}", report.table().trim_end());
    let dir = out_dir.unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut bytes = serde_json::to_vec_pretty(&report).map_err(|e| Failure::Runtime(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(&dir.join(format!("verify_{suite}.json")), &bytes).map_err(|e| Failure::Runtime(e.to_string()))?;
    say!("{}", if report.passed { "passed" } else { "failed" });
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(CONFIG_ERROR);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(RUNTIME_ERROR);
        }
    }
    let result = match cli.command {
        Command::Run { config, seed, out_dir, validate_only } => cmd_run(&config, seed, out_dir, validate_only),
        Command::Measure { config, runs, seed, out_dir, validate_only } => {
            cmd_measure(&config, runs, seed, out_dir, validate_only)
        }
        Command::Verify { suite, config, seed, out_dir } => cmd_verify(&suite, &config, seed, out_dir),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(VERDICT_FAILED),
        Err(Failure::Config(msg)) => {
            eprintln!("config error: {msg}");
            ExitCode::from(CONFIG_ERROR)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(RUNTIME_ERROR)
        }
    }
}
