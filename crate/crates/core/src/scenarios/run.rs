//! Scenario execution: build, evolve, sample, integrate, analyze and write the artifacts.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::analysis::{
    component_centroid, component_overlap, marginal_moments, mirror_asymmetry, nearest_index, outer_cell_mass,
    significant_maxima, Histogram,
};
use super::build::{build_grid, build_initial, build_potential, factorized_control, free_width};
use super::config::{InitialStateSpec, PotentialSpec, ScenarioConfig, Slits};
use crate::dynamics::{integrate_guided, velocity_at, write_trajectories_csv, BohmGuidance, IntegrationOptions, Trajectory};
use crate::equilibrium::{chi_square_test, compare_with_density, refined_marginal, sample_density};
use crate::error::Result;
use crate::evolution::{energy, evolve, EvolutionParams, Potential, SnapshotSource, StreamingHistory};
use crate::grid::{density, normalize, AxisSpec, Grid, ParticleSystem, WaveFunction};

const SYMMETRY_TOL: f64 = 1e-10;
const CONTROL_TOL: f64 = 1e-10;
const EMPTY_COMPONENT: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    Below(f64),
    Above(f64),
    AtLeast(f64),
    Within([f64; 2]),
    Equals(f64),
}

impl Bound {
    pub fn holds(&self, v: f64) -> bool {
        match *self {
            Bound::Below(t) => v < t,
            Bound::Above(t) => v > t,
            Bound::AtLeast(t) => v >= t,
            Bound::Within([a, b]) => v >= a && v <= b,
            Bound::Equals(t) => v == t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub value: f64,
    pub bound: Bound,
    pub passed: bool,
}

impl Verdict {
    pub fn new(check: impl Into<String>, value: f64, bound: Bound) -> Self {
        Self { check: check.into(), value, passed: bound.holds(value), bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub verdicts: Vec<Verdict>,
    pub metrics: BTreeMap<String, Value>,
    /// File names written under the output directory.
    pub outputs: Vec<String>,
}

impl RunSummary {
    pub fn verdict(&self, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotDiagnostics {
    pub index: usize,
    pub time: f64,
    pub norm: f64,
    pub outer_mass: f64,
    pub energy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryMeta {
    pub scenario: String,
    pub grid: Vec<AxisSpec>,
    pub components: usize,
    pub dt: f64,
    pub store_stride: usize,
    pub snapshot_interval: f64,
    pub t_end: f64,
    pub snapshots: Vec<SnapshotDiagnostics>,
}

/// Per-snapshot spinor data kept for one-dimensional spin runs.
struct SpinFrame {
    rho: Vec<f64>,
    overlap: f64,
    centroids: [(f64, f64); 2],
}

struct Monitor<'a> {
    potential: &'a Potential,
    system: &'a ParticleSystem,
    track_energy: bool,
    track_spin: bool,
    snapshots: Vec<SnapshotDiagnostics>,
    spin: Vec<SpinFrame>,
}

impl Monitor<'_> {
    fn observe(&mut self, index: usize, psi: &WaveFunction) -> Result<()> {
        let rho = density(psi);
        let e = if self.track_energy { Some(energy(psi, self.potential, self.system, psi.time())?) } else { None };
        self.snapshots.push(SnapshotDiagnostics {
            index,
            time: psi.time(),
            norm: psi.norm(),
            outer_mass: outer_cell_mass(&rho),
            energy: e,
        });
        if self.track_spin {
            self.spin.push(SpinFrame {
                overlap: component_overlap(psi, 0, 1),
                centroids: [component_centroid(psi, 0, 0), component_centroid(psi, 1, 0)],
                rho: rho.rho,
            });
        }
        Ok(())
    }
}

/// Streams snapshots to the monitor in order, whatever the integrator asks for.
struct Observed<'a, S: SnapshotSource> {
    inner: S,
    seen: usize,
    monitor: Monitor<'a>,
}

impl<S: SnapshotSource> SnapshotSource for Observed<'_, S> {
    fn len(&self) -> usize {
        self.inner.len()
    }

    fn start_time(&self) -> f64 {
        self.inner.start_time()
    }

    fn interval(&self) -> f64 {
        self.inner.interval()
    }

    fn snapshot(&mut self, index: usize) -> Result<Arc<WaveFunction>> {
        while self.seen <= index {
            let psi = self.inner.snapshot(self.seen)?;
            self.monitor.observe(self.seen, &psi)?;
            self.seen += 1;
        }
        self.inner.snapshot(index)
    }
}

const MARGINAL_BINS: usize = 64;

/// Everything a run produces before it is written to disk.
pub struct ScenarioRun {
    pub summary: RunSummary,
    pub meta: HistoryMeta,
    pub trajectories: Vec<Trajectory>,
    pub screen_histogram: Option<Histogram>,
    pub final_state: Arc<WaveFunction>,
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    grid: &'a Arc<Grid>,
    sys: &'a ParticleSystem,
    potential: &'a Potential,
    psi0: &'a WaveFunction,
    psi_t: &'a WaveFunction,
    trajs: &'a [Trajectory],
    spin: &'a [SpinFrame],
    verdicts: Vec<Verdict>,
    metrics: BTreeMap<String, Value>,
    screen_histogram: Option<Histogram>,
}

impl Context<'_> {
    fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    fn metric(&mut self, key: &str, value: Value) {
        self.metrics.insert(key.to_string(), value);
    }

    fn completed(&self) -> impl Iterator<Item = &Trajectory> {
        self.trajs.iter().filter(|t| t.completed())
    }
}

/// Build, evolve, sample `|ψ₀|²`, integrate the ensemble and evaluate every check.
pub fn simulate(cfg: &ScenarioConfig, seed: u64) -> Result<ScenarioRun> {
    cfg.validate()?;
    let grid = build_grid(cfg)?;
    let sys = cfg.system.build()?;
    sys.check_grid(&grid)?;
    let psi0 = build_initial(cfg, &grid, &sys)?.with_time(0.0);
    let potential = build_potential(cfg, &grid, &sys)?;
    let s = &cfg.schedule;
    let params = EvolutionParams::new(s.dt, s.store_stride);
    let history = StreamingHistory::new(&psi0, Arc::new(potential.clone()), &sys, 0.0, s.t_end, &params)?;
    let monitor = Monitor {
        potential: &potential,
        system: &sys,
        track_energy: potential.schedule().is_none(),
        track_spin: sys.components == 2 && grid.dims() == 1,
        snapshots: Vec::new(),
        spin: Vec::new(),
    };
    let mut source = Observed { inner: history, seen: 0, monitor };

    let ensemble = sample_density(&psi0, cfg.ensemble.size, seed)?;
    let guide = BohmGuidance::new(grid.clone(), &sys)?;
    let mut opts = IntegrationOptions::new(s.dt_traj);
    opts.record_stride = cfg.ensemble.record_stride;
    opts.screen = cfg.checks.screen;
    let mut trajs = integrate_guided(&ensemble.members, &mut source, &guide, &opts)?;
    for t in &mut trajs {
        t.seed = Some(seed);
        t.scenario = Some(cfg.id.clone());
    }
    let last = source.len() - 1;
    let psi_t = source.snapshot(last)?;
    let monitor = source.monitor;

    let mut ctx = Context {
        cfg,
        grid: &grid,
        sys: &sys,
        potential: &potential,
        psi0: &psi0,
        psi_t: &psi_t,
        trajs: &trajs,
        spin: &monitor.spin,
        verdicts: Vec::new(),
        metrics: BTreeMap::new(),
        screen_histogram: None,
    };
    common_checks(&mut ctx, &monitor.snapshots, seed);
    match &cfg.initial_state {
        InitialStateSpec::Gaussian { .. } if cfg.potential == PotentialSpec::Zero => free_packet_checks(&mut ctx),
        InitialStateSpec::HarmonicEigenstate { .. } => stationary_checks(&mut ctx),
        InitialStateSpec::DoubleSlit { slits, .. } => double_slit_checks(&mut ctx, *slits),
        InitialStateSpec::SpinorGaussian { .. } => spin_checks(&mut ctx)?,
        InitialStateSpec::EntangledPair { .. } => nonlocality_checks(&mut ctx)?,
        InitialStateSpec::Gaussian { .. } => {}
    }
    let Context { verdicts, metrics, screen_histogram, .. } = ctx;
    let passed = verdicts.iter().all(|v| v.passed);
    let meta = HistoryMeta {
        scenario: cfg.id.clone(),
        grid: cfg.grid.clone(),
        components: sys.components,
        dt: s.dt,
        store_stride: s.store_stride,
        snapshot_interval: s.snapshot_interval(),
        t_end: s.t_end,
        snapshots: monitor.snapshots,
    };
    Ok(ScenarioRun {
        summary: RunSummary { scenario: cfg.id.clone(), seed, passed, verdicts, metrics, outputs: Vec::new() },
        meta,
        trajectories: trajs,
        screen_histogram,
        final_state: psi_t,
    })
}

fn common_checks(ctx: &mut Context, snapshots: &[SnapshotDiagnostics], seed: u64) {
    let c = &ctx.cfg.checks;
    let norm_err = snapshots.iter().map(|d| (d.norm - 1.0).abs()).fold(0.0, f64::max);
    let outer = snapshots.iter().map(|d| d.outer_mass).fold(0.0, f64::max);
    ctx.push(Verdict::new("norm", norm_err, Bound::Below(c.norm_tolerance)));
    ctx.push(Verdict::new("domain_margin", outer, Bound::Below(ctx.cfg.accuracy.domain_margin)));
    if let Some(e0) = snapshots[0].energy {
        let scale = if e0.abs() > 0.0 { e0.abs() } else { 1.0 };
        let drift = snapshots.iter().filter_map(|d| d.energy).map(|e| (e - e0).abs() / scale).fold(0.0, f64::max);
        ctx.metric("energy", json!(e0));
        ctx.push(Verdict::new("energy_drift", drift, Bound::Below(c.energy_tolerance)));
    }
    let completed = ctx.completed().count();
    ctx.metric("trajectories", json!(ctx.trajs.len()));
    ctx.metric("node_hits", json!(ctx.trajs.len() - completed));
    if c.equivariance {
        let finals: Vec<Vec<f64>> = ctx.completed().map(|t| t.last().q.clone()).collect();
        let mut report = compare_with_density(&finals, ctx.psi_t, c.alpha, seed);
        report.node_hits = ctx.trajs.len() - completed;
        match &report.chi_square {
            None => ctx.push(Verdict::new("equivariance_ks", report.statistic, Bound::Below(report.threshold))),
            Some(chi) => {
                ctx.push(Verdict::new("equivariance_chi_square", chi.statistic, Bound::Below(chi.critical)));
                for (j, m) in report.marginals.iter().enumerate() {
                    ctx.push(Verdict::new(format!("equivariance_ks_x{}", j + 1), m.statistic, Bound::Below(m.critical)));
                }
            }
        }
        ctx.metric("equivariance", serde_json::to_value(&report).unwrap_or(Value::Null));
    }
}

fn free_packet_checks(ctx: &mut Context) {
    let InitialStateSpec::Gaussian { packets } = &ctx.cfg.initial_state else { return };
    let t = ctx.psi_t.time();
    let hbar = ctx.sys.hbar;
    let rho = density(ctx.psi_t);
    let mut width_err = 0.0f64;
    let mut widths = Vec::new();
    for (j, p) in packets.iter().enumerate() {
        let (_, sd) = marginal_moments(&rho, j);
        let expected = free_width(p.sigma, t, ctx.sys.mass_of_dim(j), hbar);
        width_err = width_err.max((sd - expected).abs() / expected);
        widths.push(json!({ "measured": sd, "expected": expected }));
    }
    ctx.metric("widths", Value::Array(widths));
    ctx.push(Verdict::new("packet_width", width_err, Bound::Below(ctx.cfg.checks.width_tolerance)));

    // Free Gaussian flow: every member keeps its position relative to the packet in units of σ(t).
    let mut worst = 0.0f64;
    for tr in ctx.completed() {
        let start = &tr.samples[0];
        let end = tr.last();
        for (j, p) in packets.iter().enumerate() {
            let m = ctx.sys.mass_of_dim(j);
            let (s0, s1) = (free_width(p.sigma, start.t, m, hbar), free_width(p.sigma, end.t, m, hbar));
            let v = hbar * p.momentum / m;
            let u = (start.q[j] - p.center - v * start.t) / s0;
            let predicted = p.center + v * end.t + u * s1;
            let l = ctx.grid.length(j);
            let d = end.q[j] - predicted;
            worst = worst.max((d - l * (d / l).round()).abs() / s1);
        }
    }
    ctx.push(Verdict::new("trajectory_law", worst, Bound::Below(ctx.cfg.checks.trajectory_tolerance)));
}

fn stationary_checks(ctx: &mut Context) {
    let r0 = density(ctx.psi0).rho;
    let r1 = density(ctx.psi_t).rho;
    let top = r0.iter().fold(0.0f64, |m, &r| m.max(r));
    let change = r0.iter().zip(&r1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / top;
    ctx.push(Verdict::new("stationarity", change, Bound::Below(ctx.cfg.checks.stationarity_tolerance)));
    let drift = ctx
        .completed()
        .map(|t| t.samples[0].q.iter().zip(&t.last().q).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    ctx.push(Verdict::new("trajectory_rest", drift, Bound::Below(ctx.cfg.checks.trajectory_tolerance)));
}

fn double_slit_checks(ctx: &mut Context, slits: Slits) {
    let transverse = 1;
    let rho_t = density(ctx.psi_t);
    if slits == Slits::Both {
        let asym = mirror_asymmetry(&rho_t, transverse).unwrap_or(f64::INFINITY);
        ctx.push(Verdict::new("mirror_symmetry", asym, Bound::Below(SYMMETRY_TOL)));
        let crossings = ctx
            .completed()
            .filter(|t| {
                let side = t.samples[0].q[transverse].signum();
                t.samples.iter().any(|s| s.q[transverse].signum() != side)
            })
            .count();
        ctx.push(Verdict::new("axis_crossings", crossings as f64, Bound::Equals(0.0)));
    }
    let ax = *ctx.grid.axis(transverse);
    let dy = ctx.grid.spacing(transverse);
    let width = ctx.cfg.checks.histogram_bin_width.unwrap_or(4.0 * dy);

    if let Some(screen) = ctx.cfg.checks.screen {
        let other = 1 - screen.axis;
        let oax = *ctx.grid.axis(other);
        let mut hist = Histogram::new(oax.a, oax.b, width);
        hist.fill(ctx.trajs.iter().filter_map(|t| t.screen_hit.as_ref().map(|h| h.q[other])));
        let peaks = significant_maxima(&hist.counts);
        ctx.metric("screen_hits", json!(hist.total()));
        ctx.metric("fringe_positions", json!(peaks.iter().map(|&i| hist.lo + (i as f64 + 0.5) * hist.width).collect::<Vec<_>>()));
        match slits {
            Slits::Both => ctx.push(Verdict::new("fringe_maxima", peaks.len() as f64, Bound::AtLeast(ctx.cfg.checks.min_fringes as f64))),
            Slits::Single => ctx.push(Verdict::new("unimodal_screen", peaks.len() as f64, Bound::Equals(1.0))),
        }
        ctx.screen_histogram = Some(hist);
    }

    // Final transverse positions against the y-marginal of |ψ_T|², on 64 bins aligned to grid cells.
    let per_bin = (ax.n / MARGINAL_BINS).max(1);
    let nbins = ax.n.div_ceil(per_bin);
    let finals: Vec<f64> = ctx.completed().map(|t| t.last().q[transverse]).collect();
    let n = finals.len() as f64;
    // Cell masses by trapezoid on the refined marginal; grid values times dy are biased at fringe scale.
    const REFINE: usize = 16;
    let (h, fine) = refined_marginal(ctx.psi_t, transverse, REFINE);
    let m = fine.len();
    let mut cells = vec![0.0; ax.n];
    for (i, cell) in cells.iter_mut().enumerate() {
        let start = (i * REFINE + m - REFINE / 2) % m;
        let f = |k: usize| fine[(start + k) % m];
        *cell = h * ((0..=REFINE).map(f).sum::<f64>() - 0.5 * (f(0) + f(REFINE)));
    }
    let total: f64 = cells.iter().sum();
    let mut expected = vec![0.0; nbins];
    for (i, c) in cells.iter().enumerate() {
        expected[i / per_bin] += c / total * n;
    }
    let mut observed = vec![0.0; nbins];
    for y in &finals {
        observed[nearest_index(ctx.grid, transverse, *y) / per_bin] += 1.0;
    }
    let chi = chi_square_test(&observed, &expected, ctx.cfg.checks.alpha);
    ctx.metric("final_marginal_chi_square", serde_json::to_value(&chi).unwrap_or(Value::Null));
    ctx.push(Verdict::new("final_marginal_chi_square", chi.statistic, Bound::Below(chi.critical)));
}

fn spin_checks(ctx: &mut Context) -> Result<()> {
    let InitialStateSpec::SpinorGaussian { packet, spinor } = &ctx.cfg.initial_state else { return Ok(()) };
    let PotentialSpec::SpinGradient { strength, t_on, t_off, .. } = ctx.cfg.potential else { return Ok(()) };
    let sc = ctx.cfg.checks.spin;
    let m = ctx.sys.mass_of_dim(0);
    let hbar = ctx.sys.hbar;
    let t_end = ctx.psi_t.time();

    let overlap = component_overlap(ctx.psi_t, 0, 1);
    ctx.push(Verdict::new("spin_separation", overlap, Bound::Below(sc.max_overlap)));

    // Component 0 is pushed towards +z for positive strength; the split follows the free drift.
    let split = packet.center + hbar * packet.momentum * t_end / m;
    let up_side = strength.signum();
    let finals: Vec<f64> = ctx.completed().map(|t| t.last().q[0]).collect();
    let n = finals.len() as f64;
    let up = finals.iter().filter(|z| (*z - split) * up_side > 0.0).count() as f64;
    let p = spinor[0][0].powi(2) + spinor[0][1].powi(2);
    let se = (p * (1.0 - p) / n).sqrt();
    ctx.metric("cluster_weights", json!([up / n, 1.0 - up / n]));
    ctx.push(Verdict::new("cluster_weight", up / n, Bound::Within([p - 3.0 * se, p + 3.0 * se])));

    let interval = ctx.cfg.schedule.snapshot_interval();
    let sep_index = ctx.spin.iter().position(|f| f.overlap < sc.max_overlap);
    let (mut in_gap, mut total) = (0usize, 0usize);
    if let Some(k0) = sep_index {
        let t_sep = k0 as f64 * interval;
        ctx.metric("separation_time", json!(t_sep));
        for tr in ctx.completed() {
            for s in tr.samples.iter().filter(|s| s.t >= t_sep - 1e-12) {
                let k = ((s.t / interval).round() as usize).min(ctx.spin.len() - 1);
                let f = &ctx.spin[k];
                total += 1;
                let [(m0, c0), (m1, c1)] = f.centroids;
                if m0 < EMPTY_COMPONENT || m1 < EMPTY_COMPONENT {
                    continue;
                }
                let (lo, hi) = if c0 < c1 { (c0, c1) } else { (c1, c0) };
                let top = f.rho.iter().fold(0.0f64, |a, &r| a.max(r));
                let r = f.rho[nearest_index(ctx.grid, 0, s.q[0])];
                if s.q[0] > lo && s.q[0] < hi && r < sc.gap_level * top {
                    in_gap += 1;
                }
            }
        }
    }
    let gap = if total > 0 { in_gap as f64 / total as f64 } else { f64::NAN };
    ctx.push(Verdict::new("gap_occupancy", gap, Bound::Below(sc.max_gap_fraction)));

    // Before separation the velocity reflects both components: a balanced spinor with a relative
    // phase moves differently from a pure one.
    let window_end = t_off.min(t_end);
    let dt = ctx.cfg.schedule.dt;
    let steps = ((t_on + 0.5 * (window_end - t_on)) / dt).round().max(0.0) as usize;
    let t_c = steps as f64 * dt;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let balanced = [Complex64::new(h, 0.0), Complex64::from_polar(h, std::f64::consts::FRAC_PI_4)];
    let pure = [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    let z_c = packet.center + hbar * packet.momentum * t_c / m;
    let mut v = [0.0; 2];
    for (slot, amps) in v.iter_mut().zip([balanced, pure]) {
        let psi = normalize(&WaveFunction::from_spinor_fn(ctx.grid.clone(), 2, |q, out| {
            let g = crate::states::gaussian(q[0], packet.center, packet.sigma, packet.momentum);
            out[0] = g * amps[0];
            out[1] = g * amps[1];
        })?)?
        .with_time(0.0);
        let hist = evolve(&psi, ctx.potential, ctx.sys, 0.0, t_c, &EvolutionParams::new(dt, steps.max(1)))?;
        *slot = velocity_at(hist.last(), &[z_c], ctx.sys)?[0];
    }
    ctx.metric("center_velocities", json!({ "time": t_c, "balanced": v[0], "pure": v[1] }));
    ctx.push(Verdict::new("spinor_velocity_difference", (v[0] - v[1]).abs(), Bound::Above(sc.min_velocity_difference)));
    Ok(())
}

fn nonlocality_checks(ctx: &mut Context) -> Result<()> {
    let InitialStateSpec::EntangledPair { terms } = &ctx.cfg.initial_state else { return Ok(()) };
    let Some(nl) = ctx.cfg.checks.nonlocal else { return Ok(()) };
    let control = factorized_control(terms, ctx.grid)?;
    let diff = |psi: &WaveFunction| -> Result<(f64, f64)> {
        let a = velocity_at(psi, &[nl.x1, nl.x2[0]], ctx.sys)?[0];
        let b = velocity_at(psi, &[nl.x1, nl.x2[1]], ctx.sys)?[0];
        Ok((a, b))
    };
    let (a, b) = diff(ctx.psi0)?;
    let (ca, cb) = diff(&control)?;
    ctx.metric("nonlocal_velocities", json!({ "entangled": [a, b], "factorized": [ca, cb] }));
    ctx.push(Verdict::new("nonlocal_dependence", (a - b).abs(), Bound::Above(nl.epsilon)));
    ctx.push(Verdict::new("factorized_control", (ca - cb).abs(), Bound::Below(CONTROL_TOL)));
    Ok(())
}

/// Runtime options layered over the config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["lo", "hi", "count"])?;
    for (i, c) in hist.counts.iter().enumerate() {
        let (a, b) = hist.edges(i);
        w.write_record([a.to_string(), b.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Write the artifacts of a finished run and record their names in the summary.
pub fn write_outputs(run: &mut ScenarioRun, dir: &Path, export: usize) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut outputs = vec!["history_meta.json".to_string(), "trajectories.csv".to_string()];
    write_json(&dir.join("history_meta.json"), &run.meta)?;
    let keep = export.min(run.trajectories.len());
    write_trajectories_csv(&dir.join("trajectories.csv"), &run.trajectories[..keep])?;
    if let Some(h) = &run.screen_histogram {
        write_histogram_csv(&dir.join("screen_histogram.csv"), h)?;
        outputs.push("screen_histogram.csv".to_string());
    }
    outputs.push("report.json".to_string());
    run.summary.outputs = outputs;
    write_json(&dir.join("report.json"), &run.summary)?;
    Ok(())
}

/// Full run: simulate under the effective seed and write everything to the output directory.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<(RunSummary, PathBuf)> {
    let seed = opts.seed.unwrap_or(cfg.ensemble.seed);
    let dir = opts.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mut run = simulate(cfg, seed)?;
    write_outputs(&mut run, &dir, cfg.ensemble.export_trajectories)?;
    Ok((run.summary, dir))
}
