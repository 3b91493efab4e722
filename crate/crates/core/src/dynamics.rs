//! Guiding-law velocities and RK4 trajectory integration through a wave-function history.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evolution::SnapshotSource;
use crate::grid::{Grid, ParticleSystem, WaveFunction};
use crate::interp::{lagrange_weights, Stencil};
use crate::spectral;

/// Relative node guard: densities below `NODE_GUARD · max ρ` are treated as nodes.
pub const NODE_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub t: f64,
    pub q: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Termination {
    Completed,
    NodeEncountered { time: f64, density: f64 },
    LeftDomain { time: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub samples: Vec<Configuration>,
    pub termination: Termination,
    /// First crossing of the detection screen, if one was configured and reached.
    pub screen_hit: Option<Configuration>,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
}

impl Trajectory {
    pub fn last(&self) -> &Configuration {
        self.samples.last().expect("trajectory has at least one sample")
    }

    pub fn completed(&self) -> bool {
        self.termination == Termination::Completed
    }
}

/// Velocity sampled on the grid, dimension-major, with a node mask.
#[derive(Debug, Clone)]
pub struct VelocityField {
    pub grid: Arc<Grid>,
    pub v: Vec<f64>,
    /// `true` where the density is at or below the node guard.
    pub masked: Vec<bool>,
}

impl VelocityField {
    pub fn at(&self, axis: usize, i: usize) -> Option<f64> {
        (!self.masked[i]).then(|| self.v[axis * self.grid.len() + i])
    }
}

/// Complex fields derived from one wave function, ready for interpolation.
#[derive(Debug, Clone)]
pub struct Frame {
    pub time: f64,
    pub nfields: usize,
    /// Field-major: `fields[f * len + i]`.
    pub fields: Vec<Complex64>,
    pub max_rho: f64,
}

/// A velocity law: which fields to interpolate and how to turn them into a velocity.
pub trait Guidance: Sync {
    fn grid(&self) -> &Arc<Grid>;
    fn nfields(&self) -> usize;
    fn frame(&self, psi: &WaveFunction) -> Result<Frame>;
    /// Writes the velocity; on a node returns the offending density.
    fn velocity(&self, values: &[Complex64], eps: f64, out: &mut [f64]) -> std::result::Result<(), f64>;
}

/// The standard guiding equation `v_j = (ħ/m_j) Im(Ψ*∂_jΨ)/Ψ*Ψ` with the spin index contracted.
pub struct BohmGuidance {
    grid: Arc<Grid>,
    system: ParticleSystem,
    coeff: Vec<f64>,
}

impl BohmGuidance {
    pub fn new(grid: Arc<Grid>, system: &ParticleSystem) -> Result<Self> {
        system.validate()?;
        system.check_grid(&grid)?;
        let coeff = (0..grid.dims()).map(|j| system.hbar / system.mass_of_dim(j)).collect();
        Ok(Self { grid, system: system.clone(), coeff })
    }

    pub fn system(&self) -> &ParticleSystem {
        &self.system
    }
}

impl Guidance for BohmGuidance {
    fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    fn nfields(&self) -> usize {
        self.system.components * (1 + self.grid.dims())
    }

    fn frame(&self, psi: &WaveFunction) -> Result<Frame> {
        if **psi.grid() != *self.grid || psi.components() != self.system.components {
            return Err(Error::GridMismatch("wave function does not match the guidance".into()));
        }
        let len = self.grid.len();
        let k = psi.components();
        let d = self.grid.dims();
        let mut fields = Vec::with_capacity(k * (1 + d) * len);
        fields.extend_from_slice(psi.data());
        let grads: Vec<Vec<Vec<Complex64>>> =
            (0..k).map(|c| spectral::gradient_split(&self.grid, psi.component(c))).collect();
        for j in 0..d {
            for g in &grads {
                fields.extend_from_slice(&g[j]);
            }
        }
        let mut max_rho = 0.0f64;
        for i in 0..len {
            let r: f64 = (0..k).map(|c| psi.data()[c * len + i].norm_sqr()).sum();
            max_rho = max_rho.max(r);
        }
        Ok(Frame { time: psi.time(), nfields: self.nfields(), fields, max_rho })
    }

    fn velocity(&self, values: &[Complex64], eps: f64, out: &mut [f64]) -> std::result::Result<(), f64> {
        let k = self.system.components;
        let psi = &values[..k];
        let rho: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
        if !(rho > eps) {
            return Err(rho);
        }
        for (j, o) in out.iter_mut().enumerate() {
            let grad = &values[k * (1 + j)..k * (2 + j)];
            let num: f64 = psi.iter().zip(grad).map(|(p, g)| (p.conj() * g).im).sum();
            *o = self.coeff[j] * num / rho;
        }
        Ok(())
    }
}

fn interpolate(frame: &Frame, stencil: &Stencil, len: usize, out: &mut [Complex64]) {
    for (f, o) in out.iter_mut().enumerate() {
        *o = stencil.apply(&frame.fields[f * len..(f + 1) * len]);
    }
}

/// Velocity at every grid point under `guide`.
pub fn guided_velocity_field(guide: &dyn Guidance, psi: &WaveFunction) -> Result<VelocityField> {
    let frame = guide.frame(psi)?;
    let grid = guide.grid().clone();
    let len = grid.len();
    let d = grid.dims();
    let eps = NODE_GUARD * frame.max_rho;
    let mut v = vec![0.0; d * len];
    let mut masked = vec![false; len];
    let mut values = vec![Complex64::new(0.0, 0.0); frame.nfields];
    let mut out = vec![0.0; d];
    for i in 0..len {
        for (f, val) in values.iter_mut().enumerate() {
            *val = frame.fields[f * len + i];
        }
        match guide.velocity(&values, eps, &mut out) {
            Ok(()) => (0..d).for_each(|j| v[j * len + i] = out[j]),
            Err(_) => masked[i] = true,
        }
    }
    Ok(VelocityField { grid, v, masked })
}

pub fn velocity_field(psi: &WaveFunction, system: &ParticleSystem) -> Result<VelocityField> {
    let guide = BohmGuidance::new(psi.grid().clone(), system)?;
    guided_velocity_field(&guide, psi)
}

/// Velocity at an off-grid configuration from cubic interpolation of Ψ and ∇Ψ.
pub fn velocity_at(psi: &WaveFunction, q: &[f64], system: &ParticleSystem) -> Result<Vec<f64>> {
    let guide = BohmGuidance::new(psi.grid().clone(), system)?;
    let frame = guide.frame(psi)?;
    velocity_in_frame(&guide, &frame, q)
}

pub fn velocity_in_frame(guide: &dyn Guidance, frame: &Frame, q: &[f64]) -> Result<Vec<f64>> {
    let grid = guide.grid();
    if q.len() != grid.dims() {
        return Err(Error::GridMismatch(format!("configuration has {} coordinates", q.len())));
    }
    let stencil = Stencil::new(grid, q);
    let mut values = vec![Complex64::new(0.0, 0.0); frame.nfields];
    interpolate(frame, &stencil, grid.len(), &mut values);
    let mut out = vec![0.0; grid.dims()];
    guide
        .velocity(&values, NODE_GUARD * frame.max_rho, &mut out)
        .map_err(|density| Error::NodeEncountered { time: frame.time, density })?;
    Ok(out)
}

/// What happens when a trajectory leaves the computational box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainPolicy {
    /// Wrap periodically, consistent with the periodic spectral grid.
    #[default]
    Wrap,
    /// Stop and report `LeftDomain`.
    Terminate,
}

/// Detection plane `q[axis] = position`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Screen {
    pub axis: usize,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegrationOptions {
    pub dt_traj: f64,
    /// Keep every `record_stride`-th step; 0 keeps only the endpoints.
    pub record_stride: usize,
    /// Defaults to the end of the history.
    pub t_end: Option<f64>,
    pub domain: DomainPolicy,
    /// The first crossing of each member is recorded; integration continues.
    pub screen: Option<Screen>,
}

impl IntegrationOptions {
    pub fn new(dt_traj: f64) -> Self {
        Self { dt_traj, record_stride: 1, t_end: None, domain: DomainPolicy::Wrap, screen: None }
    }
}

const GRID_TOL: f64 = 1e-9;

fn near_integer(x: f64) -> bool {
    (x - x.round()).abs() < GRID_TOL * x.abs().max(1.0) && x.round() >= 1.0
}

/// Stage times must land on the snapshot lattice or subdivide it evenly.
fn check_time_grid(interval: f64, dt_traj: f64) -> Result<()> {
    if !(dt_traj > 0.0) || !dt_traj.is_finite() {
        return Err(Error::TimeGridMismatch(format!("dt_traj = {dt_traj} must be positive")));
    }
    if interval == 0.0 || near_integer(interval / dt_traj) || near_integer(dt_traj / (2.0 * interval)) {
        Ok(())
    } else {
        Err(Error::TimeGridMismatch(format!(
            "dt_traj = {dt_traj} is incommensurate with the snapshot interval {interval}"
        )))
    }
}

/// Per-snapshot frames plus temporal interpolation between them.
struct FrameCache<'a, S: SnapshotSource + ?Sized> {
    source: &'a mut S,
    guide: &'a dyn Guidance,
    frames: BTreeMap<usize, Arc<Frame>>,
}

impl<'a, S: SnapshotSource + ?Sized> FrameCache<'a, S> {
    fn snapshot_frame(&mut self, i: usize) -> Result<Arc<Frame>> {
        if let Some(f) = self.frames.get(&i) {
            return Ok(f.clone());
        }
        let psi = self.source.snapshot(i)?;
        let frame = Arc::new(self.guide.frame(&psi)?);
        self.frames.insert(i, frame.clone());
        Ok(frame)
    }

    fn at(&mut self, t: f64) -> Result<Arc<Frame>> {
        let n = self.source.len();
        let h = self.source.interval();
        let t0 = self.source.start_time();
        if n == 1 || h == 0.0 {
            return self.snapshot_frame(0);
        }
        let u = (t - t0) / h;
        let nearest = u.round();
        if (u - nearest).abs() < GRID_TOL * u.abs().max(1.0) && nearest >= 0.0 && (nearest as usize) < n {
            let i = nearest as usize;
            self.evict_below(i.saturating_sub(1));
            return self.snapshot_frame(i);
        }
        if u < 0.0 || u > (n - 1) as f64 {
            return Err(Error::TimeGridMismatch(format!("time {t} outside the history")));
        }
        let m = n.min(4);
        let base = (u.floor() as usize).saturating_sub(1).min(n - m);
        self.evict_below(base);
        let frames: Vec<Arc<Frame>> = (base..base + m).map(|i| self.snapshot_frame(i)).collect::<Result<_>>()?;
        let ts: Vec<f64> = (base..base + m).map(|i| t0 + i as f64 * h).collect();
        let w = lagrange_weights(&ts, t);
        let len = frames[0].fields.len();
        let mut fields = vec![Complex64::new(0.0, 0.0); len];
        for (f, wi) in frames.iter().zip(&w) {
            fields.iter_mut().zip(&f.fields).for_each(|(a, b)| *a += b * wi);
        }
        let max_rho = frames.iter().fold(0.0f64, |m, f| m.max(f.max_rho));
        Ok(Arc::new(Frame { time: t, nfields: frames[0].nfields, fields, max_rho }))
    }

    fn evict_below(&mut self, i: usize) {
        self.frames = self.frames.split_off(&i);
    }
}

struct Member {
    q: Vec<f64>,
    active: bool,
    traj: Trajectory,
}

fn eval(
    guide: &dyn Guidance,
    frame: &Frame,
    q: &[f64],
    values: &mut [Complex64],
    out: &mut [f64],
) -> std::result::Result<(), f64> {
    let grid = guide.grid();
    let stencil = Stencil::new(grid, q);
    interpolate(frame, &stencil, grid.len(), values);
    guide.velocity(values, NODE_GUARD * frame.max_rho, out)
}

/// One classical RK4 step; on a node returns `(stage time, density)`.
fn rk4_step(
    guide: &dyn Guidance,
    frames: [&Frame; 3],
    q: &[f64],
    h: f64,
) -> std::result::Result<Vec<f64>, (f64, f64)> {
    let d = q.len();
    let mut values = vec![Complex64::new(0.0, 0.0); frames[0].nfields];
    let mut k = [vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    let mut y = vec![0.0; d];
    let stage = [(0usize, 0.0), (1, 0.5), (1, 0.5), (2, 1.0)];
    for s in 0..4 {
        let (fi, c) = stage[s];
        for j in 0..d {
            y[j] = if s == 0 { q[j] } else { q[j] + c * h * k[s - 1][j] };
        }
        eval(guide, frames[fi], &y, &mut values, &mut k[s]).map_err(|rho| (frames[fi].time, rho))?;
    }
    Ok((0..d)
        .map(|j| q[j] + h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]))
        .collect())
}

/// Integrate many starting configurations in lockstep through one history.
///
/// Each member's result is independent of how the members are scheduled across threads.
pub fn integrate_guided<S: SnapshotSource + ?Sized>(
    starts: &[Vec<f64>],
    source: &mut S,
    guide: &dyn Guidance,
    opts: &IntegrationOptions,
) -> Result<Vec<Trajectory>> {
    if source.is_empty() {
        return Err(Error::TimeGridMismatch("empty history".into()));
    }
    let grid = guide.grid().clone();
    let d = grid.dims();
    let h = opts.dt_traj;
    check_time_grid(source.interval(), h)?;
    let t0 = source.start_time();
    let t_end = opts.t_end.unwrap_or_else(|| source.end_time());
    if t_end > source.end_time() + GRID_TOL * t_end.abs().max(1.0) || t_end < t0 {
        return Err(Error::TimeGridMismatch(format!("t_end = {t_end} outside the history")));
    }
    let steps_f = (t_end - t0) / h;
    if (steps_f - steps_f.round()).abs() > GRID_TOL * steps_f.max(1.0) {
        return Err(Error::TimeGridMismatch(format!("dt_traj = {h} does not divide the span {}", t_end - t0)));
    }
    let steps = steps_f.round() as usize;
    if steps > 0 && source.len() < 2 {
        return Err(Error::TimeGridMismatch("a single snapshot cannot guide a trajectory".into()));
    }
    for q in starts {
        if q.len() != d {
            return Err(Error::GridMismatch(format!("configuration has {} coordinates, grid has {d}", q.len())));
        }
        if !grid.contains(q) {
            return Err(Error::GridMismatch(format!("starting configuration {q:?} lies outside the grid")));
        }
    }
    let mut members: Vec<Member> = starts
        .iter()
        .map(|q| Member {
            q: q.clone(),
            active: true,
            traj: Trajectory {
                samples: vec![Configuration { t: t0, q: q.clone() }],
                termination: Termination::Completed,
                screen_hit: None,
                seed: None,
                scenario: None,
            },
        })
        .collect();
    let mut cache = FrameCache { source, guide, frames: BTreeMap::new() };
    let mut f_now = cache.at(t0)?;
    for n in 0..steps {
        if !members.iter().any(|m| m.active) {
            break;
        }
        let t = t0 + n as f64 * h;
        let t_next = t0 + (n + 1) as f64 * h;
        let f_mid = cache.at(t + 0.5 * h)?;
        let f_next = cache.at(t_next)?;
        let frames = [&*f_now, &*f_mid, &*f_next];
        let record = n + 1 == steps || (opts.record_stride > 0 && (n + 1) % opts.record_stride == 0);
        members.par_iter_mut().filter(|m| m.active).for_each(|m| {
            advance(m, guide, &grid, frames, t, t_next, h, record, opts);
        });
        f_now = f_next;
    }
    Ok(members.into_iter().map(|m| m.traj).collect())
}

#[allow(clippy::too_many_arguments)]
fn advance(
    m: &mut Member,
    guide: &dyn Guidance,
    grid: &Grid,
    frames: [&Frame; 3],
    t: f64,
    t_next: f64,
    h: f64,
    record: bool,
    opts: &IntegrationOptions,
) {
    let mut next = match rk4_step(guide, frames, &m.q, h) {
        Ok(q) => q,
        Err((time, density)) => {
            m.active = false;
            m.traj.termination = Termination::NodeEncountered { time, density };
            m.traj.samples.push(Configuration { t, q: m.q.clone() });
            return;
        }
    };
    if let (Some(screen), None) = (opts.screen, &m.traj.screen_hit) {
        let (a, b) = (m.q[screen.axis] - screen.position, next[screen.axis] - screen.position);
        if a < 0.0 && b >= 0.0 || a > 0.0 && b <= 0.0 {
            let f = a / (a - b);
            let q: Vec<f64> = m.q.iter().zip(&next).map(|(x, y)| x + f * (y - x)).collect();
            m.traj.screen_hit = Some(Configuration { t: t + f * h, q });
        }
    }
    if !grid.contains(&next) {
        match opts.domain {
            DomainPolicy::Wrap => {
                for (j, x) in next.iter_mut().enumerate() {
                    *x = grid.wrap(j, *x);
                }
            }
            DomainPolicy::Terminate => {
                m.active = false;
                m.traj.termination = Termination::LeftDomain { time: t_next };
                m.q = next;
                m.traj.samples.push(Configuration { t: t_next, q: m.q.clone() });
                return;
            }
        }
    }
    m.q = next;
    if record {
        m.traj.samples.push(Configuration { t: t_next, q: m.q.clone() });
    }
}

/// Guiding-equation trajectory from `q0` through the history.
pub fn integrate_trajectory<S: SnapshotSource + ?Sized>(
    q0: &[f64],
    history: &mut S,
    system: &ParticleSystem,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    let grid = history.snapshot(0)?.grid().clone();
    let guide = BohmGuidance::new(grid, system)?;
    Ok(integrate_guided(&[q0.to_vec()], history, &guide, opts)?.remove(0))
}

pub fn integrate_ensemble<S: SnapshotSource + ?Sized>(
    starts: &[Vec<f64>],
    history: &mut S,
    system: &ParticleSystem,
    opts: &IntegrationOptions,
) -> Result<Vec<Trajectory>> {
    let grid = history.snapshot(0)?.grid().clone();
    let guide = BohmGuidance::new(grid, system)?;
    integrate_guided(starts, history, &guide, opts)
}

fn coordinate_header(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|j| format!("x{j}"))
}

/// CSV with header `t,x1,...,xd`.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let d = traj.samples[0].q.len();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("t".to_string()).chain(coordinate_header(d)))?;
    for s in &traj.samples {
        w.write_record(std::iter::once(s.t.to_string()).chain(s.q.iter().map(f64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV with header `member,t,x1,...,xd`, members in order.
pub fn write_trajectories_csv(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let d = trajs.first().map_or(0, |t| t.samples[0].q.len());
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["member".to_string(), "t".to_string()].into_iter().chain(coordinate_header(d)))?;
    for (m, traj) in trajs.iter().enumerate() {
        for s in &traj.samples {
            w.write_record(
                [m.to_string(), s.t.to_string()]
                    .into_iter()
                    .chain(s.q.iter().map(f64::to_string)),
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub member: usize,
    pub seed: Option<u64>,
    pub scenario: Option<String>,
    pub termination: Termination,
    pub screen_hit: Option<Configuration>,
    pub final_time: f64,
}

/// Sidecar JSON with each member's termination reason.
pub fn write_trajectory_summary(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    let rows: Vec<TrajectorySummary> = trajs
        .iter()
        .enumerate()
        .map(|(member, t)| TrajectorySummary {
            member,
            seed: t.seed,
            scenario: t.scenario.clone(),
            termination: t.termination,
            screen_hit: t.screen_hit.clone(),
            final_time: t.last().t,
        })
        .collect();
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &rows)?;
    f.write_all(b"\n")?;
    Ok(())
}
