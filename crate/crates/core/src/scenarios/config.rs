//! JSON scenario documents.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::Screen;
use crate::error::{Error, Result};
use crate::grid::{AxisSpec, ParticleSystem};
use crate::measurement::MeasurementConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub grid: Vec<AxisSpec>,
    pub system: SystemSpec,
    pub potential: PotentialSpec,
    pub initial_state: InitialStateSpec,
    pub schedule: ScheduleSpec,
    pub ensemble: EnsembleSpec,
    pub accuracy: AccuracySpec,
    #[serde(default)]
    pub checks: ChecksSpec,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub masses: Vec<f64>,
    pub dims_per_particle: Vec<usize>,
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one_usize")]
    pub components: usize,
}

fn one() -> f64 {
    1.0
}

fn one_usize() -> usize {
    1
}

impl SystemSpec {
    pub fn build(&self) -> Result<ParticleSystem> {
        ParticleSystem::new(self.masses.clone(), self.dims_per_particle.clone(), self.hbar, self.components)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PotentialSpec {
    Zero,
    /// `Σ_j ½ m_j ω_j² (q_j − c_j)²`.
    Harmonic {
        omega: Vec<f64>,
        #[serde(default)]
        center: Option<Vec<f64>>,
    },
    /// `−λ q_axis σ_z` switched on over `[t_on, t_off)`.
    SpinGradient {
        strength: f64,
        #[serde(default)]
        axis: usize,
        t_on: f64,
        t_off: f64,
    },
}

/// Gaussian packet along one axis; `sigma` is the standard deviation of the density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Packet {
    pub center: f64,
    pub sigma: f64,
    #[serde(default)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slits {
    Both,
    Single,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTerm {
    /// Complex amplitude `[re, im]`.
    #[serde(default = "unit_amplitude")]
    pub amplitude: [f64; 2],
    pub g: Packet,
    pub h: Packet,
}

fn unit_amplitude() -> [f64; 2] {
    [1.0, 0.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialStateSpec {
    /// Product of one packet per axis.
    Gaussian { packets: Vec<Packet> },
    /// Product of oscillator eigenfunctions, one level and frequency per axis.
    HarmonicEigenstate { levels: Vec<usize>, omega: Vec<f64> },
    /// Two coherent Gaussian slit exits at `y = ±separation/2`, moving along x.
    DoubleSlit {
        slits: Slits,
        separation: f64,
        slit_width: f64,
        momentum: f64,
        source_x: f64,
        source_width: f64,
    },
    /// One spatial packet times a constant spinor of `[re, im]` entries.
    SpinorGaussian { packet: Packet, spinor: Vec<[f64; 2]> },
    /// `Σ_i a_i g_i(x₁) h_i(x₂)` for two one-dimensional particles.
    EntangledPair { terms: Vec<PairTerm> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub t_end: f64,
    pub dt: f64,
    pub store_stride: usize,
    pub dt_traj: f64,
}

impl ScheduleSpec {
    pub fn snapshot_interval(&self) -> f64 {
        self.dt * self.store_stride as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub size: usize,
    pub seed: u64,
    /// Number of leading members written to `trajectories.csv`.
    #[serde(default)]
    pub export_trajectories: usize,
    /// Trajectory steps between recorded samples; 0 keeps the endpoints only.
    #[serde(default = "one_usize")]
    pub record_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccuracySpec {
    /// Decreasing time steps for the continuity and convergence ladders.
    pub dt_ladder: Vec<f64>,
    /// Largest probability allowed in the outer cells of every axis at any checked time.
    pub domain_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksSpec {
    pub alpha: f64,
    pub equivariance: bool,
    pub norm_tolerance: f64,
    /// Relative energy drift bound for time-independent potentials.
    pub energy_tolerance: f64,
    /// Relative width error bound for free Gaussian packets.
    pub width_tolerance: f64,
    /// Trajectory deviation from the scaling law, in units of the packet width.
    pub trajectory_tolerance: f64,
    /// Largest density change of a stationary state, relative to its peak.
    pub stationarity_tolerance: f64,
    pub screen: Option<Screen>,
    /// Width of the arrival-histogram bins; defaults to four grid spacings.
    pub histogram_bin_width: Option<f64>,
    pub min_fringes: usize,
    pub nonlocal: Option<NonlocalCheck>,
    pub spin: SpinCheck,
    /// Acceptance band for dt-halving ratios of second-order quantities.
    pub ratio_band: [f64; 2],
}

impl Default for ChecksSpec {
    fn default() -> Self {
        Self {
            alpha: 0.01,
            equivariance: true,
            norm_tolerance: 1e-10,
            energy_tolerance: 1e-6,
            width_tolerance: 1e-6,
            trajectory_tolerance: 1e-4,
            stationarity_tolerance: 1e-4,
            screen: None,
            histogram_bin_width: None,
            min_fringes: 5,
            nonlocal: None,
            spin: SpinCheck::default(),
            ratio_band: [3.5, 4.5],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlocalCheck {
    pub x1: f64,
    pub x2: [f64; 2],
    pub epsilon: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpinCheck {
    /// Largest tolerated overlap `∫|ψ↑||ψ↓|` at the end of the run.
    pub max_overlap: f64,
    /// Density below `gap_level · max ρ` between the clusters counts as the gap.
    pub gap_level: f64,
    pub max_gap_fraction: f64,
    /// Centre-velocity difference required between a balanced spinor and a pure one.
    pub min_velocity_difference: f64,
}

impl Default for SpinCheck {
    fn default() -> Self {
        Self { max_overlap: 1e-6, gap_level: 1e-4, max_gap_fraction: 1e-3, min_velocity_difference: 1e-3 }
    }
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{field}`: {msg}"))
}

/// Parse a JSON document, mapping syntax and schema errors to [`Error::Config`].
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn divides(span: f64, step: f64) -> bool {
    let r = span / step;
    step > 0.0 && (r - r.round()).abs() <= 1e-9 * r.max(1.0) && r.round() >= 1.0
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Semantic checks that need no numerics beyond the config itself.
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(field_error("id", "must not be empty"));
        }
        if self.grid.is_empty() {
            return Err(field_error("grid", "needs at least one axis"));
        }
        for (j, ax) in self.grid.iter().enumerate() {
            if !ax.n.is_power_of_two() || ax.n < 8 {
                return Err(field_error(&format!("grid[{j}].n"), format!("{} is not a power of two ≥ 8", ax.n)));
            }
            if !(ax.b > ax.a) || !ax.a.is_finite() || !ax.b.is_finite() {
                return Err(field_error(&format!("grid[{j}]"), "needs finite a < b"));
            }
        }
        let sys = self.system.build().map_err(|e| field_error("system", e))?;
        if sys.dims() != self.grid.len() {
            return Err(field_error("system.dims_per_particle", format!("sum {} ≠ grid dimension {}", sys.dims(), self.grid.len())));
        }
        let d = self.grid.len();
        match &self.potential {
            PotentialSpec::Zero => {}
            PotentialSpec::Harmonic { omega, center } => {
                if omega.len() != d || omega.iter().any(|w| !(*w > 0.0)) {
                    return Err(field_error("potential.omega", format!("needs {d} positive entries")));
                }
                if center.as_ref().is_some_and(|c| c.len() != d) {
                    return Err(field_error("potential.center", format!("needs {d} entries")));
                }
            }
            PotentialSpec::SpinGradient { strength, axis, t_on, t_off } => {
                if sys.components != 2 {
                    return Err(field_error("system.components", "spin_gradient needs two components"));
                }
                if *axis >= d {
                    return Err(field_error("potential.axis", format!("{axis} ≥ {d}")));
                }
                if !strength.is_finite() || !(t_off > t_on) {
                    return Err(field_error("potential", "needs finite strength and t_on < t_off"));
                }
            }
        }
        let packet_ok = |p: &Packet| p.sigma > 0.0 && p.center.is_finite() && p.momentum.is_finite();
        match &self.initial_state {
            InitialStateSpec::Gaussian { packets } => {
                if packets.len() != d || !packets.iter().all(packet_ok) {
                    return Err(field_error("initial_state.packets", format!("needs {d} packets with positive sigma")));
                }
            }
            InitialStateSpec::HarmonicEigenstate { levels, omega } => {
                if levels.len() != d || omega.len() != d || omega.iter().any(|w| !(*w > 0.0)) {
                    return Err(field_error("initial_state", format!("needs {d} levels and {d} positive frequencies")));
                }
            }
            InitialStateSpec::DoubleSlit { separation, slit_width, source_width, .. } => {
                if d != 2 {
                    return Err(field_error("grid", "double_slit needs two axes"));
                }
                if !(*separation > 0.0 && *slit_width > 0.0 && *source_width > 0.0) {
                    return Err(field_error("initial_state", "separation and widths must be positive"));
                }
            }
            InitialStateSpec::SpinorGaussian { packet, spinor } => {
                if d != 1 || sys.components != spinor.len() {
                    return Err(field_error("initial_state.spinor", "needs a one-axis grid and one entry per component"));
                }
                let norm: f64 = spinor.iter().map(|[r, i]| r * r + i * i).sum();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(field_error("initial_state.spinor", format!("squared norm {norm} ≠ 1")));
                }
                if !packet_ok(packet) {
                    return Err(field_error("initial_state.packet", "sigma must be positive"));
                }
            }
            InitialStateSpec::EntangledPair { terms } => {
                if d != 2 || sys.masses.len() != 2 {
                    return Err(field_error("system", "entangled_pair needs two one-dimensional particles"));
                }
                if terms.len() < 2 || !terms.iter().all(|t| packet_ok(&t.g) && packet_ok(&t.h)) {
                    return Err(field_error("initial_state.terms", "needs at least two terms with positive widths"));
                }
            }
        }
        if sys.components > 1 && !matches!(self.initial_state, InitialStateSpec::SpinorGaussian { .. }) {
            return Err(field_error("system.components", "only spinor_gaussian states carry components"));
        }
        let s = &self.schedule;
        if !(s.dt > 0.0) {
            return Err(field_error("schedule.dt", "must be positive"));
        }
        if !(s.t_end >= 0.0) {
            return Err(field_error("schedule.t_end", "must be non-negative"));
        }
        if s.store_stride == 0 {
            return Err(field_error("schedule.store_stride", "must be at least 1"));
        }
        if s.t_end > 0.0 && !divides(s.t_end, s.dt) {
            return Err(field_error("schedule.dt", format!("{} does not divide t_end = {}", s.dt, s.t_end)));
        }
        let interval = s.snapshot_interval();
        if s.t_end > 0.0 && !divides(s.t_end, interval) {
            return Err(field_error("schedule.store_stride", format!("snapshot interval {interval} does not divide t_end")));
        }
        let h = s.dt_traj;
        if !(h > 0.0) || !(divides(interval, h) || divides(h, 2.0 * interval)) {
            return Err(field_error("schedule.dt_traj", format!("{h} is not commensurate with the snapshot interval {interval}")));
        }
        if s.t_end > 0.0 && !divides(s.t_end, h) {
            return Err(field_error("schedule.dt_traj", format!("{h} does not divide t_end = {}", s.t_end)));
        }
        if self.ensemble.size == 0 {
            return Err(field_error("ensemble.size", "must be positive"));
        }
        let ladder = &self.accuracy.dt_ladder;
        if ladder.len() < 3 || ladder.iter().any(|x| !(*x > 0.0)) || ladder.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(field_error("accuracy.dt_ladder", "needs at least three positive, strictly decreasing steps"));
        }
        if !(self.accuracy.domain_margin > 0.0 && self.accuracy.domain_margin < 1.0) {
            return Err(field_error("accuracy.domain_margin", "must lie in (0, 1)"));
        }
        let c = &self.checks;
        if !(c.alpha > 0.0 && c.alpha < 1.0) {
            return Err(field_error("checks.alpha", "must lie in (0, 1)"));
        }
        if let Some(screen) = c.screen {
            if d != 2 || screen.axis >= d {
                return Err(field_error("checks.screen", "needs a two-axis grid and axis 0 or 1"));
            }
        }
        if c.histogram_bin_width.is_some_and(|w| !(w > 0.0)) {
            return Err(field_error("checks.histogram_bin_width", "must be positive"));
        }
        Ok(())
    }
}

/// A measurement experiment driven by `bohmlab measure`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    pub id: String,
    pub measurement: MeasurementConfig,
    pub runs: usize,
    pub seed: u64,
    #[serde(default)]
    pub post: PostMeasurementSpec,
    pub output_dir: PathBuf,
}

/// Free evolution after the coupling used by the branch and conditional-dynamics checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostMeasurementSpec {
    pub runs: usize,
    pub steps: usize,
    pub dt: f64,
}

impl Default for PostMeasurementSpec {
    fn default() -> Self {
        Self { runs: 100, steps: 100, dt: 0.01 }
    }
}

impl MeasureConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let cfg: Self = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(field_error("id", "must not be empty"));
        }
        if self.runs == 0 {
            return Err(field_error("runs", "must be positive"));
        }
        if !(self.post.dt > 0.0) {
            return Err(field_error("post.dt", "must be positive"));
        }
        Ok(())
    }
}
