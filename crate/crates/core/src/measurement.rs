//! Ideal von Neumann measurements: system ⊗ pointer evolution, registration, collapse and
//! Born statistics, plus post-measurement checks.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate_guided, BohmGuidance, Configuration, Frame, Guidance, IntegrationOptions, Termination, Trajectory, NODE_GUARD,
};
use crate::equilibrium::{derive_seed, refined_marginal, CellSampler, GridCdf};
use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionParams, Potential, Schedule, SnapshotSource, WaveFunctionHistory};
use crate::grid::{density, inner_product, make_grid, normalize, AxisSpec, Grid, ParticleSystem, WaveFunction};
use crate::interp::{cubic_weights, PeriodicTable};
use crate::spectral;
use crate::states;

/// Tail mass left outside a pointer "support" interval.
pub const SUPPORT_TAIL: f64 = 1e-12;
/// Largest tolerated overlap between distinct pointer branches.
pub const OVERLAP_GATE: f64 = 1e-10;
/// Minimum collapse fidelity `|⟨ψ_β|ψ_collapsed⟩|`.
pub const FIDELITY_GATE: f64 = 1.0 - 1e-6;
const ORTHONORMAL_TOL: f64 = 1e-10;

fn c0() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Numerical knobs for the trajectory part of a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNumerics {
    pub snapshot_interval: f64,
    pub dt_traj: f64,
}

pub struct MeasurementSetup {
    x_grid: Arc<Grid>,
    y_grid: Arc<Grid>,
    joint: Arc<Grid>,
    eigenvalues: Vec<f64>,
    eigenstates: Vec<WaveFunction>,
    coefficients: Vec<Complex64>,
    pointer: WaveFunction,
    pointer_hat: Vec<Complex64>,
    coupling: f64,
    duration: f64,
    pointer_mass: f64,
    system_mass: f64,
    hbar: f64,
    support: (f64, f64),
    width: f64,
    numerics: MeasurementNumerics,
}

#[allow(clippy::too_many_arguments)]
impl MeasurementSetup {
    pub fn new(
        eigenvalues: Vec<f64>,
        eigenstates: Vec<WaveFunction>,
        coefficients: Vec<Complex64>,
        pointer: WaveFunction,
        coupling: f64,
        duration: f64,
        pointer_mass: f64,
        system_mass: f64,
        hbar: f64,
        numerics: MeasurementNumerics,
    ) -> Result<Self> {
        let k = eigenvalues.len();
        if k == 0 || eigenstates.len() != k || coefficients.len() != k {
            return Err(Error::InvalidSystem("eigenvalues, eigenstates and coefficients must match".into()));
        }
        for i in 0..k {
            for j in 0..i {
                if eigenvalues[i] == eigenvalues[j] {
                    return Err(Error::InvalidSystem(format!("degenerate eigenvalue {}", eigenvalues[i])));
                }
            }
        }
        if !(coupling > 0.0) || !(duration > 0.0) || !(pointer_mass > 0.0) || !(system_mass > 0.0) || !(hbar > 0.0) {
            return Err(Error::InvalidSystem("coupling, duration, masses and hbar must be positive".into()));
        }
        let total: f64 = coefficients.iter().map(|c| c.norm_sqr()).sum();
        if (total - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidSystem(format!("coefficients have squared norm {total}")));
        }
        let x_grid = eigenstates[0].grid().clone();
        let y_grid = pointer.grid().clone();
        if x_grid.dims() != 1 || y_grid.dims() != 1 {
            return Err(Error::GridMismatch("system and pointer grids must be one-dimensional".into()));
        }
        check_orthonormal(&eigenstates)?;
        if (pointer.norm() - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::ZeroNorm(pointer.norm()));
        }
        let joint = make_grid(&[*x_grid.axis(0), *y_grid.axis(0)])?;
        let mut pointer_hat = pointer.data().to_vec();
        y_grid.spectral().forward(&mut pointer_hat);
        let (h, marg) = refined_marginal(&pointer, 0, 8);
        let cdf = GridCdf::from_nodes(y_grid.axis(0).a, h, &marg);
        let support = (cdf.quantile(SUPPORT_TAIL / 2.0), cdf.quantile(1.0 - SUPPORT_TAIL / 2.0));
        let width = fwhm(y_grid.axis(0).a, h, &marg);
        let setup = Self {
            x_grid,
            y_grid,
            joint,
            eigenvalues,
            eigenstates,
            coefficients,
            pointer,
            pointer_hat,
            coupling,
            duration,
            pointer_mass,
            system_mass,
            hbar,
            support,
            width,
            numerics,
        };
        let sep = setup.min_separation();
        if sep < 8.0 * width {
            return Err(Error::SeparationTooSmall(format!(
                "pointer displacement gap {sep} is below 8 pointer widths ({})",
                8.0 * width
            )));
        }
        Ok(setup)
    }

    pub fn from_config(cfg: &MeasurementConfig) -> Result<Self> {
        let x_grid = make_grid(&[cfg.x])?;
        let y_grid = make_grid(&[cfg.y])?;
        let eigenstates = cfg
            .levels
            .iter()
            .map(|&n| {
                let w = WaveFunction::from_fn(x_grid.clone(), |q| {
                    Complex64::new(states::hermite_function(n, q[0], cfg.system_mass, cfg.omega, cfg.hbar), 0.0)
                })?;
                normalize(&w)
            })
            .collect::<Result<Vec<_>>>()?;
        let pointer = normalize(&WaveFunction::from_fn(y_grid, |q| {
            states::gaussian(q[0], cfg.pointer_center, cfg.pointer_width, 0.0)
        })?)?;
        let coefficients = cfg.coefficients.iter().map(|c| Complex64::new(c[0], c[1])).collect();
        Self::new(
            cfg.eigenvalues.clone(),
            eigenstates,
            coefficients,
            pointer,
            cfg.coupling,
            cfg.duration,
            cfg.pointer_mass,
            cfg.system_mass,
            cfg.hbar,
            MeasurementNumerics { snapshot_interval: cfg.snapshot_interval, dt_traj: cfg.dt_traj },
        )
    }

    pub fn x_grid(&self) -> &Arc<Grid> {
        &self.x_grid
    }

    pub fn y_grid(&self) -> &Arc<Grid> {
        &self.y_grid
    }

    pub fn joint_grid(&self) -> &Arc<Grid> {
        &self.joint
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenstates(&self) -> &[WaveFunction] {
        &self.eigenstates
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    pub fn pointer(&self) -> &WaveFunction {
        &self.pointer
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn duration(&self) -> f64 {
        self.duration
    }

    pub fn numerics(&self) -> MeasurementNumerics {
        self.numerics
    }

    /// Full width at half maximum of `|φ₀|²`.
    pub fn pointer_width(&self) -> f64 {
        self.width
    }

    /// Born weights `|c_α|²`.
    pub fn predictions(&self) -> Vec<f64> {
        self.coefficients.iter().map(|c| c.norm_sqr()).collect()
    }

    /// Smallest pointer displacement difference `λτ|α_i − α_j|`.
    pub fn min_separation(&self) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..self.eigenvalues.len() {
            for j in 0..i {
                m = m.min(self.coupling * self.duration * (self.eigenvalues[i] - self.eigenvalues[j]).abs());
            }
        }
        m
    }

    /// System ⊗ pointer particle content used after the coupling.
    pub fn joint_system(&self) -> ParticleSystem {
        ParticleSystem {
            masses: vec![self.system_mass, self.pointer_mass],
            dims_per_particle: vec![1, 1],
            hbar: self.hbar,
            components: 1,
        }
    }

    fn shift(&self, alpha: usize, t: f64) -> f64 {
        self.coupling * t * self.eigenvalues[alpha]
    }

    /// Interval carrying all but `SUPPORT_TAIL` of branch `alpha`'s pointer mass at time `t`.
    pub fn pointer_support(&self, alpha: usize, t: f64) -> (f64, f64) {
        let s = self.shift(alpha, t);
        (self.support.0 + s, self.support.1 + s)
    }

    /// Pointer packet rigidly translated by `d` (spectral shift on the periodic y grid).
    pub fn shifted_pointer(&self, d: f64) -> Vec<Complex64> {
        let k = self.y_grid.wavenumbers(0);
        let mut hat: Vec<Complex64> = self
            .pointer_hat
            .iter()
            .zip(k)
            .map(|(z, &kk)| z * Complex64::new(0.0, -kk * d).exp())
            .collect();
        self.y_grid.spectral().inverse(&mut hat);
        hat
    }

    fn product(&self, system: &[Complex64], pointer: &[Complex64], scale: Complex64) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(system.len() * pointer.len());
        for s in system {
            let f = s * scale;
            out.extend(pointer.iter().map(|p| f * p));
        }
        out
    }

    /// Branch `c_α ψ_α(x) φ₀(y − λtα)` on the joint grid.
    pub fn branch(&self, alpha: usize, t: f64) -> Result<WaveFunction> {
        let phi = self.shifted_pointer(self.shift(alpha, t));
        let data = self.product(self.eigenstates[alpha].data(), &phi, self.coefficients[alpha]);
        WaveFunction::new(self.joint.clone(), 1, data, t)
    }

    /// Largest pairwise overlap `∫|φ_α||φ_β| dy` between translated pointer packets.
    pub fn pointer_overlap(&self, t: f64) -> f64 {
        let k = self.eigenvalues.len();
        let phis: Vec<Vec<Complex64>> = (0..k).map(|a| self.shifted_pointer(self.shift(a, t))).collect();
        let dy = self.y_grid.spacing(0);
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..i {
                let o: f64 = phis[i].iter().zip(&phis[j]).map(|(a, b)| a.norm() * b.norm()).sum::<f64>() * dy;
                worst = worst.max(o);
            }
        }
        worst
    }

    fn superposition(&self, t: f64) -> Vec<Complex64> {
        let mut data = vec![c0(); self.joint.len()];
        for alpha in 0..self.eigenvalues.len() {
            let phi = self.shifted_pointer(self.shift(alpha, t));
            let b = self.product(self.eigenstates[alpha].data(), &phi, self.coefficients[alpha]);
            data.iter_mut().zip(&b).for_each(|(d, v)| *d += v);
        }
        data
    }

    /// `Ψ_t = Σ_α c_α ψ_α(x) φ₀(y − λtα)` for `t ∈ [0, τ]`.
    pub fn premeasurement_unitary(&self, t: f64) -> Result<WaveFunction> {
        if !(0.0..=self.duration * (1.0 + 1e-12)).contains(&t) {
            return Err(Error::InvalidSchedule(format!("t = {t} outside [0, {}]", self.duration)));
        }
        let data = self.superposition(t);
        if (t - self.duration).abs() <= 1e-12 * self.duration {
            let overlap = self.pointer_overlap(t);
            if overlap > OVERLAP_GATE {
                return Err(Error::SeparationGateFailed(format!("branch overlap {overlap:e} at t = {t}")));
            }
        }
        normalize(&WaveFunction::new(self.joint.clone(), 1, data, t)?)
    }

    /// `(AΨ)(x, y)` with `A = Σ α |ψ_α⟩⟨ψ_α|` acting on x.
    pub fn apply_observable(&self, psi: &WaveFunction) -> Vec<Complex64> {
        let nx = self.x_grid.n(0);
        let ny = self.y_grid.n(0);
        let dx = self.x_grid.spacing(0);
        let data = psi.data();
        let mut out = vec![c0(); nx * ny];
        for (alpha, state) in self.eigenstates.iter().enumerate() {
            let e = state.data();
            let mut proj = vec![c0(); ny];
            for ix in 0..nx {
                let w = e[ix].conj() * dx;
                for (p, v) in proj.iter_mut().zip(&data[ix * ny..(ix + 1) * ny]) {
                    *p += w * v;
                }
            }
            let a = self.eigenvalues[alpha];
            for ix in 0..nx {
                let w = e[ix] * a;
                for (o, p) in out[ix * ny..(ix + 1) * ny].iter_mut().zip(&proj) {
                    *o += w * p;
                }
            }
        }
        out
    }

    /// Index of the branch whose pointer support at `t` contains `y`.
    pub fn register(&self, y: f64, t: f64) -> Result<usize> {
        let hits: Vec<usize> = (0..self.eigenvalues.len())
            .filter(|&a| {
                let (lo, hi) = self.pointer_support(a, t);
                y >= lo && y <= hi
            })
            .collect();
        match hits.as_slice() {
            [b] => Ok(*b),
            _ => Err(Error::AmbiguousPointer(y)),
        }
    }

    /// The reference two-outcome setup: oscillator levels 0 and 1 measured with eigenvalues ∓1.
    pub fn reference(coefficients: [Complex64; 2]) -> Result<Self> {
        let mut cfg = MeasurementConfig::reference();
        cfg.coefficients = coefficients.iter().map(|c| [c.re, c.im]).collect();
        Self::from_config(&cfg)
    }
}

fn check_orthonormal(states: &[WaveFunction]) -> Result<()> {
    let mut worst = 0.0f64;
    for (i, a) in states.iter().enumerate() {
        for (j, b) in states.iter().enumerate().take(i + 1) {
            let ip = inner_product(a, b)?;
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((ip - target).norm());
        }
    }
    if worst > ORTHONORMAL_TOL {
        return Err(Error::NonOrthonormalBasis(worst));
    }
    Ok(())
}

fn fwhm(a: f64, h: f64, rho: &[f64]) -> f64 {
    let (imax, &max) = rho.iter().enumerate().fold((0, &f64::MIN), |b, (i, r)| if r > b.1 { (i, r) } else { b });
    let half = max / 2.0;
    let mut lo = imax;
    while lo > 0 && rho[lo - 1] >= half {
        lo -= 1;
    }
    let mut hi = imax;
    while hi + 1 < rho.len() && rho[hi + 1] >= half {
        hi += 1;
    }
    let left = if lo > 0 { lo as f64 - (rho[lo] - half) / (rho[lo] - rho[lo - 1]) } else { 0.0 };
    let right = if hi + 1 < rho.len() { hi as f64 + (rho[hi] - half) / (rho[hi] - rho[hi + 1]) } else { (rho.len() - 1) as f64 };
    let _ = a;
    (right - left) * h
}

/// Serializable description of a measurement setup with oscillator eigenstates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    pub x: AxisSpec,
    pub y: AxisSpec,
    #[serde(default = "unit")]
    pub system_mass: f64,
    #[serde(default = "unit")]
    pub hbar: f64,
    /// Oscillator frequency defining the eigenstates.
    pub omega: f64,
    /// Oscillator levels used as eigenstates.
    pub levels: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// `[re, im]` per branch.
    pub coefficients: Vec<[f64; 2]>,
    /// Standard deviation of `|φ₀|²`.
    pub pointer_width: f64,
    #[serde(default)]
    pub pointer_center: f64,
    pub coupling: f64,
    pub duration: f64,
    pub pointer_mass: f64,
    pub snapshot_interval: f64,
    pub dt_traj: f64,
}

fn unit() -> f64 {
    1.0
}

impl MeasurementConfig {
    pub fn reference() -> Self {
        Self {
            x: AxisSpec::new(64, -8.0, 8.0),
            y: AxisSpec::new(256, -8.0, 8.0),
            system_mass: 1.0,
            hbar: 1.0,
            omega: 1.0,
            levels: vec![0, 1],
            eigenvalues: vec![-1.0, 1.0],
            coefficients: vec![[0.6, 0.0], [0.8, 0.0]],
            pointer_width: 0.25,
            pointer_center: 0.0,
            coupling: 1.0,
            duration: 2.5,
            pointer_mass: 50.0,
            snapshot_interval: 0.025,
            dt_traj: 0.0125,
        }
    }
}

/// Guidance generated by the coupling `H = λ A p_y`.
///
/// `J_y = λ Re(Ψ* AΨ)` and `J_x` is fixed by continuity, `∂_x J_x = λ Re(∂_yΨ* AΨ − Ψ* ∂_y AΨ)`,
/// with `J_x = 0` at the left edge of the x grid.
pub struct CouplingGuidance<'a> {
    setup: &'a MeasurementSetup,
}

impl<'a> CouplingGuidance<'a> {
    pub fn new(setup: &'a MeasurementSetup) -> Self {
        Self { setup }
    }

    /// `(ρ, J_x, J_y)` on the joint grid.
    pub fn current(&self, psi: &WaveFunction) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let grid = &self.setup.joint;
        let lam = self.setup.coupling;
        let a_psi = self.setup.apply_observable(psi);
        let dy_psi = spectral::derivative_along(grid, psi.data(), 1);
        let dy_a = spectral::derivative_along(grid, &a_psi, 1);
        let p = psi.data();
        let rho: Vec<f64> = p.iter().map(|z| z.norm_sqr()).collect();
        let jy: Vec<f64> = p.iter().zip(&a_psi).map(|(z, a)| lam * (z.conj() * a).re).collect();
        let s: Vec<f64> = (0..p.len())
            .map(|i| (dy_psi[i].conj() * a_psi[i] - p[i].conj() * dy_a[i]).re)
            .collect();
        let jx: Vec<f64> = spectral::antiderivative_along(grid, &s, 0).iter().map(|v| -lam * v).collect();
        (rho, jx, jy)
    }
}

impl Guidance for CouplingGuidance<'_> {
    fn grid(&self) -> &Arc<Grid> {
        &self.setup.joint
    }

    fn nfields(&self) -> usize {
        3
    }

    fn frame(&self, psi: &WaveFunction) -> Result<Frame> {
        let (rho, jx, jy) = self.current(psi);
        let max_rho = rho.iter().fold(0.0f64, |m, &r| m.max(r));
        let fields = rho
            .iter()
            .chain(&jx)
            .chain(&jy)
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        Ok(Frame { time: psi.time(), nfields: 3, fields, max_rho })
    }

    fn velocity(&self, values: &[Complex64], eps: f64, out: &mut [f64]) -> std::result::Result<(), f64> {
        let rho = values[0].re;
        if !(rho > eps) {
            return Err(rho);
        }
        out[0] = values[1].re / rho;
        out[1] = values[2].re / rho;
        Ok(())
    }
}

/// Spectral oversampling used for the pointwise premeasurement field.
const REFINE: usize = 16;

/// Pointwise evaluation of the premeasurement state and its coupling current.
///
/// Branch amplitudes, the pointer and its derivative, and the x-antiderivatives
/// `I_ab(x) = ∫ ψ_a* ψ_b` are tabulated on refined grids and interpolated, so that
/// `ρ = |Ψ|²` is never negative and `v = J/ρ` is formed from interpolated amplitudes.
pub struct PremeasurementField {
    chi: Vec<PeriodicTable<Complex64>>,
    integrals: Vec<(usize, usize, PeriodicTable<Complex64>)>,
    phi: PeriodicTable<Complex64>,
    dphi: PeriodicTable<Complex64>,
    coefficients: Vec<Complex64>,
    eigenvalues: Vec<f64>,
    coupling: f64,
    eps: f64,
}

impl PremeasurementField {
    pub fn new(setup: &MeasurementSetup) -> Result<Self> {
        let xa = *setup.x_grid.axis(0);
        let ya = *setup.y_grid.axis(0);
        let hx = setup.x_grid.spacing(0) / REFINE as f64;
        let hy = setup.y_grid.spacing(0) / REFINE as f64;
        let lx = setup.x_grid.length(0);
        let ly = setup.y_grid.length(0);
        let chi = setup
            .eigenstates
            .iter()
            .map(|e| PeriodicTable::new(xa.a, hx, spectral::refine_periodic(e.data(), lx, REFINE, false)))
            .collect();
        let k = setup.eigenvalues.len();
        let mut integrals = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                let prod: Vec<Complex64> = setup.eigenstates[a]
                    .data()
                    .iter()
                    .zip(setup.eigenstates[b].data())
                    .map(|(u, v)| u.conj() * v)
                    .collect();
                let re: Vec<f64> = prod.iter().map(|z| z.re).collect();
                let im: Vec<f64> = prod.iter().map(|z| z.im).collect();
                let ire = spectral::antiderivative_along(&setup.x_grid, &re, 0);
                let iim = spectral::antiderivative_along(&setup.x_grid, &im, 0);
                let coarse: Vec<Complex64> = ire.iter().zip(&iim).map(|(&r, &i)| Complex64::new(r, i)).collect();
                integrals.push((a, b, PeriodicTable::new(xa.a, hx, spectral::refine_periodic(&coarse, lx, REFINE, false))));
            }
        }
        let phi = PeriodicTable::new(ya.a, hy, spectral::refine_periodic(setup.pointer.data(), ly, REFINE, false));
        let dphi = PeriodicTable::new(ya.a, hy, spectral::refine_periodic(setup.pointer.data(), ly, REFINE, true));
        let raw = WaveFunction::new(setup.joint.clone(), 1, setup.superposition(0.0), 0.0)?;
        let scale = 1.0 / raw.norm();
        let max_rho = raw.data().iter().fold(0.0f64, |m, z| m.max(z.norm_sqr())) * scale * scale;
        Ok(Self {
            chi,
            integrals,
            phi,
            dphi,
            coefficients: setup.coefficients.iter().map(|c| c * scale).collect(),
            eigenvalues: setup.eigenvalues.clone(),
            coupling: setup.coupling,
            eps: NODE_GUARD * max_rho,
        })
    }

    /// `Ψ_t(x, y)`.
    pub fn amplitude(&self, t: f64, x: f64, y: f64) -> Complex64 {
        (0..self.chi.len()).fold(c0(), |acc, a| {
            let s = self.coupling * t * self.eigenvalues[a];
            acc + self.coefficients[a] * self.chi[a].eval(x) * self.phi.eval(y - s)
        })
    }

    /// `(ρ, J_x, J_y)` at `(x, y)` and time `t`.
    pub fn current(&self, t: f64, x: f64, y: f64) -> (f64, f64, f64) {
        let k = self.chi.len();
        let lam = self.coupling;
        let mut psi = c0();
        let mut a_psi = c0();
        let mut phis = Vec::with_capacity(k);
        for a in 0..k {
            let s = lam * t * self.eigenvalues[a];
            let (p, dp) = (self.phi.eval(y - s), self.dphi.eval(y - s));
            let term = self.coefficients[a] * self.chi[a].eval(x) * p;
            psi += term;
            a_psi += term * self.eigenvalues[a];
            phis.push((p, dp));
        }
        let rho = psi.norm_sqr();
        let jy = lam * (psi.conj() * a_psi).re;
        let mut jx = 0.0;
        for (a, b, table) in &self.integrals {
            let (pa, dpa) = phis[*a];
            let (pb, dpb) = phis[*b];
            let w = self.coefficients[*a].conj() * self.coefficients[*b] * self.eigenvalues[*b];
            jx -= lam * (w * (dpa.conj() * pb - pa.conj() * dpb) * table.eval(x)).re;
        }
        (rho, jx, jy)
    }

    /// Guiding velocity `J/ρ`, or the offending density below the node guard.
    pub fn velocity(&self, t: f64, q: &[f64]) -> std::result::Result<[f64; 2], f64> {
        let (rho, jx, jy) = self.current(t, q[0], q[1]);
        if !(rho > self.eps) {
            return Err(rho);
        }
        Ok([jx / rho, jy / rho])
    }
}

/// Absolute tolerance of the adaptive premeasurement integrator.
const TRAJECTORY_TOL: f64 = 1e-9;
/// Step attempts allowed per run before it is declared stuck at a node.
const MAX_ATTEMPTS: usize = 1_000_000;
/// Time gap below which a sample time counts as reached.
const TIME_SNAP: f64 = 1e-12;

const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Right-hand side in the time `ds = dt/ρ`: `d(x, y, t)/ds = (J_x, J_y, ρ)`.
fn reparametrized_rhs(field: &PremeasurementField, z: [f64; 3]) -> [f64; 3] {
    let (rho, jx, jy) = field.current(z[2], z[0], z[1]);
    [jx, jy, rho]
}

/// One Dormand–Prince attempt of size `h` from `z` with FSAL slope `k0`.
/// Returns the fifth-order update, the scaled error and the slope at the new point.
fn dp_attempt(field: &PremeasurementField, z: [f64; 3], k0: [f64; 3], h: f64) -> ([f64; 3], f64, [f64; 3]) {
    let mut k = [[0.0f64; 3]; 7];
    k[0] = k0;
    let mut next = z;
    for s in 1..7 {
        let mut p = z;
        for (j, kj) in k.iter().enumerate().take(s) {
            for d in 0..3 {
                p[d] += h * DP_A[s][j] * kj[d];
            }
        }
        k[s] = reparametrized_rhs(field, p);
        if s == 6 {
            next = p;
        }
    }
    let mut err = 0.0f64;
    for d in 0..3 {
        let e: f64 = (0..7).map(|s| DP_E[s] * k[s][d]).sum::<f64>() * h;
        err = err.max(e.abs() / TRAJECTORY_TOL);
    }
    (next, err, k[6])
}

/// Joint trajectory through the coupling window, sampled on the `h_out` lattice.
///
/// The guidance `v = J/ρ` is integrated in the time `s` with `dt = ρ ds`, which traces the same
/// curves where `ρ > 0` and carries a configuration across a node when the current through it
/// does not vanish. A run whose progress in `t` stalls is reported as a node hit.
fn premeasurement_trajectory(
    field: &PremeasurementField,
    grid: &Grid,
    q0: &[f64],
    steps: usize,
    h_out: f64,
    record_stride: usize,
) -> Trajectory {
    let mut z = [q0[0], q0[1], 0.0];
    let mut traj = Trajectory {
        samples: vec![Configuration { t: 0.0, q: q0.to_vec() }],
        termination: Termination::Completed,
        screen_hit: None,
        seed: None,
        scenario: None,
    };
    let mut k0 = reparametrized_rhs(field, z);
    let mut h = h_out / k0[2].max(field.eps);
    let mut budget = MAX_ATTEMPTS;
    for n in 0..steps {
        let t_stop = (n + 1) as f64 * h_out;
        loop {
            let remaining = t_stop - z[2];
            if remaining <= TIME_SNAP {
                z[2] = t_stop;
                break;
            }
            if budget == 0 || !(h > 0.0) {
                let (rho, _, _) = field.current(z[2], z[0], z[1]);
                traj.termination = Termination::NodeEncountered { time: z[2], density: rho };
                traj.samples.push(Configuration { t: z[2], q: vec![z[0], z[1]] });
                return traj;
            }
            budget -= 1;
            let (next, err, k_next) = dp_attempt(field, z, k0, h);
            if !(err <= 1.0) {
                h *= if err.is_finite() { (0.9 * err.powf(-0.2)).clamp(0.1, 0.9) } else { 0.1 };
                continue;
            }
            let dt = next[2] - z[2];
            if dt > remaining + TIME_SNAP {
                h *= remaining / dt;
                continue;
            }
            z = next;
            k0 = k_next;
            let grow = if err > 0.0 { (0.9 * err.powf(-0.2)).min(5.0) } else { 5.0 };
            h = (h * grow).min(h_out / k0[2].max(field.eps));
        }
        z[0] = grid.wrap(0, z[0]);
        z[1] = grid.wrap(1, z[1]);
        if n + 1 == steps || (record_stride > 0 && (n + 1) % record_stride == 0) {
            traj.samples.push(Configuration { t: t_stop, q: vec![z[0], z[1]] });
        }
    }
    traj
}

/// Snapshots of the premeasurement evolution on `[0, τ]`, generated on demand.
pub struct PremeasurementHistory<'a> {
    setup: &'a MeasurementSetup,
    interval: f64,
    count: usize,
}

impl<'a> PremeasurementHistory<'a> {
    pub fn new(setup: &'a MeasurementSetup) -> Result<Self> {
        let h = setup.numerics.snapshot_interval;
        let steps = setup.duration / h;
        if !(h > 0.0) || (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidSchedule(format!(
                "snapshot interval {h} does not divide the coupling time {}",
                setup.duration
            )));
        }
        Ok(Self { setup, interval: h, count: steps.round() as usize + 1 })
    }
}

impl SnapshotSource for PremeasurementHistory<'_> {
    fn len(&self) -> usize {
        self.count
    }

    fn start_time(&self) -> f64 {
        0.0
    }

    fn interval(&self) -> f64 {
        self.interval
    }

    fn snapshot(&mut self, index: usize) -> Result<Arc<WaveFunction>> {
        if index >= self.count {
            return Err(Error::TimeGridMismatch(format!("snapshot {index} beyond the coupling window")));
        }
        let t = if index + 1 == self.count { self.setup.duration } else { index as f64 * self.interval };
        Ok(Arc::new(self.setup.premeasurement_unitary(t)?))
    }
}

/// Slice `Ψ(x, Y)` by cubic interpolation across y, with its norm.
pub fn conditional_wavefunction(joint: &WaveFunction, y: f64) -> Result<(WaveFunction, f64)> {
    let grid = joint.grid();
    if grid.dims() != 2 || joint.components() != 1 {
        return Err(Error::GridMismatch("conditional slices need a scalar two-axis wave function".into()));
    }
    let ay = grid.axis(1);
    if !(y >= ay.a && y < ay.b) {
        return Err(Error::GridMismatch(format!("Y = {y} outside the pointer domain")));
    }
    let x_grid = grid.sub_grid(0..1)?;
    let ny = ay.n;
    let u = (y - ay.a) / grid.spacing(1);
    let base = u.floor();
    let w = cubic_weights(u - base);
    let idx: Vec<usize> = (0..4).map(|s| (base as i64 - 1 + s as i64).rem_euclid(ny as i64) as usize).collect();
    let data: Vec<Complex64> = (0..grid.n(0))
        .map(|ix| (0..4).fold(c0(), |acc, s| acc + joint.data()[ix * ny + idx[s]] * w[s]))
        .collect();
    let slice = WaveFunction::new(x_grid, 1, data, joint.time())?;
    let norm = slice.norm();
    if !(norm >= 1e-150) {
        return Err(Error::ZeroNorm(norm));
    }
    Ok((slice, norm))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PvmExpectation {
    pub probabilities: Vec<f64>,
    pub mean: f64,
}

/// Outcome probabilities `|⟨ψ_α|ψ⟩|²` and `⟨ψ|A|ψ⟩`.
pub fn pvm_expectation(psi: &WaveFunction, eigenstates: &[WaveFunction], eigenvalues: &[f64]) -> Result<PvmExpectation> {
    if eigenstates.len() != eigenvalues.len() {
        return Err(Error::InvalidSystem("one eigenvalue per eigenstate".into()));
    }
    check_orthonormal(eigenstates)?;
    let probabilities = eigenstates
        .iter()
        .map(|e| inner_product(e, psi).map(|z| z.norm_sqr()))
        .collect::<Result<Vec<_>>>()?;
    let mean = probabilities.iter().zip(eigenvalues).map(|(p, a)| p * a).sum();
    Ok(PvmExpectation { probabilities, mean })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveCheck {
    /// `‖Ψ − ψφ − Φ‖ / ‖Ψ‖`.
    pub residual: f64,
    /// `∫ √(p_φ p_Φ) dy` of the normalized y-marginals.
    pub overlap: f64,
    pub support: (f64, f64),
    pub y_in_support: bool,
    pub passed: bool,
}

/// Certify `ψ` as the effective wave function of `Ψ = ψφ + Φ` given the pointer position `y`.
pub fn effective_wavefunction_check(
    joint: &WaveFunction,
    psi: &WaveFunction,
    phi: &WaveFunction,
    rest: &WaveFunction,
    y: f64,
) -> Result<EffectiveCheck> {
    let grid = joint.grid();
    let ny = grid.n(1);
    let mut diff = 0.0;
    for ix in 0..grid.n(0) {
        for iy in 0..ny {
            let i = ix * ny + iy;
            diff += (joint.data()[i] - psi.data()[ix] * phi.data()[iy] - rest.data()[i]).norm_sqr();
        }
    }
    let residual = (diff * grid.cell_volume()).sqrt() / joint.norm();
    let p_phi: Vec<f64> = phi.data().iter().map(|z| z.norm_sqr()).collect();
    let p_rest = density(rest).marginal(1);
    let (s1, s2): (f64, f64) = (p_phi.iter().sum(), p_rest.iter().sum());
    let overlap = if s2 > 0.0 {
        p_phi.iter().zip(&p_rest).map(|(a, b)| (a / s1 * b / s2).sqrt()).sum::<f64>()
    } else {
        0.0
    };
    let (h, marg) = refined_marginal(phi, 0, 8);
    let cdf = GridCdf::from_nodes(phi.grid().axis(0).a, h, &marg);
    let support = (cdf.quantile(SUPPORT_TAIL / 2.0), cdf.quantile(1.0 - SUPPORT_TAIL / 2.0));
    let y_in_support = y >= support.0 && y <= support.1;
    Ok(EffectiveCheck {
        residual,
        overlap,
        support,
        y_in_support,
        passed: residual < 1e-10 && overlap < OVERLAP_GATE && y_in_support,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollapseResult {
    pub seed: u64,
    pub outcome: usize,
    pub eigenvalue: f64,
    /// Pointer position `Y_τ`.
    pub pointer_position: f64,
    pub system_position: f64,
    /// Registered-branch conditional wave function, normalized.
    #[serde(skip)]
    pub collapsed: Option<WaveFunction>,
    /// `|𝒩|`, the norm of the raw slice `Ψ_τ(·, Y_τ)`.
    pub normalization: f64,
    pub fidelity: f64,
    pub discarded_mass: f64,
    pub trajectory: Trajectory,
}

/// Run one or more ideal measurements in lockstep. Each entry is that run's result.
pub fn run_measurements(setup: &MeasurementSetup, seeds: &[u64], record_stride: usize) -> Result<Vec<Result<CollapseResult>>> {
    let psi0 = setup.premeasurement_unitary(0.0)?;
    let psi_tau = setup.premeasurement_unitary(setup.duration)?;
    let sampler = CellSampler::new(&density(&psi0))?;
    let starts: Vec<Vec<f64>> = seeds.iter().map(|&s| sampler.draw(s, 0)).collect();
    let h = setup.numerics.dt_traj;
    let steps_f = setup.duration / h;
    if !(h > 0.0) || (steps_f - steps_f.round()).abs() > 1e-9 * steps_f.max(1.0) {
        return Err(Error::TimeGridMismatch(format!("dt_traj = {h} does not divide the coupling time {}", setup.duration)));
    }
    let steps = steps_f.round() as usize;
    let field = PremeasurementField::new(setup)?;
    let trajs: Vec<Trajectory> = starts
        .par_iter()
        .map(|q| premeasurement_trajectory(&field, &setup.joint, q, steps, h, record_stride))
        .collect();
    let predictions = setup.predictions();
    Ok(trajs
        .into_par_iter()
        .zip(seeds.par_iter())
        .map(|(mut traj, &seed)| {
            traj.seed = Some(seed);
            if let Termination::NodeEncountered { time, density } = traj.termination {
                return Err(Error::NodeEncountered { time, density });
            }
            let end = traj.last().q.clone();
            let beta = setup.register(end[1], setup.duration)?;
            let (slice, norm) = conditional_wavefunction(&psi_tau, end[1])?;
            let collapsed = normalize(&slice)?;
            let fidelity = inner_product(&setup.eigenstates[beta], &collapsed)?.norm();
            if !(fidelity > FIDELITY_GATE) {
                return Err(Error::CollapseFidelity(fidelity));
            }
            Ok(CollapseResult {
                seed,
                outcome: beta,
                eigenvalue: setup.eigenvalues[beta],
                pointer_position: end[1],
                system_position: end[0],
                collapsed: Some(collapsed),
                normalization: norm,
                fidelity,
                discarded_mass: 1.0 - predictions[beta],
                trajectory: traj,
            })
        })
        .collect())
}

/// Single ideal measurement with initial configuration drawn from `|Ψ₀|²` under `seed`.
pub fn run_ideal_measurement(setup: &MeasurementSetup, seed: u64) -> Result<CollapseResult> {
    run_measurements(setup, &[seed], 1)?.remove(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub outcome: Option<usize>,
    pub pointer_position: Option<f64>,
    pub fidelity: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BornReport {
    pub runs: usize,
    pub seed: u64,
    pub counts: Vec<usize>,
    pub frequencies: Vec<f64>,
    pub predictions: Vec<f64>,
    pub z_scores: Vec<f64>,
    pub failed_runs: usize,
    pub min_fidelity: f64,
    pub passed: bool,
    pub records: Vec<RunRecord>,
}

/// `n_runs` independent measurements with sub-seeds derived from `seed`.
pub fn born_statistics(setup: &MeasurementSetup, n_runs: usize, seed: u64) -> Result<(BornReport, Vec<CollapseResult>)> {
    if n_runs < 100 {
        return Err(Error::Config(format!("born statistics need at least 100 runs, got {n_runs}")));
    }
    let seeds: Vec<u64> = (0..n_runs as u64).map(|r| derive_seed(seed, r)).collect();
    let results = run_measurements(setup, &seeds, 0)?;
    let k = setup.eigenvalues.len();
    let mut counts = vec![0usize; k];
    let mut records = Vec::with_capacity(n_runs);
    let mut ok = Vec::with_capacity(n_runs);
    let mut min_fidelity = 1.0f64;
    for (res, &s) in results.into_iter().zip(&seeds) {
        match res {
            Ok(r) => {
                counts[r.outcome] += 1;
                min_fidelity = min_fidelity.min(r.fidelity);
                records.push(RunRecord {
                    seed: s,
                    outcome: Some(r.outcome),
                    pointer_position: Some(r.pointer_position),
                    fidelity: Some(r.fidelity),
                    error: None,
                });
                ok.push(r);
            }
            Err(e) => records.push(RunRecord { seed: s, outcome: None, pointer_position: None, fidelity: None, error: Some(e.to_string()) }),
        }
    }
    let valid = ok.len();
    let predictions = setup.predictions();
    let frequencies: Vec<f64> = counts.iter().map(|&c| c as f64 / valid.max(1) as f64).collect();
    let z_scores: Vec<f64> = frequencies
        .iter()
        .zip(&predictions)
        .map(|(f, p)| {
            let se = (p * (1.0 - p) / valid.max(1) as f64).sqrt();
            if se > 0.0 { (f - p) / se } else if (f - p).abs() < 1e-15 { 0.0 } else { f64::INFINITY }
        })
        .collect();
    let failed_runs = n_runs - valid;
    let passed = failed_runs == 0 && z_scores.iter().all(|z| z.abs() <= 3.0) && min_fidelity > FIDELITY_GATE;
    Ok((
        BornReport { runs: n_runs, seed, counts, frequencies, predictions, z_scores, failed_runs, min_fidelity, passed, records },
        ok,
    ))
}

/// Free joint evolution after the coupling, stored every step.
pub fn post_measurement_history(setup: &MeasurementSetup, start: &WaveFunction, steps: usize, dt: f64) -> Result<WaveFunctionHistory> {
    let t0 = start.time();
    let zero = Potential::zero(setup.joint.clone());
    evolve(start, &zero, &setup.joint_system(), t0, t0 + steps as f64 * dt, &EvolutionParams::new(dt, 1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchIrrelevanceReport {
    pub runs: usize,
    pub steps: usize,
    pub max_deviation: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Re-run each post-τ trajectory with only the registered branch kept and compare.
pub fn branch_irrelevance(setup: &MeasurementSetup, runs: &[CollapseResult], steps: usize, dt: f64) -> Result<BranchIrrelevanceReport> {
    let sys = setup.joint_system();
    let psi_tau = setup.premeasurement_unitary(setup.duration)?;
    let guide = BohmGuidance::new(setup.joint.clone(), &sys)?;
    let opts = IntegrationOptions::new(dt);
    let starts: Vec<Vec<f64>> = runs.iter().map(|r| r.trajectory.last().q.clone()).collect();
    let mut full = post_measurement_history(setup, &psi_tau, steps, dt)?;
    let full_trajs = integrate_guided(&starts, &mut full, &guide, &opts)?;
    drop(full);
    let mut max_deviation = 0.0f64;
    for beta in 0..setup.eigenvalues.len() {
        let members: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].outcome == beta).collect();
        if members.is_empty() {
            continue;
        }
        let only = normalize(&setup.branch(beta, setup.duration)?)?;
        let mut hist = post_measurement_history(setup, &only, steps, dt)?;
        let sub: Vec<Vec<f64>> = members.iter().map(|&i| starts[i].clone()).collect();
        let trajs = integrate_guided(&sub, &mut hist, &guide, &opts)?;
        for (t, &i) in trajs.iter().zip(&members) {
            if !t.completed() || !full_trajs[i].completed() {
                max_deviation = f64::INFINITY;
                continue;
            }
            for (a, b) in t.samples.iter().zip(&full_trajs[i].samples) {
                max_deviation = max_deviation.max((a.q[0] - b.q[0]).abs());
            }
        }
    }
    let threshold = 1e-8;
    Ok(BranchIrrelevanceReport { runs: runs.len(), steps, max_deviation, threshold, passed: max_deviation < threshold })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalDynamicsReport {
    pub steps: usize,
    /// Largest phase-aligned L² distance between the conditional slice and the standalone evolution.
    pub max_distance: f64,
    pub passed: bool,
}

/// Follow the conditional wave function `Ψ_t(·, Y(t))` after τ and compare it with the
/// registered eigenstate evolved on the system grid alone.
pub fn conditional_dynamics_check(setup: &MeasurementSetup, run: &CollapseResult, steps: usize, dt: f64) -> Result<ConditionalDynamicsReport> {
    let sys = setup.joint_system();
    let psi_tau = setup.premeasurement_unitary(setup.duration)?;
    let mut full = post_measurement_history(setup, &psi_tau, steps, dt)?;
    let start = run.trajectory.last().q.clone();
    let guide = BohmGuidance::new(setup.joint.clone(), &sys)?;
    let traj = integrate_guided(&[start], &mut full, &guide, &IntegrationOptions::new(dt))?.remove(0);
    if !traj.completed() {
        return Err(Error::NodeEncountered { time: traj.last().t, density: 0.0 });
    }
    let x_sys = ParticleSystem::new(vec![setup.system_mass], vec![1], setup.hbar, 1)?;
    let standalone = evolve(
        &setup.eigenstates[run.outcome].clone().with_time(setup.duration),
        &Potential::zero(setup.x_grid.clone()),
        &x_sys,
        setup.duration,
        setup.duration + steps as f64 * dt,
        &EvolutionParams::new(dt, 1),
    )?;
    let mut max_distance = 0.0f64;
    for (i, sample) in traj.samples.iter().enumerate() {
        let (slice, _) = conditional_wavefunction(&full.snapshots[i], sample.q[1])?;
        let slice = normalize(&slice)?;
        let reference = &standalone.snapshots[i];
        let ip = inner_product(reference, &slice)?;
        let phase = ip / ip.norm();
        let d: f64 = slice
            .data()
            .iter()
            .zip(reference.data())
            .map(|(a, b)| (a - b * phase).norm_sqr())
            .sum::<f64>()
            * setup.x_grid.spacing(0);
        max_distance = max_distance.max(d.sqrt());
    }
    Ok(ConditionalDynamicsReport { steps, max_distance, passed: max_distance < 1e-6 })
}

/// Finite pointer mass variant: a scalar kick `V = −g·a(x)·y` on `[0, t_kick)` between a
/// two-bump system and a pointer of mass `M`, followed by free flight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteMassConfig {
    pub x: AxisSpec,
    pub y: AxisSpec,
    pub bump_center: f64,
    pub bump_width: f64,
    /// Amplitudes of the left (`a = −1`) and right (`a = +1`) bumps.
    pub coefficients: [f64; 2],
    pub pointer_width: f64,
    pub pointer_mass: f64,
    pub kick: f64,
    pub kick_duration: f64,
    pub total_time: f64,
    pub dt: f64,
    /// Length scale of the smooth sign function `a(x) = tanh(x / switch_width)`.
    pub switch_width: f64,
}

impl Default for FiniteMassConfig {
    fn default() -> Self {
        Self {
            x: AxisSpec::new(256, -16.0, 16.0),
            y: AxisSpec::new(512, -16.0, 16.0),
            bump_center: 5.0,
            bump_width: 0.5,
            coefficients: [0.6, 0.8],
            pointer_width: 0.5,
            pointer_mass: 4.0,
            kick: 64.0,
            kick_duration: 0.25,
            total_time: 2.0,
            dt: 0.005,
            switch_width: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteMassReport {
    pub predictions: Vec<f64>,
    /// Mass of `|Ψ_T|²` at y < 0 and y > 0.
    pub registered: Vec<f64>,
    pub pointer_overlap: f64,
    /// Fidelity of the conditional slice at each branch's pointer centre with the freely evolved bump.
    pub fidelities: Vec<f64>,
    pub passed: bool,
}

pub fn finite_mass_cross_check(cfg: &FiniteMassConfig) -> Result<FiniteMassReport> {
    let joint = make_grid(&[cfg.x, cfg.y])?;
    let x_grid = joint.sub_grid(0..1)?;
    let [cl, cr] = cfg.coefficients;
    let norm = (cl * cl + cr * cr).sqrt();
    let (cl, cr) = (cl / norm, cr / norm);
    let bump = |x: f64, s: f64| states::gaussian(x, s * cfg.bump_center, cfg.bump_width, 0.0);
    let psi0 = normalize(&WaveFunction::from_fn(joint.clone(), |q| {
        (bump(q[0], -1.0) * cl + bump(q[0], 1.0) * cr) * states::gaussian(q[1], 0.0, cfg.pointer_width, 0.0)
    })?)?;
    let sw = cfg.switch_width;
    let v = Potential::scalar_fn(joint.clone(), |q| -cfg.kick * (q[0] / sw).tanh() * q[1])?
        .with_schedule(Schedule::window(0.0, cfg.kick_duration, 1.0));
    let sys = ParticleSystem::new(vec![1.0, cfg.pointer_mass], vec![1, 1], 1.0, 1)?;
    let steps = (cfg.total_time / cfg.dt).round() as usize;
    let params = EvolutionParams::new(cfg.dt, steps);
    let hist = evolve(&psi0, &v, &sys, 0.0, cfg.total_time, &params)?;
    let psi_t = hist.last().clone();
    let ny = cfg.y.n;
    let nx = cfg.x.n;
    let dv = joint.cell_volume();
    let mut registered = vec![0.0; 2];
    for iy in 0..ny {
        let side = usize::from(joint.coordinate(1, iy) > 0.0);
        registered[side] += (0..nx).map(|ix| psi_t.data()[ix * ny + iy].norm_sqr()).sum::<f64>() * dv;
    }
    // Branches evolved separately; by linearity they sum to the joint state.
    let mut branch_y = vec![vec![0.0; ny]; 2];
    for (b, (sign, c)) in [(-1.0, cl), (1.0, cr)].into_iter().enumerate() {
        let start = WaveFunction::from_fn(joint.clone(), |q| bump(q[0], sign) * c * states::gaussian(q[1], 0.0, cfg.pointer_width, 0.0))?;
        let end = evolve(&start, &v, &sys, 0.0, cfg.total_time, &params)?;
        for ix in 0..nx {
            for iy in 0..ny {
                branch_y[b][iy] += end.last().data()[ix * ny + iy].norm_sqr() * dv;
            }
        }
    }
    let s: Vec<f64> = branch_y.iter().map(|b| b.iter().sum()).collect();
    let pointer_overlap: f64 = (0..ny).map(|i| (branch_y[0][i] / s[0] * branch_y[1][i] / s[1]).sqrt()).sum();
    let x_sys = ParticleSystem::single(1);
    let mut fidelities = Vec::new();
    for (b, sign) in [(0usize, -1.0), (1, 1.0)] {
        let centre: f64 = (0..ny).map(|i| joint.coordinate(1, i) * branch_y[b][i]).sum::<f64>() / s[b];
        let (slice, _) = conditional_wavefunction(&psi_t, centre)?;
        let free = normalize(&WaveFunction::from_fn(x_grid.clone(), |q| bump(q[0], sign))?)?;
        let free_t = evolve(&free, &Potential::zero(x_grid.clone()), &x_sys, 0.0, cfg.total_time, &EvolutionParams::new(cfg.dt, steps))?;
        fidelities.push(inner_product(free_t.last(), &normalize(&slice)?)?.norm());
    }
    let predictions = vec![cl * cl, cr * cr];
    let passed = registered.iter().zip(&predictions).all(|(r, p)| (r - p).abs() < 1e-6)
        && pointer_overlap < OVERLAP_GATE
        && fidelities.iter().all(|&f| f > FIDELITY_GATE);
    Ok(FiniteMassReport { predictions, registered, pointer_overlap, fidelities, passed })
}
