//! Initial states and potentials for the shipped scenarios.

use std::sync::Arc;

use num_complex::Complex64;
use statrs::function::erf::erfc;

use super::config::{InitialStateSpec, Packet, PairTerm, PotentialSpec, ScenarioConfig, Slits};
use crate::error::{Error, Result};
use crate::evolution::{Potential, Schedule};
use crate::grid::{inner_product, make_grid, normalize, Grid, ParticleSystem, WaveFunction};
use crate::states;

fn packet(p: &Packet, x: f64) -> Complex64 {
    states::gaussian(x, p.center, p.sigma, p.momentum)
}

/// Density standard deviation of a free Gaussian packet after `t`.
pub fn free_width(sigma0: f64, t: f64, mass: f64, hbar: f64) -> f64 {
    sigma0 * (1.0 + (hbar * t / (2.0 * mass * sigma0 * sigma0)).powi(2)).sqrt()
}

/// Mass of a Gaussian of width `sigma` beyond `distance` on one side.
fn gaussian_tail(distance: f64, sigma: f64) -> f64 {
    0.5 * erfc(distance / (std::f64::consts::SQRT_2 * sigma))
}

pub fn build_grid(cfg: &ScenarioConfig) -> Result<Arc<Grid>> {
    make_grid(&cfg.grid)
}

pub fn build_potential(cfg: &ScenarioConfig, grid: &Arc<Grid>, sys: &ParticleSystem) -> Result<Potential> {
    match &cfg.potential {
        PotentialSpec::Zero => Ok(Potential::zero(grid.clone())),
        PotentialSpec::Harmonic { omega, center } => {
            let d = grid.dims();
            let c = center.clone().unwrap_or_else(|| vec![0.0; d]);
            let m: Vec<f64> = (0..d).map(|j| sys.mass_of_dim(j)).collect();
            Potential::scalar_fn(grid.clone(), |q| (0..d).map(|j| 0.5 * m[j] * omega[j] * omega[j] * (q[j] - c[j]).powi(2)).sum())
        }
        PotentialSpec::SpinGradient { strength, axis, t_on, t_off } => spin_potential(grid, *strength, *axis, *t_on, *t_off),
    }
}

/// `V(z) = −λ z σ_z` switched on over `[t_on, t_off)`.
pub fn spin_potential(grid: &Arc<Grid>, strength: f64, axis: usize, t_on: f64, t_off: f64) -> Result<Potential> {
    let zero = Complex64::new(0.0, 0.0);
    Ok(Potential::matrix_fn(grid.clone(), 2, |q, block| {
        let v = -strength * q[axis];
        block.copy_from_slice(&[Complex64::new(v, 0.0), zero, zero, Complex64::new(-v, 0.0)]);
    })?
    .with_schedule(Schedule::window(t_on, t_off, 1.0)))
}

pub fn build_initial(cfg: &ScenarioConfig, grid: &Arc<Grid>, sys: &ParticleSystem) -> Result<WaveFunction> {
    match &cfg.initial_state {
        InitialStateSpec::Gaussian { packets } => {
            normalize(&WaveFunction::from_fn(grid.clone(), |q| {
                packets.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (j, p)| acc * packet(p, q[j]))
            })?)
        }
        InitialStateSpec::HarmonicEigenstate { levels, omega } => {
            let d = grid.dims();
            let m: Vec<f64> = (0..d).map(|j| sys.mass_of_dim(j)).collect();
            normalize(&WaveFunction::from_fn(grid.clone(), |q| {
                let v: f64 = (0..d).map(|j| states::hermite_function(levels[j], q[j], m[j], omega[j], sys.hbar)).product();
                Complex64::new(v, 0.0)
            })?)
        }
        InitialStateSpec::DoubleSlit { .. } => build_double_slit(cfg, grid, sys),
        InitialStateSpec::SpinorGaussian { .. } => build_spin_scenario(cfg, grid, sys).map(|(psi, _)| psi),
        InitialStateSpec::EntangledPair { terms } => build_entangled_pair(terms, grid),
    }
}

/// Two coherent Gaussian slit exits, `ψ₀ ∝ e^{iκx} G(x) (G₊(y) + G₋(y))`, or one exit for `Slits::Single`.
///
/// Fails with `DomainTooSmall` when the freely spreading packets would put more than the
/// configured margin of probability beyond the grid edges by the end of the run.
pub fn build_double_slit(cfg: &ScenarioConfig, grid: &Arc<Grid>, sys: &ParticleSystem) -> Result<WaveFunction> {
    let InitialStateSpec::DoubleSlit { slits, separation, slit_width, momentum, source_x, source_width } = cfg.initial_state
    else {
        return Err(Error::Config("not a double-slit scenario".into()));
    };
    let t = cfg.schedule.t_end;
    let (mx, my) = (sys.mass_of_dim(0), sys.mass_of_dim(1));
    let hbar = sys.hbar;
    let (ax, ay) = (grid.axis(0), grid.axis(1));
    let sx = free_width(source_width, t, mx, hbar);
    let sy = free_width(slit_width, t, my, hbar);
    let xc = source_x + hbar * momentum * t / mx;
    let top = separation / 2.0;
    let lower = if slits == Slits::Both { -top } else { top };
    let leak = gaussian_tail(xc - ax.a, sx)
        + gaussian_tail(ax.b - xc, sx)
        + gaussian_tail(lower - ay.a, sy)
        + gaussian_tail(ay.b - top, sy);
    if leak > cfg.accuracy.domain_margin {
        return Err(Error::DomainTooSmall(format!(
            "free spreading puts {leak:e} of the probability past the grid edges by t = {t}"
        )));
    }
    let gx = Packet { center: source_x, sigma: source_width, momentum };
    let up = Packet { center: top, sigma: slit_width, momentum: 0.0 };
    let down = Packet { center: -top, sigma: slit_width, momentum: 0.0 };
    normalize(&WaveFunction::from_fn(grid.clone(), |q| {
        let y = match slits {
            Slits::Both => packet(&up, q[1]) + packet(&down, q[1]),
            Slits::Single => packet(&up, q[1]),
        };
        packet(&gx, q[0]) * y
    })?)
}

/// Spinor Gaussian `ψ₀(z)(a, b)` together with its gradient-coupling potential.
///
/// Fails with `SeparationTooSmall` when the two spin components, kicked apart by the
/// window and then spreading freely, still overlap by more than the configured bound at the
/// end of the run.
pub fn build_spin_scenario(cfg: &ScenarioConfig, grid: &Arc<Grid>, sys: &ParticleSystem) -> Result<(WaveFunction, Potential)> {
    let InitialStateSpec::SpinorGaussian { packet: p, spinor } = &cfg.initial_state else {
        return Err(Error::Config("not a spinor scenario".into()));
    };
    let PotentialSpec::SpinGradient { strength, axis, t_on, t_off } = cfg.potential else {
        return Err(Error::Config("spinor scenarios need a spin_gradient potential".into()));
    };
    let m = sys.mass_of_dim(axis);
    let t = cfg.schedule.t_end;
    let on = (t.min(t_off) - t_on).max(0.0);
    let kick = strength * on / m;
    // Each component is pushed by ±λ during the window and then drifts.
    let shift = 0.5 * strength / m * on * on + kick * (t - t.min(t_off)).max(0.0);
    let sigma = free_width(p.sigma, t, m, sys.hbar);
    let both = spinor.iter().all(|[r, i]| r * r + i * i > 0.0);
    if both {
        let gap = 2.0 * shift;
        let overlap = (-gap * gap / (8.0 * sigma * sigma)).exp();
        if overlap > cfg.checks.spin.max_overlap {
            return Err(Error::SeparationTooSmall(format!(
                "spin components separated by {gap} with width {sigma} overlap by {overlap:e}"
            )));
        }
    }
    let amps: Vec<Complex64> = spinor.iter().map(|[r, i]| Complex64::new(*r, *i)).collect();
    let psi = normalize(&WaveFunction::from_spinor_fn(grid.clone(), amps.len(), |q, out| {
        let g = packet(p, q[0]);
        for (o, a) in out.iter_mut().zip(&amps) {
            *o = g * a;
        }
    })?)?;
    let potential = spin_potential(grid, strength, axis, t_on, t_off)?;
    Ok((psi, potential))
}

fn pair_term(term: &PairTerm, grid: &Arc<Grid>) -> Result<WaveFunction> {
    let a = Complex64::new(term.amplitude[0], term.amplitude[1]);
    WaveFunction::from_fn(grid.clone(), |q| a * packet(&term.g, q[0]) * packet(&term.h, q[1]))
}

fn factor(grid: &Grid, axis: usize, p: &Packet) -> Vec<Complex64> {
    (0..grid.n(axis)).map(|i| packet(p, grid.coordinate(axis, i))).collect()
}

fn parallel(a: &[Complex64], b: &[Complex64]) -> bool {
    let ab: Complex64 = a.iter().zip(b).map(|(x, y)| x.conj() * y).sum();
    let na: f64 = a.iter().map(|x| x.norm_sqr()).sum();
    let nb: f64 = b.iter().map(|x| x.norm_sqr()).sum();
    ab.norm() >= (1.0 - 1e-12) * (na * nb).sqrt()
}

/// `ψ ∝ Σ_i a_i g_i(x₁) h_i(x₂)`. A two-term sum whose `g` or `h` factors are proportional is a
/// product state and fails with `FactorizableSpec`.
pub fn build_entangled_pair(terms: &[PairTerm], grid: &Arc<Grid>) -> Result<WaveFunction> {
    if terms.len() == 2 {
        let g = [factor(grid, 0, &terms[0].g), factor(grid, 0, &terms[1].g)];
        let h = [factor(grid, 1, &terms[0].h), factor(grid, 1, &terms[1].h)];
        if parallel(&g[0], &g[1]) || parallel(&h[0], &h[1]) {
            return Err(Error::FactorizableSpec);
        }
    }
    let mut psi = pair_term(&terms[0], grid)?;
    for t in &terms[1..] {
        psi = psi.combine(Complex64::new(1.0, 0.0), &pair_term(t, grid)?, Complex64::new(1.0, 0.0))?;
    }
    normalize(&psi)
}

/// Product control `g₁(x₁) Σ_i h_i(x₂)` built from the same packets.
pub fn factorized_control(terms: &[PairTerm], grid: &Arc<Grid>) -> Result<WaveFunction> {
    let g = terms[0].g;
    normalize(&WaveFunction::from_fn(grid.clone(), |q| {
        let h: Complex64 = terms.iter().map(|t| packet(&t.h, q[1])).sum();
        packet(&g, q[0]) * h
    })?)
}

/// `|⟨φ|ψ⟩|` between normalized states, used to confirm a state is not a relabelled product.
pub fn fidelity(a: &WaveFunction, b: &WaveFunction) -> Result<f64> {
    Ok(inner_product(a, b)?.norm())
}
