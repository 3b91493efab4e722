//! Sampling from |ψ|², goodness-of-fit statistics, equivariance checks and the continuity residual.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{integrate_ensemble, IntegrationOptions, NODE_GUARD};
use crate::error::{Error, Result};
use crate::evolution::{EvolutionParams, Potential, Propagator, SnapshotSource, StreamingHistory};
use crate::grid::{density, DensityField, Grid, ParticleSystem, WaveFunction};
use crate::spectral::{self, Direction, Spectral};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    pub members: Vec<Vec<f64>>,
    pub seed: u64,
    /// What was sampled, e.g. a scenario id and time.
    pub source: String,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Independent stream for draw `j`, so draws do not depend on generation order.
pub fn draw_rng(seed: u64, j: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j);
    rng
}

/// Child seed for run `r` of a seeded batch (splitmix64 finalizer).
pub fn derive_seed(seed: u64, r: u64) -> u64 {
    let mut z = seed ^ r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Cumulative cell masses of a density, ready for inverse-transform sampling.
pub struct CellSampler {
    grid: Arc<Grid>,
    cumulative: Vec<f64>,
}

impl CellSampler {
    pub fn new(rho: &DensityField) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = rho
            .rho
            .iter()
            .map(|&r| {
                acc += r.max(0.0);
                acc
            })
            .collect();
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::ZeroNorm(acc * rho.grid.cell_volume()));
        }
        Ok(Self { grid: rho.grid.clone(), cumulative })
    }

    /// Draw `j` of the stream identified by `seed`.
    pub fn draw(&self, seed: u64, j: u64) -> Vec<f64> {
        let mut rng = draw_rng(seed, j);
        let total = *self.cumulative.last().expect("non-empty grid");
        let u = rng.random::<f64>() * total;
        let cell = self.cumulative.partition_point(|&c| c <= u).min(self.cumulative.len() - 1);
        let d = self.grid.dims();
        let mut idx = vec![0usize; d];
        self.grid.unravel(cell, &mut idx);
        (0..d)
            .map(|j| {
                let x = self.grid.coordinate(j, idx[j]) + (rng.random::<f64>() - 0.5) * self.grid.spacing(j);
                self.grid.wrap(j, x)
            })
            .collect()
    }
}

/// `n` draws from the cell histogram of `|ψ|²` with uniform jitter inside each cell.
pub fn sample_density(psi: &WaveFunction, n: usize, seed: u64) -> Result<Ensemble> {
    if n == 0 {
        return Err(Error::Config("ensemble size must be >= 1".into()));
    }
    let sampler = CellSampler::new(&density(psi))?;
    let members = (0..n as u64).into_par_iter().map(|j| sampler.draw(seed, j)).collect();
    Ok(Ensemble { members, seed, source: format!("|psi|^2 at t = {}", psi.time()) })
}

/// Marginal density of `|ψ|²` along `axis`, spectrally refined by `factor` along that axis.
///
/// Returns the fine node spacing and density values at the fine nodes.
pub fn refined_marginal(psi: &WaveFunction, axis: usize, factor: usize) -> (f64, Vec<f64>) {
    let grid = psi.grid();
    let n = grid.n(axis);
    let m = n * factor;
    let inner = grid.stride(axis);
    let outer = grid.len() / (n * inner);
    let other_volume = grid.cell_volume() / grid.spacing(axis);
    let mut fine_axes = grid.axes().to_vec();
    fine_axes[axis].n = m;
    let fine = Spectral::new(&fine_axes);
    let coarse = grid.spectral();
    let mut marginal = vec![0.0; m];
    for c in 0..psi.components() {
        let mut hat = psi.component(c).to_vec();
        coarse.transform_axis(&mut hat, axis, Direction::Forward);
        let mut buf = vec![Complex64::new(0.0, 0.0); grid.len() * factor];
        let scale = 1.0 / n as f64;
        for o in 0..outer {
            for k in 0..n {
                // Nyquist split evenly between ±n/2 keeps real data real.
                let z = hat[o * n * inner + k * inner..o * n * inner + (k + 1) * inner].to_vec();
                let targets: Vec<(usize, f64)> = if k < n / 2 {
                    vec![(k, 1.0)]
                } else if k == n / 2 {
                    vec![(k, 0.5), (m - n / 2, 0.5)]
                } else {
                    vec![(m - (n - k), 1.0)]
                };
                for (kk, w) in targets {
                    let dst = &mut buf[o * m * inner + kk * inner..o * m * inner + (kk + 1) * inner];
                    dst.iter_mut().zip(&z).for_each(|(d, s)| *d += s * (w * scale));
                }
            }
        }
        fine.transform_axis(&mut buf, axis, Direction::Inverse);
        for o in 0..outer {
            for k in 0..m {
                let row = &buf[o * m * inner + k * inner..o * m * inner + (k + 1) * inner];
                marginal[k] += row.iter().map(|z| z.norm_sqr()).sum::<f64>();
            }
        }
    }
    marginal.iter_mut().for_each(|v| *v *= other_volume);
    (grid.spacing(axis) / factor as f64, marginal)
}

/// Piecewise-linear periodic CDF on `[a, a + len·h)` from node densities at `a + k·h`.
#[derive(Debug, Clone)]
pub struct GridCdf {
    a: f64,
    h: f64,
    values: Vec<f64>,
}

impl GridCdf {
    pub fn from_nodes(a: f64, h: f64, rho: &[f64]) -> Self {
        let n = rho.len();
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        let mut acc = 0.0;
        for k in 0..n {
            acc += 0.5 * h * (rho[k] + rho[(k + 1) % n]);
            values.push(acc);
        }
        values.iter_mut().for_each(|v| *v /= acc);
        Self { a, h, values }
    }

    /// Smallest `x` with `F(x) = p`, by linear inversion.
    pub fn quantile(&self, p: f64) -> f64 {
        let k = self.values.partition_point(|&v| v < p);
        if k == 0 {
            return self.a;
        }
        if k >= self.values.len() {
            return self.a + (self.values.len() - 1) as f64 * self.h;
        }
        let (lo, hi) = (self.values[k - 1], self.values[k]);
        let f = if hi > lo { (p - lo) / (hi - lo) } else { 0.0 };
        self.a + (k - 1) as f64 * self.h + f * self.h
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.a) / self.h;
        if u <= 0.0 {
            return 0.0;
        }
        let k = u.floor() as usize;
        if k + 1 >= self.values.len() {
            return 1.0;
        }
        let f = u - k as f64;
        self.values[k] + f * (self.values[k + 1] - self.values[k])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub n: usize,
    pub passed: bool,
}

/// Asymptotic Kolmogorov critical value `c(α)/√n`.
pub fn ks_critical(alpha: f64, n: usize) -> f64 {
    (-(alpha / 2.0).ln() / 2.0).sqrt() / (n as f64).sqrt()
}

/// Kolmogorov tail probability with the Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// One-sample KS test of `xs` against `cdf`.
pub fn ks_test(xs: &[f64], cdf: impl Fn(f64) -> f64, alpha: f64) -> KsResult {
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let nf = n as f64;
    let statistic = sorted.iter().enumerate().fold(0.0f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
    });
    let critical = ks_critical(alpha, n);
    KsResult { statistic, critical, p_value: ks_p_value(statistic, n), n, passed: statistic < critical }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub critical: f64,
    pub p_value: f64,
    pub bins: usize,
    pub dof: usize,
    pub passed: bool,
}

/// Pearson χ² of observed against expected counts, pooling bins with expected < 5.
pub fn chi_square_test(observed: &[f64], expected: &[f64], alpha: f64) -> ChiSquareResult {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e < 5.0 {
            pool_o += o;
            pool_e += e;
        } else {
            obs.push(o);
            exp.push(e);
        }
    }
    if pool_e >= 5.0 || exp.is_empty() {
        obs.push(pool_o);
        exp.push(pool_e);
    } else if pool_e > 0.0 || pool_o > 0.0 {
        let last = exp.len() - 1;
        obs[last] += pool_o;
        exp[last] += pool_e;
    }
    let statistic: f64 = obs
        .iter()
        .zip(&exp)
        .map(|(o, e)| if *e > 0.0 { (o - e) * (o - e) / e } else { 0.0 })
        .sum();
    let dof = exp.len().saturating_sub(1).max(1);
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    let critical = dist.inverse_cdf(1.0 - alpha);
    ChiSquareResult {
        statistic,
        critical,
        p_value: 1.0 - dist.cdf(statistic),
        bins: exp.len(),
        dof,
        passed: statistic < critical,
    }
}

/// Cell index along `axis` for coordinate `x` (cells centred on grid points).
fn cell_of(grid: &Grid, axis: usize, x: f64) -> usize {
    let ax = grid.axis(axis);
    let u = ((x - ax.a) / grid.spacing(axis) + 0.5).floor() as i64;
    u.rem_euclid(ax.n as i64) as usize
}

/// χ² of sample positions against the cell masses of `rho`, on product bins whose edges
/// sit at marginal quantiles snapped to cell boundaries (about √n bins in total).
pub fn chi_square_against_density(points: &[Vec<f64>], rho: &DensityField, alpha: f64) -> ChiSquareResult {
    let grid = &rho.grid;
    let d = grid.dims();
    let n = points.len();
    let per_axis = ((n as f64).sqrt().powf(1.0 / d as f64).round() as usize).max(2);
    let total: f64 = rho.rho.iter().sum();
    let mut lookup = Vec::with_capacity(d);
    let mut counts = Vec::with_capacity(d);
    for j in 0..d {
        let marg = rho.marginal(j);
        let sum: f64 = marg.iter().sum();
        let mut map = vec![0usize; grid.n(j)];
        let mut acc = 0.0;
        let mut bin = 0usize;
        for (i, m) in marg.iter().enumerate() {
            map[i] = bin;
            acc += m / sum;
            if acc >= (bin + 1) as f64 / per_axis as f64 && bin + 1 < per_axis {
                bin += 1;
            }
        }
        counts.push(map.iter().max().unwrap() + 1);
        lookup.push(map);
    }
    let nbins: usize = counts.iter().product();
    let flat_bin = |cells: &[usize]| {
        let mut b = 0;
        for j in 0..d {
            b = b * counts[j] + lookup[j][cells[j]];
        }
        b
    };
    let mut expected = vec![0.0; nbins];
    let mut idx = vec![0usize; d];
    for (i, r) in rho.rho.iter().enumerate() {
        grid.unravel(i, &mut idx);
        expected[flat_bin(&idx)] += r / total * n as f64;
    }
    let mut observed = vec![0.0; nbins];
    for p in points {
        let cells: Vec<usize> = (0..d).map(|j| cell_of(grid, j, p[j])).collect();
        observed[flat_bin(&cells)] += 1.0;
    }
    chi_square_test(&observed, &expected, alpha)
}

/// KS of each coordinate against the refined marginals of `psi`.
pub fn marginal_ks(points: &[Vec<f64>], psi: &WaveFunction, alpha: f64) -> Vec<KsResult> {
    let grid = psi.grid();
    (0..grid.dims())
        .map(|j| {
            let (h, marg) = refined_marginal(psi, j, 8);
            let cdf = GridCdf::from_nodes(grid.axis(j).a, h, &marg);
            let xs: Vec<f64> = points.iter().map(|p| p[j]).collect();
            ks_test(&xs, |x| cdf.eval(x), alpha)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    Ks,
    ChiSquare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub kind: StatisticKind,
    pub statistic: f64,
    pub threshold: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub n: usize,
    pub seed: u64,
    pub time: f64,
    /// Per-axis KS results; one entry in 1D.
    pub marginals: Vec<KsResult>,
    pub chi_square: Option<ChiSquareResult>,
    /// Members stopped by the node guard (excluded from the statistics).
    pub node_hits: usize,
    pub passed: bool,
}

/// Compare final positions with `|ψ_T|²`: KS in 1D; χ² plus per-axis KS otherwise.
pub fn compare_with_density(points: &[Vec<f64>], psi_t: &WaveFunction, alpha: f64, seed: u64) -> EquivarianceReport {
    let marginals = marginal_ks(points, psi_t, alpha);
    let d = psi_t.grid().dims();
    if d == 1 {
        let ks = marginals[0];
        return EquivarianceReport {
            kind: StatisticKind::Ks,
            statistic: ks.statistic,
            threshold: ks.critical,
            p_value: ks.p_value,
            alpha,
            n: points.len(),
            seed,
            time: psi_t.time(),
            marginals,
            chi_square: None,
            node_hits: 0,
            passed: ks.passed,
        };
    }
    let chi = chi_square_against_density(points, &density(psi_t), alpha);
    let passed = chi.passed && marginals.iter().all(|m| m.passed);
    EquivarianceReport {
        kind: StatisticKind::ChiSquare,
        statistic: chi.statistic,
        threshold: chi.critical,
        p_value: chi.p_value,
        alpha,
        n: points.len(),
        seed,
        time: psi_t.time(),
        marginals,
        chi_square: Some(chi),
        node_hits: 0,
        passed,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivarianceOptions {
    pub evolution: EvolutionParams,
    pub dt_traj: f64,
    pub alpha: f64,
}

/// Sample `|ψ₀|²`, transport to `t_end` along trajectories and test against `|ψ_T|²`.
pub fn equivariance_test(
    psi0: &WaveFunction,
    potential: &Potential,
    system: &ParticleSystem,
    t_end: f64,
    n: usize,
    seed: u64,
    opts: &EquivarianceOptions,
) -> Result<EquivarianceReport> {
    let t0 = psi0.time();
    let ensemble = sample_density(psi0, n, seed)?;
    if t_end == t0 {
        return Ok(compare_with_density(&ensemble.members, psi0, opts.alpha, seed));
    }
    let mut history =
        StreamingHistory::new(psi0, Arc::new(potential.clone()), system, t0, t_end, &opts.evolution)?;
    let mut iopts = IntegrationOptions::new(opts.dt_traj);
    iopts.record_stride = 0;
    let trajs = integrate_ensemble(&ensemble.members, &mut history, system, &iopts)?;
    let psi_t = history.snapshot(history.len() - 1)?;
    let finals: Vec<Vec<f64>> = trajs.iter().filter(|t| t.completed()).map(|t| t.last().q.clone()).collect();
    let mut report = compare_with_density(&finals, &psi_t, opts.alpha, seed);
    report.node_hits = trajs.len() - finals.len();
    Ok(report)
}

/// `J_j = (ħ/m_j) Im(Σ_c Ψ_c* ∂_jΨ_c)` at every grid point, dimension-major, without masking.
pub fn raw_current(psi: &WaveFunction, system: &ParticleSystem) -> Result<Vec<f64>> {
    system.check_grid(psi.grid())?;
    let grid = psi.grid();
    let len = grid.len();
    let d = grid.dims();
    let mut j = vec![0.0; d * len];
    for c in 0..psi.components() {
        let comp = psi.component(c);
        let grad = spectral::gradient_split(grid, comp);
        for (axis, g) in grad.iter().enumerate() {
            let coeff = system.hbar / system.mass_of_dim(axis);
            for i in 0..len {
                j[axis * len + i] += coeff * (comp[i].conj() * g[i]).im;
            }
        }
    }
    Ok(j)
}

/// Density with the current `J = ρv`, zeroed where the velocity is masked.
pub fn probability_current(psi: &WaveFunction, system: &ParticleSystem) -> Result<DensityField> {
    let mut field = density(psi);
    let mut j = raw_current(psi, system)?;
    let len = field.rho.len();
    let eps = NODE_GUARD * field.rho.iter().fold(0.0f64, |m, &r| m.max(r));
    for i in 0..len {
        if !(field.rho[i] > eps) {
            for axis in 0..psi.grid().dims() {
                j[axis * len + i] = 0.0;
            }
        }
    }
    field.current = Some(j);
    Ok(field)
}

/// L² norm of `(ρ(t+dt) − ρ(t−dt))/(2dt) + ∇·J` over unmasked points.
pub fn continuity_residual(psi: &WaveFunction, potential: &Potential, system: &ParticleSystem, dt: f64) -> Result<f64> {
    let pot = Arc::new(potential.clone());
    let fwd = Propagator::new(pot.clone(), system, dt)?.step(psi)?;
    let bwd = Propagator::new(pot, system, -dt)?.step(psi)?;
    let rho = density(psi).rho;
    let rp = density(&fwd).rho;
    let rm = density(&bwd).rho;
    let j = raw_current(psi, system)?;
    let div = spectral::divergence(psi.grid(), &j);
    let eps = NODE_GUARD * rho.iter().fold(0.0f64, |m, &r| m.max(r));
    let sum: f64 = (0..rho.len())
        .filter(|&i| rho[i] > eps)
        .map(|i| {
            let r = (rp[i] - rm[i]) / (2.0 * dt) + div[i];
            r * r
        })
        .sum();
    Ok((sum * psi.grid().cell_volume()).sqrt())
}

/// CSV with header `member,x1,...,xd`.
pub fn write_ensemble_csv(path: &Path, ensemble: &Ensemble) -> Result<()> {
    let d = ensemble.members.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("member".to_string()).chain((1..=d).map(|j| format!("x{j}"))))?;
    for (m, q) in ensemble.members.iter().enumerate() {
        w.write_record(std::iter::once(m.to_string()).chain(q.iter().map(f64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}
