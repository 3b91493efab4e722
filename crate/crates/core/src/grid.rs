//! Configuration-space grids and wave-function algebra.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::Spectral;

/// Default cap on the number of grid points (per field component).
pub const DEFAULT_POINT_BUDGET: usize = 1 << 24;

/// One periodic axis: `n` points on `[a, b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub n: usize,
    pub a: f64,
    pub b: f64,
}

impl AxisSpec {
    pub fn new(n: usize, a: f64, b: f64) -> Self {
        Self { n, a, b }
    }
}

/// Rectangular periodic grid over a `d`-dimensional configuration space.
///
/// Points are stored row-major: the last axis varies fastest.
pub struct Grid {
    axes: Vec<AxisSpec>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    wavenumbers: Vec<Vec<f64>>,
    len: usize,
    spectral: OnceLock<Arc<Spectral>>,
}

impl std::fmt::Debug for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Grid").field("axes", &self.axes).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

impl Grid {
    pub fn new(axes: &[AxisSpec]) -> Result<Arc<Grid>> {
        Self::with_budget(axes, DEFAULT_POINT_BUDGET)
    }

    pub fn with_budget(axes: &[AxisSpec], budget: usize) -> Result<Arc<Grid>> {
        if axes.is_empty() {
            return Err(Error::Config("grid needs at least one axis".into()));
        }
        let mut len: usize = 1;
        for (j, ax) in axes.iter().enumerate() {
            if ax.n < 8 || !ax.n.is_power_of_two() {
                return Err(Error::NonPowerOfTwo { axis: j, n: ax.n });
            }
            if !(ax.b > ax.a) || !ax.a.is_finite() || !ax.b.is_finite() {
                return Err(Error::EmptyDomain { axis: j, a: ax.a, b: ax.b });
            }
            len = len.saturating_mul(ax.n);
        }
        if len > budget {
            return Err(Error::MemoryBudgetExceeded { points: len, budget });
        }
        let spacing = axes.iter().map(|ax| (ax.b - ax.a) / ax.n as f64).collect();
        let mut strides = vec![1; axes.len()];
        for j in (0..axes.len() - 1).rev() {
            strides[j] = strides[j + 1] * axes[j + 1].n;
        }
        let wavenumbers = axes
            .iter()
            .map(|ax| {
                let n = ax.n as i64;
                let l = ax.b - ax.a;
                (0..n)
                    .map(|i| {
                        let m = if i < n / 2 { i } else { i - n };
                        2.0 * PI * m as f64 / l
                    })
                    .collect()
            })
            .collect();
        Ok(Arc::new(Grid {
            axes: axes.to_vec(),
            spacing,
            strides,
            wavenumbers,
            len,
            spectral: OnceLock::new(),
        }))
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[AxisSpec] {
        &self.axes
    }

    pub fn axis(&self, j: usize) -> &AxisSpec {
        &self.axes[j]
    }

    pub fn n(&self, j: usize) -> usize {
        self.axes[j].n
    }

    pub fn spacing(&self, j: usize) -> f64 {
        self.spacing[j]
    }

    pub fn length(&self, j: usize) -> f64 {
        self.axes[j].b - self.axes[j].a
    }

    pub fn stride(&self, j: usize) -> usize {
        self.strides[j]
    }

    /// Volume element of the Riemann quadrature.
    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Discrete wavenumbers of axis `j` in FFT order (0, 1, .., n/2-1, -n/2, .., -1) times 2π/L.
    pub fn wavenumbers(&self, j: usize) -> &[f64] {
        &self.wavenumbers[j]
    }

    pub fn coordinate(&self, j: usize, i: usize) -> f64 {
        self.axes[j].a + i as f64 * self.spacing[j]
    }

    pub fn coordinates(&self, j: usize) -> Vec<f64> {
        (0..self.n(j)).map(|i| self.coordinate(j, i)).collect()
    }

    /// Multi-index of a flat point index.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for j in 0..self.dims() {
            out[j] = flat / self.strides[j];
            flat %= self.strides[j];
        }
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        for j in 0..self.dims() {
            let i = (flat / self.strides[j]) % self.axes[j].n;
            out[j] = self.coordinate(j, i);
        }
    }

    /// Map a coordinate into `[a, b)` periodically.
    pub fn wrap(&self, j: usize, x: f64) -> f64 {
        let ax = &self.axes[j];
        let l = ax.b - ax.a;
        let mut y = ax.a + (x - ax.a).rem_euclid(l);
        if y >= ax.b {
            y = ax.a;
        }
        y
    }

    pub fn contains(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(&self.axes)
            .all(|(&x, ax)| x >= ax.a && x < ax.b)
    }

    /// Grid made of a contiguous subset of this grid's axes.
    pub fn sub_grid(&self, axes: std::ops::Range<usize>) -> Result<Arc<Grid>> {
        Grid::new(&self.axes[axes])
    }

    pub fn spectral(&self) -> Arc<Spectral> {
        self.spectral
            .get_or_init(|| Arc::new(Spectral::new(&self.axes)))
            .clone()
    }
}

pub fn make_grid(spec: &[AxisSpec]) -> Result<Arc<Grid>> {
    Grid::new(spec)
}

/// Particle content of the configuration space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub masses: Vec<f64>,
    pub dims_per_particle: Vec<usize>,
    pub hbar: f64,
    pub components: usize,
}

impl ParticleSystem {
    pub fn new(
        masses: Vec<f64>,
        dims_per_particle: Vec<usize>,
        hbar: f64,
        components: usize,
    ) -> Result<Self> {
        let sys = Self { masses, dims_per_particle, hbar, components };
        sys.validate()?;
        Ok(sys)
    }

    /// One particle of unit mass in `dims` dimensions, ħ = 1, scalar wave function.
    pub fn single(dims: usize) -> Self {
        Self { masses: vec![1.0], dims_per_particle: vec![dims], hbar: 1.0, components: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.masses.is_empty() || self.masses.len() != self.dims_per_particle.len() {
            return Err(Error::InvalidSystem("masses and dims_per_particle disagree".into()));
        }
        if self.masses.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(Error::InvalidSystem("masses must be positive".into()));
        }
        if self.dims_per_particle.contains(&0) {
            return Err(Error::InvalidSystem("particle with zero dimensions".into()));
        }
        if !(self.hbar > 0.0) || !self.hbar.is_finite() {
            return Err(Error::InvalidSystem("hbar must be positive".into()));
        }
        if self.components == 0 {
            return Err(Error::InvalidSystem("component count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.dims_per_particle.iter().sum()
    }

    /// Mass of the particle owning configuration dimension `j`.
    pub fn mass_of_dim(&self, j: usize) -> f64 {
        let mut acc = 0;
        for (m, &d) in self.masses.iter().zip(&self.dims_per_particle) {
            acc += d;
            if j < acc {
                return *m;
            }
        }
        panic!("dimension {j} outside particle system");
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.dims() != grid.dims() {
            return Err(Error::GridMismatch(format!(
                "system has {} dimensions, grid has {}",
                self.dims(),
                grid.dims()
            )));
        }
        Ok(())
    }
}

/// Complex `k`-component field on a grid.
///
/// Amplitudes are stored component-major: component `c` occupies
/// `data[c * len .. (c + 1) * len]`.
#[derive(Debug, Clone)]
pub struct WaveFunction {
    grid: Arc<Grid>,
    components: usize,
    data: Vec<Complex64>,
    time: f64,
    normalized: bool,
}

impl WaveFunction {
    pub fn new(grid: Arc<Grid>, components: usize, data: Vec<Complex64>, time: f64) -> Result<Self> {
        if components == 0 || data.len() != grid.len() * components {
            return Err(Error::GridMismatch(format!(
                "{} amplitudes for {} points x {} components",
                data.len(),
                grid.len(),
                components
            )));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, components, data, time, normalized: false })
    }

    pub fn zeros(grid: Arc<Grid>, components: usize) -> Self {
        let data = vec![Complex64::new(0.0, 0.0); grid.len() * components];
        Self { grid, components, data, time: 0.0, normalized: false }
    }

    /// Scalar field sampled from `f(q)`.
    pub fn from_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> Complex64) -> Result<Self> {
        let mut q = vec![0.0; grid.dims()];
        let data = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut q);
                f(&q)
            })
            .collect();
        Self::new(grid, 1, data, 0.0)
    }

    /// `k`-component field; `f(q, out)` fills the spinor at `q`.
    pub fn from_spinor_fn(
        grid: Arc<Grid>,
        components: usize,
        f: impl Fn(&[f64], &mut [Complex64]),
    ) -> Result<Self> {
        let len = grid.len();
        let mut data = vec![Complex64::new(0.0, 0.0); len * components];
        let mut q = vec![0.0; grid.dims()];
        let mut spinor = vec![Complex64::new(0.0, 0.0); components];
        for i in 0..len {
            grid.point(i, &mut q);
            f(&q, &mut spinor);
            for c in 0..components {
                data[c * len + i] = spinor[c];
            }
        }
        Self::new(grid, components, data, 0.0)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn component(&self, c: usize) -> &[Complex64] {
        let len = self.grid.len();
        &self.data[c * len..(c + 1) * len]
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Replace the amplitudes; used by propagators that preserve the norm.
    pub(crate) fn from_parts(
        grid: Arc<Grid>,
        components: usize,
        data: Vec<Complex64>,
        time: f64,
        normalized: bool,
    ) -> Self {
        Self { grid, components, data, time, normalized }
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, factor: Complex64) -> Self {
        let data = self.data.iter().map(|z| z * factor).collect();
        Self::from_parts(self.grid.clone(), self.components, data, self.time, false)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: Complex64, other: &WaveFunction, b: Complex64) -> Result<Self> {
        check_compatible(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        Ok(Self::from_parts(self.grid.clone(), self.components, data, self.time, false))
    }

    /// Mass of `|ψ|²` inside the region selected by `keep(q)`.
    pub fn mass_where(&self, keep: impl Fn(&[f64]) -> bool) -> f64 {
        let len = self.grid.len();
        let mut q = vec![0.0; self.grid.dims()];
        let mut acc = 0.0;
        for i in 0..len {
            self.grid.point(i, &mut q);
            if keep(&q) {
                for c in 0..self.components {
                    acc += self.data[c * len + i].norm_sqr();
                }
            }
        }
        acc * self.grid.cell_volume()
    }
}

fn check_compatible(a: &WaveFunction, b: &WaveFunction) -> Result<()> {
    if !Arc::ptr_eq(&a.grid, &b.grid) && *a.grid != *b.grid {
        return Err(Error::GridMismatch("wave functions live on different grids".into()));
    }
    if a.components != b.components {
        return Err(Error::GridMismatch(format!(
            "component counts differ ({} vs {})",
            a.components, b.components
        )));
    }
    Ok(())
}

/// `⟨φ|ψ⟩` by Riemann quadrature, contracting the spin index.
pub fn inner_product(phi: &WaveFunction, psi: &WaveFunction) -> Result<Complex64> {
    check_compatible(phi, psi)?;
    let len = phi.grid.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..len {
        for c in 0..phi.components {
            let k = c * len + i;
            acc += phi.data[k].conj() * psi.data[k];
        }
    }
    Ok(acc * phi.grid.cell_volume())
}

pub fn normalize(psi: &WaveFunction) -> Result<WaveFunction> {
    let norm = psi.norm();
    if !(norm >= 1e-300) {
        return Err(Error::ZeroNorm(norm));
    }
    let inv = 1.0 / norm;
    let data = psi.data.iter().map(|z| z * inv).collect();
    Ok(WaveFunction::from_parts(psi.grid.clone(), psi.components, data, psi.time, true))
}

/// Probability density and optionally the current on a grid.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub grid: Arc<Grid>,
    pub rho: Vec<f64>,
    /// Dimension-major current: `current[j * len + i]`.
    pub current: Option<Vec<f64>>,
}

impl DensityField {
    pub fn integral(&self) -> f64 {
        self.rho.iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Density summed over all axes except `axis`, times the other spacings.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let g = &self.grid;
        let n = g.n(axis);
        let stride = g.stride(axis);
        let mut out = vec![0.0; n];
        for (i, &r) in self.rho.iter().enumerate() {
            out[(i / stride) % n] += r;
        }
        let w = g.cell_volume() / g.spacing(axis);
        out.iter_mut().for_each(|v| *v *= w);
        out
    }
}

/// `ρ(q) = Σ_c |Ψ_c(q)|²`.
pub fn density(psi: &WaveFunction) -> DensityField {
    let len = psi.grid.len();
    let mut rho = vec![0.0; len];
    for i in 0..len {
        let mut acc = 0.0;
        for c in 0..psi.components {
            acc += psi.data[c * len + i].norm_sqr();
        }
        rho[i] = acc;
    }
    DensityField { grid: psi.grid.clone(), rho, current: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn gaussian(grid: Arc<Grid>, center: f64, sigma: f64) -> WaveFunction {
        let w = WaveFunction::from_fn(grid, |q| {
            Complex64::new((-(q[0] - center).powi(2) / (4.0 * sigma * sigma)).exp(), 0.0)
        })
        .unwrap();
        normalize(&w).unwrap()
    }

    #[test]
    fn grid_spacing_and_ladder() {
        let g = make_grid(&[AxisSpec::new(8, 0.0, 8.0)]).unwrap();
        assert_eq!(g.spacing(0), 1.0);
        let k = g.wavenumbers(0);
        let expect: Vec<f64> = [0, 1, 2, 3, -4, -3, -2, -1]
            .iter()
            .map(|&m| 2.0 * PI * m as f64 / 8.0)
            .collect();
        assert_eq!(k, expect.as_slice());

        let g = make_grid(&[AxisSpec::new(512, -20.0, 20.0)]).unwrap();
        assert_eq!(g.spacing(0), 0.078125);
    }

    #[test]
    fn grid_rejects_bad_specs() {
        assert!(matches!(
            make_grid(&[AxisSpec::new(7, 0.0, 1.0)]),
            Err(Error::NonPowerOfTwo { n: 7, .. })
        ));
        assert!(matches!(
            make_grid(&[AxisSpec::new(4, 0.0, 1.0)]),
            Err(Error::NonPowerOfTwo { .. })
        ));
        assert!(matches!(
            make_grid(&[AxisSpec::new(8, 1.0, 1.0)]),
            Err(Error::EmptyDomain { .. })
        ));
        assert!(matches!(
            Grid::with_budget(&[AxisSpec::new(64, 0.0, 1.0), AxisSpec::new(64, 0.0, 1.0)], 1000),
            Err(Error::MemoryBudgetExceeded { points: 4096, .. })
        ));
    }

    #[test]
    fn normalize_properties() {
        let g = make_grid(&[AxisSpec::new(256, -20.0, 20.0)]).unwrap();
        let psi = gaussian(g.clone(), 0.0, 1.0);
        assert_relative_eq!(inner_product(&psi, &psi).unwrap().re, 1.0, epsilon = 1e-10);

        let four = psi.scale(Complex64::new(4.0, 0.0));
        assert_relative_eq!(four.norm(), 4.0, epsilon = 1e-12);
        let back = normalize(&four).unwrap();
        assert!(back.is_normalized());
        for (a, b) in back.data().iter().zip(psi.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        let again = normalize(&back).unwrap();
        for (a, b) in again.data().iter().zip(back.data()) {
            assert!((a - b).norm() < 1e-12);
        }
        let zero = WaveFunction::zeros(g, 1);
        assert!(matches!(normalize(&zero), Err(Error::ZeroNorm(_))));
    }

    #[test]
    fn distant_gaussians_are_orthogonal() {
        // Closed form: |⟨g_a|g_b⟩| = exp(-D²/(8σ²)) = exp(-50) for D = 20σ.
        let g = make_grid(&[AxisSpec::new(1024, -40.0, 40.0)]).unwrap();
        let a = gaussian(g.clone(), -10.0, 1.0);
        let b = gaussian(g, 10.0, 1.0);
        let overlap = inner_product(&a, &b).unwrap().norm();
        assert!(overlap < 1e-10);
        assert_relative_eq!(overlap, (-50.0f64).exp(), max_relative = 1e-8);
    }

    #[test]
    fn inner_product_conjugate_symmetry_and_mismatch() {
        let g = make_grid(&[AxisSpec::new(64, -10.0, 10.0)]).unwrap();
        let a = WaveFunction::from_fn(g.clone(), |q| Complex64::new(0.0, q[0]).exp() * (-q[0] * q[0]).exp()).unwrap();
        let b = gaussian(g, 1.0, 0.7);
        let ab = inner_product(&a, &b).unwrap();
        let ba = inner_product(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-15);

        let other = make_grid(&[AxisSpec::new(32, -10.0, 10.0)]).unwrap();
        let c = gaussian(other, 0.0, 1.0);
        assert!(matches!(inner_product(&a, &c), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn density_of_spinor_and_bumps() {
        let g = make_grid(&[AxisSpec::new(512, -30.0, 30.0)]).unwrap();
        let up = gaussian(g.clone(), 0.0, 1.0);
        let spinor = WaveFunction::from_spinor_fn(g.clone(), 2, |q, out| {
            out[0] = Complex64::new((-(q[0] * q[0]) / 4.0).exp(), 0.0);
            out[1] = Complex64::new(0.0, 0.0);
        })
        .unwrap();
        let spinor = normalize(&spinor).unwrap();
        let rho = density(&spinor);
        let rho_up = density(&up);
        for (a, b) in rho.rho.iter().zip(&rho_up.rho) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_relative_eq!(rho.integral(), 1.0, epsilon = 1e-8);

        let left = gaussian(g.clone(), -10.0, 1.0);
        let right = gaussian(g, 10.0, 1.0);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let sup = left
            .combine(Complex64::new(h, 0.0), &right, Complex64::new(h, 0.0))
            .unwrap();
        let rho = density(&sup);
        let dx = rho.grid.cell_volume();
        let xs = rho.grid.coordinates(0);
        let left_mass: f64 =
            xs.iter().zip(&rho.rho).filter(|(x, _)| **x < 0.0).map(|(_, r)| r * dx).sum();
        let right_mass: f64 =
            xs.iter().zip(&rho.rho).filter(|(x, _)| **x >= 0.0).map(|(_, r)| r * dx).sum();
        assert_relative_eq!(left_mass, 0.5, epsilon = 1e-8);
        assert_relative_eq!(right_mass, 0.5, epsilon = 1e-8);
    }

    #[test]
    fn quadrature_consistency() {
        let g = make_grid(&[AxisSpec::new(128, -10.0, 10.0), AxisSpec::new(64, -5.0, 5.0)]).unwrap();
        let psi = WaveFunction::from_spinor_fn(g, 2, |q, out| {
            let r = (-(q[0] * q[0] + q[1] * q[1]) / 3.0).exp();
            out[0] = Complex64::new(r, 0.3 * r * q[0]);
            out[1] = Complex64::new(0.2 * r, -r * q[1]);
        })
        .unwrap();
        let ip = inner_product(&psi, &psi).unwrap();
        let integral = density(&psi).integral();
        assert!(((ip.re - integral) / integral).abs() < 1e-14);
        assert_eq!(ip.im, 0.0);
    }
}
