//! Strang split-operator evolution with scalar or Hermitian matrix potentials.

use std::collections::VecDeque;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ParticleSystem, WaveFunction};

const HERMITIAN_TOL: f64 = 1e-12;

/// Switching window: the potential is multiplied by `strength` while `t_on <= t < t_off`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_on: f64,
    pub t_off: f64,
    pub strength: f64,
}

/// Piecewise-constant switching schedule; outside every window the potential is off.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schedule {
    pub windows: Vec<Window>,
}

impl Schedule {
    pub fn window(t_on: f64, t_off: f64, strength: f64) -> Self {
        Self { windows: vec![Window { t_on, t_off, strength }] }
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        self.windows
            .iter()
            .find(|w| t >= w.t_on && t < w.t_off)
            .map_or(0.0, |w| w.strength)
    }
}

#[derive(Debug, Clone)]
pub enum PotentialField {
    Scalar(Vec<f64>),
    /// Point-major `k × k` blocks, row-major inside each block.
    Matrix { k: usize, data: Vec<Complex64> },
}

#[derive(Debug, Clone)]
pub struct Potential {
    grid: Arc<Grid>,
    field: PotentialField,
    schedule: Option<Schedule>,
}

impl Potential {
    pub fn zero(grid: Arc<Grid>) -> Self {
        let field = PotentialField::Scalar(vec![0.0; grid.len()]);
        Self { grid, field, schedule: None }
    }

    pub fn scalar(grid: Arc<Grid>, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch("potential length differs from grid".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { grid, field: PotentialField::Scalar(values), schedule: None })
    }

    pub fn scalar_fn(grid: Arc<Grid>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let mut q = vec![0.0; grid.dims()];
        let values = (0..grid.len())
            .map(|i| {
                grid.point(i, &mut q);
                f(&q)
            })
            .collect();
        Self::scalar(grid, values)
    }

    pub fn matrix(grid: Arc<Grid>, k: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.len() * k * k {
            return Err(Error::GridMismatch("matrix potential length differs from grid".into()));
        }
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        let mut worst = 0.0f64;
        for block in data.chunks(k * k) {
            for r in 0..k {
                for c in 0..k {
                    worst = worst.max((block[r * k + c] - block[c * k + r].conj()).norm());
                }
            }
        }
        if worst > HERMITIAN_TOL {
            return Err(Error::NonHermitianPotential(worst));
        }
        Ok(Self { grid, field: PotentialField::Matrix { k, data }, schedule: None })
    }

    /// `f(q, out)` writes the row-major `k × k` matrix at `q`.
    pub fn matrix_fn(grid: Arc<Grid>, k: usize, f: impl Fn(&[f64], &mut [Complex64])) -> Result<Self> {
        let mut q = vec![0.0; grid.dims()];
        let mut data = vec![Complex64::new(0.0, 0.0); grid.len() * k * k];
        for (i, block) in data.chunks_mut(k * k).enumerate() {
            grid.point(i, &mut q);
            f(&q, block);
        }
        Self::matrix(grid, k, data)
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn field(&self) -> &PotentialField {
        &self.field
    }

    pub fn schedule(&self) -> Option<&Schedule> {
        self.schedule.as_ref()
    }

    pub fn scale_at(&self, t: f64) -> f64 {
        self.schedule.as_ref().map_or(1.0, |s| s.scale_at(t))
    }

    fn distinct_scales(&self) -> Vec<f64> {
        match &self.schedule {
            None => vec![1.0],
            Some(s) => {
                let mut v = vec![0.0];
                for w in &s.windows {
                    if !v.contains(&w.strength) {
                        v.push(w.strength);
                    }
                }
                v
            }
        }
    }

    fn check(&self, psi: &WaveFunction) -> Result<()> {
        if **psi.grid() != *self.grid {
            return Err(Error::GridMismatch("potential and wave function grids differ".into()));
        }
        if let PotentialField::Matrix { k, .. } = self.field {
            if k != psi.components() {
                return Err(Error::GridMismatch(format!(
                    "{k}x{k} potential for a {}-component wave function",
                    psi.components()
                )));
            }
        }
        Ok(())
    }
}

fn hermiticity_defect(v: &DMatrix<Complex64>) -> f64 {
    (v - v.adjoint()).iter().fold(0.0f64, |m, z| m.max(z.norm()))
}

/// `exp(-i V dt / ħ)` for a Hermitian `k × k` matrix.
pub fn matrix_phase(v: &DMatrix<Complex64>, dt: f64, hbar: f64) -> Result<DMatrix<Complex64>> {
    if !v.is_square() {
        return Err(Error::GridMismatch("matrix potential must be square".into()));
    }
    let defect = hermiticity_defect(v);
    if defect > HERMITIAN_TOL {
        return Err(Error::NonHermitianPotential(defect));
    }
    let k = v.nrows();
    let theta = dt / hbar;
    match k {
        1 => Ok(DMatrix::from_element(1, 1, Complex64::new(0.0, -v[(0, 0)].re * theta).exp())),
        2 => {
            let [a, bx, by, bz] = pauli_components(v);
            let u = su2_phase(a, bx, by, bz, theta);
            Ok(DMatrix::from_row_slice(2, 2, &u))
        }
        _ => {
            let eig = nalgebra::SymmetricEigen::new(v.clone());
            let phases = eig
                .eigenvalues
                .map(|e| Complex64::new(0.0, -e * theta).exp());
            let q = &eig.eigenvectors;
            Ok(q * DMatrix::from_diagonal(&phases) * q.adjoint())
        }
    }
}

/// Decompose a Hermitian 2×2 matrix as `a·1 + bx·σx + by·σy + bz·σz`.
fn pauli_components(v: &DMatrix<Complex64>) -> [f64; 4] {
    let v00 = v[(0, 0)].re;
    let v11 = v[(1, 1)].re;
    let v01 = v[(0, 1)];
    [(v00 + v11) / 2.0, v01.re, -v01.im, (v00 - v11) / 2.0]
}

/// `exp(-iθ(a + b·σ))` as a row-major 2×2 array.
fn su2_phase(a: f64, bx: f64, by: f64, bz: f64, theta: f64) -> [Complex64; 4] {
    let r = (bx * bx + by * by + bz * bz).sqrt();
    let phase = Complex64::new(0.0, -a * theta).exp();
    let c = (r * theta).cos();
    // sin(rθ)/r, continuous at r = 0
    let s = if r * theta.abs() < 1e-8 { theta } else { (r * theta).sin() / r };
    let i = Complex64::new(0.0, 1.0);
    [
        phase * (c - i * s * bz),
        phase * (-i * s * Complex64::new(bx, -by)),
        phase * (-i * s * Complex64::new(bx, by)),
        phase * (c + i * s * bz),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParams {
    pub dt: f64,
    pub store_stride: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
}

fn default_max_steps() -> usize {
    1_000_000
}

impl EvolutionParams {
    pub fn new(dt: f64, store_stride: usize) -> Self {
        Self { dt, store_stride, max_steps: default_max_steps() }
    }
}

enum PhaseField {
    Identity,
    Scalar(Vec<Complex64>),
    Matrix { k: usize, data: Vec<Complex64> },
}

/// Precomputed Strang stepper for a fixed `dt`.
pub struct Propagator {
    grid: Arc<Grid>,
    system: ParticleSystem,
    potential: Arc<Potential>,
    dt: f64,
    kinetic: Vec<Complex64>,
    half_phases: Vec<(f64, PhaseField)>,
}

impl Propagator {
    pub fn new(potential: Arc<Potential>, system: &ParticleSystem, dt: f64) -> Result<Self> {
        system.validate()?;
        let grid = potential.grid().clone();
        system.check_grid(&grid)?;
        if !dt.is_finite() || dt == 0.0 {
            return Err(Error::InvalidSchedule(format!("time step {dt} must be finite and nonzero")));
        }
        let hbar = system.hbar;
        let d = grid.dims();
        let len = grid.len();
        let coeffs: Vec<f64> = (0..d).map(|j| hbar / (2.0 * system.mass_of_dim(j))).collect();
        let mut kinetic = Vec::with_capacity(len);
        let mut idx = vec![0usize; d];
        for i in 0..len {
            grid.unravel(i, &mut idx);
            let mut w = 0.0;
            for j in 0..d {
                let k = grid.wavenumbers(j)[idx[j]];
                w += coeffs[j] * k * k;
            }
            kinetic.push(Complex64::new(0.0, -w * dt).exp());
        }
        let half_phases = potential
            .distinct_scales()
            .into_iter()
            .map(|s| Ok((s, half_phase(&potential, s, dt, hbar)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, system: system.clone(), potential, dt, kinetic, half_phases })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn system(&self) -> &ParticleSystem {
        &self.system
    }

    pub fn potential(&self) -> &Arc<Potential> {
        &self.potential
    }

    /// One Strang step `e^{-iVdt/2ħ} e^{-iTdt/ħ} e^{-iVdt/2ħ}` with V at the step midpoint.
    pub fn step(&self, psi: &WaveFunction) -> Result<WaveFunction> {
        self.potential.check(psi)?;
        let scale = self.potential.scale_at(psi.time() + 0.5 * self.dt);
        let phase = &self
            .half_phases
            .iter()
            .find(|(s, _)| *s == scale)
            .expect("scale precomputed")
            .1;
        let k = psi.components();
        let len = self.grid.len();
        let mut data = psi.data().to_vec();
        apply_phase(phase, &mut data, k, len);
        let spec = self.grid.spectral();
        for comp in data.chunks_mut(len) {
            spec.forward(comp);
            comp.iter_mut().zip(&self.kinetic).for_each(|(z, p)| *z *= p);
            spec.inverse(comp);
        }
        apply_phase(phase, &mut data, k, len);
        Ok(WaveFunction::from_parts(
            self.grid.clone(),
            k,
            data,
            psi.time() + self.dt,
            psi.is_normalized(),
        ))
    }
}

fn half_phase(potential: &Potential, scale: f64, dt: f64, hbar: f64) -> Result<PhaseField> {
    if scale == 0.0 {
        return Ok(PhaseField::Identity);
    }
    let h = 0.5 * dt * scale;
    match potential.field() {
        PotentialField::Scalar(v) => Ok(PhaseField::Scalar(
            v.iter().map(|&x| Complex64::new(0.0, -x * h / hbar).exp()).collect(),
        )),
        PotentialField::Matrix { k, data } => {
            let k = *k;
            let mut out = Vec::with_capacity(data.len());
            for block in data.chunks(k * k) {
                let m = DMatrix::from_row_slice(k, k, block);
                let u = matrix_phase(&m, h, hbar)?;
                for r in 0..k {
                    for c in 0..k {
                        out.push(u[(r, c)]);
                    }
                }
            }
            Ok(PhaseField::Matrix { k, data: out })
        }
    }
}

fn apply_phase(phase: &PhaseField, data: &mut [Complex64], k: usize, len: usize) {
    match phase {
        PhaseField::Identity => {}
        PhaseField::Scalar(p) => {
            for comp in data.chunks_mut(len) {
                comp.iter_mut().zip(p).for_each(|(z, p)| *z *= p);
            }
        }
        PhaseField::Matrix { k: m, data: u } => {
            debug_assert_eq!(*m, k);
            let mut spinor = vec![Complex64::new(0.0, 0.0); k];
            for i in 0..len {
                let block = &u[i * k * k..(i + 1) * k * k];
                for (c, s) in spinor.iter_mut().enumerate() {
                    *s = data[c * len + i];
                }
                for r in 0..k {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for c in 0..k {
                        acc += block[r * k + c] * spinor[c];
                    }
                    data[r * len + i] = acc;
                }
            }
        }
    }
}

/// Single Strang step; builds a throwaway propagator.
pub fn step(psi: &WaveFunction, potential: &Potential, system: &ParticleSystem, dt: f64) -> Result<WaveFunction> {
    Propagator::new(Arc::new(potential.clone()), system, dt)?.step(psi)
}

/// Ordered snapshots of an evolution at a uniform interval.
#[derive(Debug, Clone)]
pub struct WaveFunctionHistory {
    pub snapshots: Vec<Arc<WaveFunction>>,
    pub interval: f64,
}

impl WaveFunctionHistory {
    pub fn start_time(&self) -> f64 {
        self.snapshots[0].time()
    }

    pub fn end_time(&self) -> f64 {
        self.snapshots.last().expect("non-empty history").time()
    }

    pub fn last(&self) -> &Arc<WaveFunction> {
        self.snapshots.last().expect("non-empty history")
    }
}

/// Random access to the snapshots of an evolution, possibly produced lazily.
pub trait SnapshotSource {
    fn len(&self) -> usize;
    fn start_time(&self) -> f64;
    /// Time between consecutive snapshots (0 for a single snapshot).
    fn interval(&self) -> f64;
    fn snapshot(&mut self, index: usize) -> Result<Arc<WaveFunction>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn time(&self, index: usize) -> f64 {
        self.start_time() + index as f64 * self.interval()
    }

    fn end_time(&self) -> f64 {
        self.time(self.len().saturating_sub(1))
    }
}

impl SnapshotSource for WaveFunctionHistory {
    fn len(&self) -> usize {
        self.snapshots.len()
    }

    fn start_time(&self) -> f64 {
        self.snapshots[0].time()
    }

    fn interval(&self) -> f64 {
        self.interval
    }

    fn snapshot(&mut self, index: usize) -> Result<Arc<WaveFunction>> {
        self.snapshots
            .get(index)
            .cloned()
            .ok_or_else(|| Error::TimeGridMismatch(format!("snapshot {index} out of range")))
    }
}

fn step_count(t0: f64, t1: f64, params: &EvolutionParams) -> Result<usize> {
    if !(params.dt > 0.0) {
        return Err(Error::InvalidSchedule("dt must be positive".into()));
    }
    if params.store_stride == 0 {
        return Err(Error::InvalidSchedule("store_stride must be >= 1".into()));
    }
    if t1 < t0 {
        return Err(Error::InvalidSchedule(format!("t1 = {t1} precedes t0 = {t0}")));
    }
    let span = t1 - t0;
    let steps_f = (span / params.dt).round();
    if (steps_f * params.dt - span).abs() > 1e-9 * span.max(1.0) {
        return Err(Error::InvalidSchedule(format!("span {span} is not a multiple of dt {}", params.dt)));
    }
    if steps_f > params.max_steps as f64 {
        return Err(Error::StepBudgetExceeded { steps: steps_f as usize, budget: params.max_steps });
    }
    let steps = steps_f as usize;
    if !steps.is_multiple_of(params.store_stride) {
        return Err(Error::InvalidSchedule(format!(
            "{steps} steps are not a multiple of store_stride {}",
            params.store_stride
        )));
    }
    Ok(steps)
}

/// Evolve from `t0` to `t1`, keeping every `store_stride`-th state.
pub fn evolve(
    psi: &WaveFunction,
    potential: &Potential,
    system: &ParticleSystem,
    t0: f64,
    t1: f64,
    params: &EvolutionParams,
) -> Result<WaveFunctionHistory> {
    let steps = step_count(t0, t1, params)?;
    let start = psi.clone().with_time(t0);
    potential.check(&start)?;
    let interval = params.dt * params.store_stride as f64;
    if steps == 0 {
        return Ok(WaveFunctionHistory { snapshots: vec![Arc::new(start)], interval });
    }
    let prop = Propagator::new(Arc::new(potential.clone()), system, params.dt)?;
    let mut snapshots = Vec::with_capacity(steps / params.store_stride + 1);
    let mut current = start;
    snapshots.push(Arc::new(current.clone()));
    for j in 1..=steps {
        current = prop.step(&current)?;
        if j % params.store_stride == 0 {
            // pin the tag to the nominal grid time so snapshot times carry no drift
            current = current.with_time(t0 + j as f64 * params.dt);
            snapshots.push(Arc::new(current.clone()));
        }
    }
    Ok(WaveFunctionHistory { snapshots, interval })
}

/// Evolution that produces snapshots on demand, keeping only a short window.
///
/// Requests must be (weakly) increasing apart from the retained window.
pub struct StreamingHistory {
    propagator: Propagator,
    stride: usize,
    t0: f64,
    count: usize,
    current: WaveFunction,
    current_index: usize,
    window: VecDeque<(usize, Arc<WaveFunction>)>,
    keep: usize,
}

impl StreamingHistory {
    pub fn new(
        psi: &WaveFunction,
        potential: Arc<Potential>,
        system: &ParticleSystem,
        t0: f64,
        t1: f64,
        params: &EvolutionParams,
    ) -> Result<Self> {
        let steps = step_count(t0, t1, params)?;
        let start = psi.clone().with_time(t0);
        potential.check(&start)?;
        let propagator = Propagator::new(potential, system, params.dt)?;
        let mut window = VecDeque::new();
        window.push_back((0, Arc::new(start.clone())));
        Ok(Self {
            propagator,
            stride: params.store_stride,
            t0,
            count: steps / params.store_stride + 1,
            current: start,
            current_index: 0,
            window,
            keep: 8,
        })
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }
}

impl SnapshotSource for StreamingHistory {
    fn len(&self) -> usize {
        self.count
    }

    fn start_time(&self) -> f64 {
        self.t0
    }

    fn interval(&self) -> f64 {
        self.propagator.dt * self.stride as f64
    }

    fn snapshot(&mut self, index: usize) -> Result<Arc<WaveFunction>> {
        if index >= self.count {
            return Err(Error::TimeGridMismatch(format!("snapshot {index} beyond horizon")));
        }
        while self.current_index < index {
            for _ in 0..self.stride {
                self.current = self.propagator.step(&self.current)?;
            }
            self.current_index += 1;
            let t = self.time(self.current_index);
            self.current = std::mem::replace(&mut self.current, WaveFunction::zeros(self.propagator.grid.clone(), 1)).with_time(t);
            self.window.push_back((self.current_index, Arc::new(self.current.clone())));
            while self.window.len() > self.keep {
                self.window.pop_front();
            }
        }
        self.window
            .iter()
            .find(|(i, _)| *i == index)
            .map(|(_, w)| w.clone())
            .ok_or_else(|| Error::TimeGridMismatch(format!("snapshot {index} already evicted")))
    }
}

/// `⟨ψ|H|ψ⟩` with the spectral kinetic energy and the potential at time `t`.
pub fn energy(psi: &WaveFunction, potential: &Potential, system: &ParticleSystem, t: f64) -> Result<f64> {
    potential.check(psi)?;
    system.check_grid(psi.grid())?;
    let grid = psi.grid();
    let len = grid.len();
    let d = grid.dims();
    let hbar = system.hbar;
    let mut idx = vec![0usize; d];
    let tk: Vec<f64> = (0..len)
        .map(|i| {
            grid.unravel(i, &mut idx);
            (0..d)
                .map(|j| {
                    let k = grid.wavenumbers(j)[idx[j]];
                    hbar * hbar * k * k / (2.0 * system.mass_of_dim(j))
                })
                .sum()
        })
        .collect();
    let spec = grid.spectral();
    let mut kinetic = 0.0;
    for c in 0..psi.components() {
        let mut hat = psi.component(c).to_vec();
        spec.forward(&mut hat);
        kinetic += hat.iter().zip(&tk).map(|(z, t)| z.norm_sqr() * t).sum::<f64>();
    }
    kinetic *= grid.cell_volume() / len as f64;
    let scale = potential.scale_at(t);
    let k = psi.components();
    let pot = match potential.field() {
        PotentialField::Scalar(v) => {
            (0..k)
                .map(|c| psi.component(c).iter().zip(v).map(|(z, v)| z.norm_sqr() * v).sum::<f64>())
                .sum::<f64>()
        }
        PotentialField::Matrix { data, .. } => {
            let mut acc = 0.0;
            for i in 0..len {
                let block = &data[i * k * k..(i + 1) * k * k];
                for r in 0..k {
                    for c in 0..k {
                        acc += (psi.data()[r * len + i].conj() * block[r * k + c] * psi.data()[c * len + i]).re;
                    }
                }
            }
            acc
        }
    };
    Ok(kinetic + scale * pot * grid.cell_volume())
}
