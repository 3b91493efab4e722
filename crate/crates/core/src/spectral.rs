//! Multi-dimensional FFTs and spectral derivatives on periodic grids.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::{AxisSpec, Grid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Cached FFT plans for every axis of a grid.
pub struct Spectral {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl Spectral {
    pub fn new(axes: &[AxisSpec]) -> Self {
        let mut planner = FftPlanner::new();
        let shape: Vec<usize> = axes.iter().map(|a| a.n).collect();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        Self { shape, forward, inverse }
    }

    fn len(&self) -> usize {
        self.shape.iter().product()
    }

    /// Unnormalized transform of one scalar field along a single axis.
    pub fn transform_axis(&self, buf: &mut [Complex64], axis: usize, dir: Direction) {
        debug_assert_eq!(buf.len(), self.len());
        let plan = match dir {
            Direction::Forward => &self.forward[axis],
            Direction::Inverse => &self.inverse[axis],
        };
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        if inner == 1 {
            plan.process(buf);
            return;
        }
        // Gather strided lines of one outer block, transform them together, scatter back.
        let block = n * inner;
        let mut lines = vec![Complex64::new(0.0, 0.0); block];
        for chunk in buf.chunks_mut(block) {
            for i in 0..n {
                let row = &chunk[i * inner..(i + 1) * inner];
                for (j, &z) in row.iter().enumerate() {
                    lines[j * n + i] = z;
                }
            }
            plan.process(&mut lines);
            for i in 0..n {
                let row = &mut chunk[i * inner..(i + 1) * inner];
                for (j, z) in row.iter_mut().enumerate() {
                    *z = lines[j * n + i];
                }
            }
        }
    }

    pub fn forward(&self, buf: &mut [Complex64]) {
        for axis in 0..self.shape.len() {
            self.transform_axis(buf, axis, Direction::Forward);
        }
    }

    /// Inverse transform including the 1/N normalization.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        for axis in 0..self.shape.len() {
            self.transform_axis(buf, axis, Direction::Inverse);
        }
        let s = 1.0 / self.len() as f64;
        buf.iter_mut().for_each(|z| *z *= s);
    }
}

/// Wavenumber used for first derivatives: the Nyquist mode is dropped so
/// that derivatives of real fields stay real.
pub fn derivative_wavenumbers(grid: &Grid, axis: usize) -> Vec<f64> {
    let mut k = grid.wavenumbers(axis).to_vec();
    let n = k.len();
    k[n / 2] = 0.0;
    k
}

/// Multiply a spectrum by `i k_axis` (the spectral first derivative).
pub fn apply_derivative(grid: &Grid, spectrum: &[Complex64], axis: usize, out: &mut [Complex64]) {
    let k = derivative_wavenumbers(grid, axis);
    let n = grid.n(axis);
    let stride = grid.stride(axis);
    for (i, (o, s)) in out.iter_mut().zip(spectrum).enumerate() {
        let kk = k[(i / stride) % n];
        *o = Complex64::new(-s.im * kk, s.re * kk);
    }
}

/// Spectral gradient of a scalar field: one field per axis.
pub fn gradient(grid: &Grid, field: &[Complex64]) -> Vec<Vec<Complex64>> {
    let spec = grid.spectral();
    let mut hat = field.to_vec();
    spec.forward(&mut hat);
    (0..grid.dims())
        .map(|axis| {
            let mut d = vec![Complex64::new(0.0, 0.0); hat.len()];
            apply_derivative(grid, &hat, axis, &mut d);
            spec.inverse(&mut d);
            d
        })
        .collect()
}

/// Spectral gradient taken separately on the real and imaginary parts, so a
/// real field has an exactly real gradient.
pub fn gradient_split(grid: &Grid, field: &[Complex64]) -> Vec<Vec<Complex64>> {
    let part = |f: fn(&Complex64) -> f64| -> Option<Vec<Vec<f64>>> {
        let vals: Vec<Complex64> = field.iter().map(|z| Complex64::new(f(z), 0.0)).collect();
        if vals.iter().all(|z| z.re == 0.0) {
            return None;
        }
        Some(gradient(grid, &vals).into_iter().map(|g| g.iter().map(|z| z.re).collect()).collect())
    };
    let re = part(|z| z.re);
    let im = part(|z| z.im);
    (0..grid.dims())
        .map(|j| {
            (0..field.len())
                .map(|i| {
                    Complex64::new(
                        re.as_ref().map_or(0.0, |r| r[j][i]),
                        im.as_ref().map_or(0.0, |m| m[j][i]),
                    )
                })
                .collect()
        })
        .collect()
}

/// Spectral derivative of a complex field along one axis only.
pub fn derivative_along(grid: &Grid, field: &[Complex64], axis: usize) -> Vec<Complex64> {
    let spec = grid.spectral();
    let mut hat = field.to_vec();
    spec.transform_axis(&mut hat, axis, Direction::Forward);
    let mut out = vec![Complex64::new(0.0, 0.0); hat.len()];
    apply_derivative(grid, &hat, axis, &mut out);
    spec.transform_axis(&mut out, axis, Direction::Inverse);
    let s = 1.0 / grid.n(axis) as f64;
    out.iter_mut().for_each(|z| *z *= s);
    out
}

/// Spectral antiderivative of a real field along `axis`, pinned to zero at the first node
/// of every line. The field must have zero mean along each line.
pub fn antiderivative_along(grid: &Grid, field: &[f64], axis: usize) -> Vec<f64> {
    let spec = grid.spectral();
    let n = grid.n(axis);
    let stride = grid.stride(axis);
    let k = derivative_wavenumbers(grid, axis);
    let mut hat: Vec<Complex64> = field.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    spec.transform_axis(&mut hat, axis, Direction::Forward);
    for (i, z) in hat.iter_mut().enumerate() {
        let kk = k[(i / stride) % n];
        *z = if kk == 0.0 { Complex64::new(0.0, 0.0) } else { *z / Complex64::new(0.0, kk) };
    }
    spec.transform_axis(&mut hat, axis, Direction::Inverse);
    let s = 1.0 / n as f64;
    let mut out: Vec<f64> = hat.iter().map(|z| z.re * s).collect();
    let block = n * stride;
    for b in (0..out.len()).step_by(block) {
        for inner in 0..stride {
            let base = out[b + inner];
            for i in 0..n {
                out[b + i * stride + inner] -= base;
            }
        }
    }
    out
}

/// Spectral divergence of a real vector field stored dimension-major.
pub fn divergence(grid: &Grid, field: &[f64]) -> Vec<f64> {
    let len = grid.len();
    let spec = grid.spectral();
    let mut acc = vec![Complex64::new(0.0, 0.0); len];
    for axis in 0..grid.dims() {
        let mut hat: Vec<Complex64> = field[axis * len..(axis + 1) * len]
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        spec.forward(&mut hat);
        let mut d = vec![Complex64::new(0.0, 0.0); len];
        apply_derivative(grid, &hat, axis, &mut d);
        acc.iter_mut().zip(&d).for_each(|(a, b)| *a += b);
    }
    spec.inverse(&mut acc);
    acc.iter().map(|z| z.re).collect()
}


/// Band-limited resampling of periodic samples onto a grid `factor` times finer, or of
/// their derivative when `derivative` is set. `length` is the period.
pub fn refine_periodic(values: &[Complex64], length: f64, factor: usize, derivative: bool) -> Vec<Complex64> {
    let n = values.len();
    let m = n * factor;
    let coarse = Spectral::new(&[AxisSpec::new(n, 0.0, length)]);
    let fine = Spectral::new(&[AxisSpec::new(m, 0.0, length)]);
    let mut hat = values.to_vec();
    coarse.transform_axis(&mut hat, 0, Direction::Forward);
    let two_pi = 2.0 * std::f64::consts::PI / length;
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for (k, z) in hat.iter().enumerate() {
        let z = z / n as f64;
        if k < n / 2 {
            let d = if derivative { Complex64::new(0.0, two_pi * k as f64) } else { Complex64::new(1.0, 0.0) };
            buf[k] += z * d;
        } else if k == n / 2 {
            // Split Nyquist evenly; its derivative is dropped.
            if !derivative {
                buf[k] += z * 0.5;
                buf[m - n / 2] += z * 0.5;
            }
        } else {
            let kk = k as f64 - n as f64;
            let d = if derivative { Complex64::new(0.0, two_pi * kk) } else { Complex64::new(1.0, 0.0) };
            buf[m - (n - k)] += z * d;
        }
    }
    fine.transform_axis(&mut buf, 0, Direction::Inverse);
    buf
}

#[cfg(test)]
mod refine_tests {
    use super::*;

    #[test]
    fn refinement_reproduces_band_limited_function() {
        let n = 32;
        let l = 2.0 * std::f64::consts::PI;
        let f = |x: f64| (3.0 * x).sin() + 0.5 * (5.0 * x).cos();
        let df = |x: f64| 3.0 * (3.0 * x).cos() - 2.5 * (5.0 * x).sin();
        let v: Vec<Complex64> = (0..n).map(|i| Complex64::new(f(i as f64 * l / n as f64), 0.0)).collect();
        let r = refine_periodic(&v, l, 4, false);
        let d = refine_periodic(&v, l, 4, true);
        for (i, (a, b)) in r.iter().zip(&d).enumerate() {
            let x = i as f64 * l / (4 * n) as f64;
            assert!((a.re - f(x)).abs() < 1e-12 && a.im.abs() < 1e-12);
            assert!((b.re - df(x)).abs() < 1e-11);
        }
    }
}
