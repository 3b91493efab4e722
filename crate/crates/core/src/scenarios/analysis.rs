//! Histogram and density diagnostics used by scenario reports.

use serde::{Deserialize, Serialize};

use crate::grid::{DensityField, Grid, WaveFunction};

/// Fixed-width bins over `[lo, hi)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub width: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, width: f64) -> Self {
        let n = ((hi - lo) / width).round().max(1.0) as usize;
        Self { lo, width, counts: vec![0.0; n] }
    }

    pub fn fill(&mut self, xs: impl IntoIterator<Item = f64>) {
        for x in xs {
            let i = ((x - self.lo) / self.width).floor();
            if i >= 0.0 && (i as usize) < self.counts.len() {
                self.counts[i as usize] += 1.0;
            }
        }
    }

    pub fn edges(&self, i: usize) -> (f64, f64) {
        let a = self.lo + i as f64 * self.width;
        (a, a + self.width)
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Local maxima reaching half the tallest bin whose topographic prominence exceeds three
/// Poisson standard deviations of the peak-minus-base difference.
pub fn significant_maxima(counts: &[f64]) -> Vec<usize> {
    let n = counts.len();
    let top = counts.iter().fold(0.0f64, |m, &c| m.max(c));
    if top <= 0.0 {
        return Vec::new();
    }
    let mut peaks = Vec::new();
    for i in 0..n {
        let c = counts[i];
        let left_ok = i == 0 || c > counts[i - 1];
        let right_ok = i + 1 == n || c >= counts[i + 1];
        if !(left_ok && right_ok) || c < 0.5 * top {
            continue;
        }
        let mut left_min = c;
        for &v in counts[..i].iter().rev() {
            if v > c {
                break;
            }
            left_min = left_min.min(v);
        }
        let mut right_min = c;
        for &v in &counts[i + 1..] {
            if v > c {
                break;
            }
            right_min = right_min.min(v);
        }
        let base = left_min.max(right_min);
        if c - base > 3.0 * (c + base).sqrt() {
            peaks.push(i);
        }
    }
    peaks
}

/// Largest probability in the first or last cell slab of any axis.
pub fn outer_cell_mass(rho: &DensityField) -> f64 {
    let g = &rho.grid;
    (0..g.dims())
        .map(|j| {
            let m = rho.marginal(j);
            let h = g.spacing(j);
            (m[0] * h).max(m[m.len() - 1] * h)
        })
        .fold(0.0, f64::max)
}

/// Mean and standard deviation of the marginal density along `axis`.
pub fn marginal_moments(rho: &DensityField, axis: usize) -> (f64, f64) {
    let g = &rho.grid;
    let m = rho.marginal(axis);
    let xs = g.coordinates(axis);
    let total: f64 = m.iter().sum();
    let mean = m.iter().zip(&xs).map(|(p, x)| p * x).sum::<f64>() / total;
    let var = m.iter().zip(&xs).map(|(p, x)| p * (x - mean).powi(2)).sum::<f64>() / total;
    (mean, var.sqrt())
}

/// Largest `|ρ(…, q_axis, …) − ρ(…, −q_axis, …)|` relative to `max ρ`, on grids symmetric about zero.
pub fn mirror_asymmetry(rho: &DensityField, axis: usize) -> Option<f64> {
    let g = &rho.grid;
    let ax = g.axis(axis);
    if (ax.a + ax.b).abs() > 1e-12 * ax.b.abs().max(1.0) {
        return None;
    }
    let n = ax.n;
    let stride = g.stride(axis);
    let top = rho.rho.iter().fold(0.0f64, |m, &r| m.max(r));
    let mut worst = 0.0f64;
    for (flat, &r) in rho.rho.iter().enumerate() {
        let i = (flat / stride) % n;
        let mirror = flat - i * stride + ((n - i) % n) * stride;
        worst = worst.max((r - rho.rho[mirror]).abs());
    }
    Some(worst / top)
}

/// `∫ |ψ_a| |ψ_b|` between two components of a spinor.
pub fn component_overlap(psi: &WaveFunction, a: usize, b: usize) -> f64 {
    let dv = psi.grid().cell_volume();
    psi.component(a).iter().zip(psi.component(b)).map(|(x, y)| x.norm() * y.norm()).sum::<f64>() * dv
}

/// Mass and centroid along `axis` of one component.
pub fn component_centroid(psi: &WaveFunction, c: usize, axis: usize) -> (f64, f64) {
    let g = psi.grid();
    let dv = g.cell_volume();
    let mut q = vec![0.0; g.dims()];
    let (mut mass, mut first) = (0.0, 0.0);
    for (i, z) in psi.component(c).iter().enumerate() {
        g.point(i, &mut q);
        let p = z.norm_sqr() * dv;
        mass += p;
        first += p * q[axis];
    }
    (mass, if mass > 0.0 { first / mass } else { 0.0 })
}

/// Nearest grid index along one axis, periodic.
pub fn nearest_index(grid: &Grid, axis: usize, x: f64) -> usize {
    let ax = grid.axis(axis);
    let u = ((x - ax.a) / grid.spacing(axis)).round() as i64;
    u.rem_euclid(ax.n as i64) as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn maxima_ignore_noise_and_low_peaks() {
        let mut c = vec![0.0; 60];
        for (k, centre) in [10usize, 30, 50].iter().enumerate() {
            for i in 0..60 {
                let d = i as f64 - *centre as f64;
                c[i] += [400.0, 100.0, 390.0][k] * (-d * d / 8.0).exp();
            }
        }
        c[20] += 3.0;
        assert_eq!(significant_maxima(&c), vec![10, 50]);
    }

    #[test]
    fn histogram_bins() {
        let mut h = Histogram::new(-1.0, 1.0, 0.5);
        h.fill([-1.0, -0.6, 0.0, 0.99, 1.0]);
        assert_eq!(h.counts, vec![2.0, 0.0, 1.0, 1.0]);
        assert_eq!(h.edges(1), (-0.5, 0.0));
    }
}
