//! Local cubic Lagrange interpolation on periodic grids.

use crate::grid::Grid;

/// Four-point Lagrange weights for nodes at -1, 0, 1, 2 evaluated at `t ∈ [0, 1)`.
pub fn cubic_weights(t: f64) -> [f64; 4] {
    let tm1 = t - 1.0;
    let tm2 = t - 2.0;
    let tp1 = t + 1.0;
    [
        -t * tm1 * tm2 / 6.0,
        tp1 * tm1 * tm2 / 2.0,
        -tp1 * t * tm2 / 2.0,
        tp1 * t * tm1 / 6.0,
    ]
}

/// Tensor-product stencil: `4^d` flat indices with their weights.
#[derive(Debug, Clone)]
pub struct Stencil {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Stencil {
    pub fn new(grid: &Grid, q: &[f64]) -> Self {
        let d = grid.dims();
        let mut axis_idx = vec![[0usize; 4]; d];
        let mut axis_w = vec![[0.0f64; 4]; d];
        for j in 0..d {
            let ax = grid.axis(j);
            let u = (q[j] - ax.a) / grid.spacing(j);
            let base = u.floor();
            let t = u - base;
            let n = ax.n as i64;
            let base = base as i64;
            let w = cubic_weights(t);
            for s in 0..4 {
                let i = (base - 1 + s as i64).rem_euclid(n) as usize;
                axis_idx[j][s] = i * grid.stride(j);
                axis_w[j][s] = w[s];
            }
        }
        let count = 4usize.pow(d as u32);
        let mut indices = Vec::with_capacity(count);
        let mut weights = Vec::with_capacity(count);
        let mut digits = vec![0usize; d];
        for _ in 0..count {
            let mut idx = 0;
            let mut w = 1.0;
            for j in 0..d {
                idx += axis_idx[j][digits[j]];
                w *= axis_w[j][digits[j]];
            }
            indices.push(idx);
            weights.push(w);
            for j in (0..d).rev() {
                digits[j] += 1;
                if digits[j] < 4 {
                    break;
                }
                digits[j] = 0;
            }
        }
        Self { indices, weights }
    }

    pub fn apply<T>(&self, field: &[T]) -> T
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + Default,
    {
        self.indices
            .iter()
            .zip(&self.weights)
            .fold(T::default(), |acc, (&i, &w)| acc + field[i] * w)
    }
}

/// Lagrange weights for interpolating at `t` from nodes `ts`.
pub fn lagrange_weights(ts: &[f64], t: f64) -> Vec<f64> {
    (0..ts.len())
        .map(|i| {
            ts.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .fold(1.0, |acc, (_, &tj)| acc * (t - tj) / (ts[i] - tj))
        })
        .collect()
}


/// Uniformly sampled periodic function on `[a, a + n·h)` with cubic evaluation.
#[derive(Debug, Clone)]
pub struct PeriodicTable<T> {
    a: f64,
    h: f64,
    data: Vec<T>,
}

impl<T> PeriodicTable<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
{
    pub fn new(a: f64, h: f64, data: Vec<T>) -> Self {
        Self { a, h, data }
    }

    pub fn eval(&self, x: f64) -> T {
        let n = self.data.len() as i64;
        let u = (x - self.a) / self.h;
        let base = u.floor();
        let w = cubic_weights(u - base);
        let base = base as i64;
        let at = |s: i64| self.data[(base - 1 + s).rem_euclid(n) as usize];
        at(0) * w[0] + at(1) * w[1] + at(2) * w[2] + at(3) * w[3]
    }
}
