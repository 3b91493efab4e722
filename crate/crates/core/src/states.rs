//! Closed-form one-dimensional states used to build initial data.

use num_complex::Complex64;

/// Normalized Gaussian packet whose density has standard deviation `sigma`.
pub fn gaussian(x: f64, center: f64, sigma: f64, k0: f64) -> Complex64 {
    let norm = (2.0 * std::f64::consts::PI * sigma * sigma).powf(-0.25);
    let u = x - center;
    Complex64::new(-u * u / (4.0 * sigma * sigma), k0 * x).exp() * norm
}

/// Harmonic-oscillator eigenfunction `n` for mass `m`, frequency `omega` and `hbar`.
pub fn hermite_function(n: usize, x: f64, mass: f64, omega: f64, hbar: f64) -> f64 {
    let a = (mass * omega / hbar).sqrt();
    let xi = a * x;
    // Normalized recurrence: h_{k+1} = sqrt(2/(k+1)) ξ h_k − sqrt(k/(k+1)) h_{k−1}.
    let mut prev = 0.0;
    let mut cur = (a / std::f64::consts::PI.sqrt()).sqrt() * (-xi * xi / 2.0).exp();
    for k in 0..n {
        let next = (2.0 / (k + 1) as f64).sqrt() * xi * cur - (k as f64 / (k + 1) as f64).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Oscillator energy `ħω(n + 1/2)`.
pub fn oscillator_energy(n: usize, omega: f64, hbar: f64) -> f64 {
    hbar * omega * (n as f64 + 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_functions_are_orthonormal() {
        let h = 0.01;
        let xs: Vec<f64> = (-1500..=1500).map(|i| i as f64 * h).collect();
        for n in 0..5 {
            for m in 0..5 {
                let s: f64 = xs.iter().map(|&x| hermite_function(n, x, 1.0, 1.0, 1.0) * hermite_function(m, x, 1.0, 1.0, 1.0)).sum::<f64>() * h;
                assert!((s - if n == m { 1.0 } else { 0.0 }).abs() < 1e-10);
            }
        }
        // ψ₁(x) = √2 x ψ₀(x)
        let x = 0.7;
        assert!((hermite_function(1, x, 1.0, 1.0, 1.0) - 2f64.sqrt() * x * hermite_function(0, x, 1.0, 1.0, 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gaussian_density_width() {
        let h = 0.01;
        let (m2, m0): (f64, f64) = (-2000..=2000)
            .map(|i| {
                let x = i as f64 * h;
                let r = gaussian(x, 0.0, 1.5, 2.0).norm_sqr();
                (x * x * r * h, r * h)
            })
            .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        assert!((m0 - 1.0).abs() < 1e-12);
        assert!((m2 - 2.25).abs() < 1e-10);
    }
}
