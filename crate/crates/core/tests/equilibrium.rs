#![allow(clippy::needless_range_loop)]

use bohmian::equilibrium::{
    continuity_residual, equivariance_test, ks_critical, ks_test, probability_current, sample_density, CellSampler,
    EquivarianceOptions,
};
use bohmian::evolution::{EvolutionParams, Potential};
use bohmian::{density, make_grid, normalize, AxisSpec, ParticleSystem, WaveFunction};
use num_complex::Complex64;

fn gaussian_1d(n: usize, half: f64, x0: f64, k0: f64) -> WaveFunction {
    let g = make_grid(&[AxisSpec::new(n, -half, half)]).unwrap();
    normalize(&WaveFunction::from_fn(g, |q| Complex64::new(-(q[0] - x0).powi(2) / 4.0, k0 * q[0]).exp()).unwrap()).unwrap()
}

#[test]
fn uniform_density_gives_uniform_samples() {
    let g = make_grid(&[AxisSpec::new(64, 0.0, 1.0)]).unwrap();
    let psi = normalize(&WaveFunction::from_fn(g, |_| Complex64::new(1.0, 0.0)).unwrap()).unwrap();
    let n = 100_000;
    let ens = sample_density(&psi, n, 11).unwrap();
    let xs: Vec<f64> = ens.members.iter().map(|m| m[0]).collect();
    assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    let ks = ks_test(&xs, |x| x.clamp(0.0, 1.0), 0.01);
    assert!(ks.statistic < 1.63 / (n as f64).sqrt(), "{ks:?}");
}

#[test]
fn concentrated_density_stays_in_its_cell() {
    let g = make_grid(&[AxisSpec::new(16, 0.0, 16.0), AxisSpec::new(8, 0.0, 8.0)]).unwrap();
    let target = 5 * 8 + 3;
    let data: Vec<Complex64> =
        (0..g.len()).map(|i| Complex64::new(if i == target { 1.0 } else { 0.0 }, 0.0)).collect();
    let psi = normalize(&WaveFunction::new(g, 1, data, 0.0).unwrap()).unwrap();
    for m in sample_density(&psi, 500, 3).unwrap().members {
        assert!((4.5..5.5).contains(&m[0]) && (2.5..3.5).contains(&m[1]), "{m:?}");
    }
}

#[test]
fn sampling_is_reproducible_and_order_free() {
    let psi = gaussian_1d(128, 10.0, 0.5, 0.0);
    let a = sample_density(&psi, 2000, 99).unwrap();
    let b = sample_density(&psi, 2000, 99).unwrap();
    assert_eq!(a, b);
    let sampler = CellSampler::new(&density(&psi)).unwrap();
    for j in [0u64, 17, 1999] {
        assert_eq!(sampler.draw(99, j), a.members[j as usize]);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let c = pool.install(|| sample_density(&psi, 2000, 99).unwrap());
    assert_eq!(a, c);
    assert_ne!(a, sample_density(&psi, 2000, 100).unwrap());
}

#[test]
fn binned_frequencies_match_cell_masses() {
    let g = make_grid(&[AxisSpec::new(64, -8.0, 8.0)]).unwrap();
    let psi = normalize(
        &WaveFunction::from_fn(g.clone(), |q| {
            let x = q[0];
            Complex64::new((-(x - 2.0).powi(2)).exp() + 0.5 * (-(x + 3.0).powi(2) / 2.0).exp(), 0.3 * x)
        })
        .unwrap(),
    )
    .unwrap();
    let n = 50_000;
    let ens = sample_density(&psi, n, 5).unwrap();
    let rho = density(&psi);
    let mut counts = vec![0.0; 64];
    for m in &ens.members {
        let i = (((m[0] + 8.0) / g.spacing(0) + 0.5).floor() as usize) % 64;
        counts[i] += 1.0;
    }
    let mut bad = 0;
    for i in 0..64 {
        let p = rho.rho[i] * g.cell_volume();
        if (counts[i] / n as f64 - p).abs() > 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12 {
            bad += 1;
        }
    }
    assert!(bad as f64 <= 0.01 * 64.0, "{bad} bins outside the bound");
}

#[test]
fn equivariance_at_time_zero_passes() {
    let psi = gaussian_1d(256, 20.0, 0.0, 1.0);
    let opts = EquivarianceOptions { evolution: EvolutionParams::new(0.01, 1), dt_traj: 0.01, alpha: 0.01 };
    let sys = ParticleSystem::single(1);
    let r = equivariance_test(&psi, &Potential::zero(psi.grid().clone()), &sys, 0.0, 20_000, 1, &opts).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn free_gaussian_equivariance() {
    let psi = gaussian_1d(512, 20.0, 0.0, 0.0);
    let opts = EquivarianceOptions { evolution: EvolutionParams::new(0.01, 1), dt_traj: 0.01, alpha: 0.01 };
    let sys = ParticleSystem::single(1);
    let n = 100_000;
    let r = equivariance_test(&psi, &Potential::zero(psi.grid().clone()), &sys, 2.0, n, 2024, &opts).unwrap();
    assert!(r.passed, "{r:?}");
    assert!((r.threshold - ks_critical(0.01, n)).abs() < 1e-15);
}

#[test]
fn transported_variance_matches_spreading_law() {
    use bohmian::dynamics::{integrate_ensemble, IntegrationOptions};
    use bohmian::evolution::evolve;
    let psi = gaussian_1d(512, 20.0, 0.0, 0.0);
    let sys = ParticleSystem::single(1);
    let mut h = evolve(&psi, &Potential::zero(psi.grid().clone()), &sys, 0.0, 2.0, &EvolutionParams::new(0.02, 1)).unwrap();
    let ens = sample_density(&psi, 10_000, 8).unwrap();
    let mut opts = IntegrationOptions::new(0.02);
    opts.record_stride = 0;
    let trajs = integrate_ensemble(&ens.members, &mut h, &sys, &opts).unwrap();
    let xs: Vec<f64> = trajs.iter().map(|t| t.last().q[0]).collect();
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // σ(2)² = 1 + (2/2)² = 2; a Gaussian sample variance has standard error σ²√(2/(n−1)).
    let se = 2.0 * (2.0 / (n - 1.0)).sqrt();
    assert!((var - 2.0).abs() < 3.0 * se, "var = {var}, se = {se}");
}

#[test]
fn currents_of_simple_states() {
    let g = make_grid(&[AxisSpec::new(64, 0.0, 2.0 * std::f64::consts::PI)]).unwrap();
    let sys = ParticleSystem::single(1);
    let kappa = 3.0;
    let plane = normalize(&WaveFunction::from_fn(g.clone(), |q| Complex64::new(0.0, kappa * q[0]).exp()).unwrap()).unwrap();
    let f = probability_current(&plane, &sys).unwrap();
    let rho0 = 1.0 / (2.0 * std::f64::consts::PI);
    for (j, r) in f.current.as_ref().unwrap().iter().zip(&f.rho) {
        assert!((r - rho0).abs() < 1e-12);
        assert!((j - rho0 * kappa).abs() < 1e-12);
    }
    let standing = normalize(&WaveFunction::from_fn(g.clone(), |q| Complex64::new(2.0 * (kappa * q[0]).cos(), 0.0)).unwrap()).unwrap();
    let f = probability_current(&standing, &sys).unwrap();
    assert!(f.current.unwrap().iter().all(|j| j.abs() < 1e-15));
    assert!(f.rho.iter().fold(0.0f64, |m, &r| m.max(r)) > 1.9 * rho0);
}

#[test]
fn continuity_residual_cases() {
    let sys = ParticleSystem::single(1);
    // Stationary oscillator ground state.
    let g = make_grid(&[AxisSpec::new(128, -10.0, 10.0)]).unwrap();
    let ground = normalize(&WaveFunction::from_fn(g.clone(), |q| Complex64::new((-q[0] * q[0] / 2.0).exp(), 0.0)).unwrap()).unwrap();
    let v = Potential::scalar_fn(g, |q| 0.5 * q[0] * q[0]).unwrap();
    assert!(continuity_residual(&ground, &v, &sys, 1e-3).unwrap() < 1e-8);

    let g = make_grid(&[AxisSpec::new(64, 0.0, 2.0 * std::f64::consts::PI)]).unwrap();
    let plane = normalize(&WaveFunction::from_fn(g.clone(), |q| Complex64::new(0.0, 2.0 * q[0]).exp()).unwrap()).unwrap();
    assert!(continuity_residual(&plane, &Potential::zero(g), &sys, 0.01).unwrap() < 1e-10);

    let psi = gaussian_1d(512, 20.0, -1.0, 1.5).with_time(0.0);
    let zero = Potential::zero(psi.grid().clone());
    let r: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&dt| continuity_residual(&psi, &zero, &sys, dt).unwrap()).collect();
    for w in r.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.5..=4.5).contains(&ratio), "{r:?}");
    }
}
