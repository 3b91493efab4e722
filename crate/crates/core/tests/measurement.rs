#![allow(clippy::needless_range_loop)]

use bohmian::measurement::{
    born_statistics, branch_irrelevance, conditional_dynamics_check, conditional_wavefunction,
    effective_wavefunction_check, finite_mass_cross_check, pvm_expectation, run_ideal_measurement, CouplingGuidance,
    FiniteMassConfig, MeasurementConfig, MeasurementSetup, PremeasurementField,
};
use bohmian::spectral::divergence;
use bohmian::{inner_product, normalize, Error, WaveFunction};
use num_complex::Complex64;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

fn reference() -> MeasurementSetup {
    MeasurementSetup::reference([c(0.6), c(0.8)]).unwrap()
}

#[test]
fn setup_gates() {
    let s = reference();
    // FWHM of a Gaussian density with σ = 0.25.
    assert!((s.pointer_width() - 0.25 * 2.0 * (2.0 * 2f64.ln()).sqrt()).abs() < 1e-3);
    assert!((s.min_separation() - 5.0).abs() < 1e-12);
    let mut cfg = MeasurementConfig::reference();
    cfg.duration = 1.0;
    cfg.snapshot_interval = 0.025;
    assert!(matches!(MeasurementSetup::from_config(&cfg), Err(Error::SeparationTooSmall(_))));
    let mut cfg = MeasurementConfig::reference();
    cfg.eigenvalues = vec![1.0, 1.0];
    assert!(MeasurementSetup::from_config(&cfg).is_err());
}

#[test]
fn premeasurement_endpoints() {
    let s = reference();
    let psi0 = s.premeasurement_unitary(0.0).unwrap();
    let ny = s.y_grid().n(0);
    let chi: Vec<Complex64> = (0..s.x_grid().n(0))
        .map(|ix| s.eigenstates()[0].data()[ix] * 0.6 + s.eigenstates()[1].data()[ix] * 0.8)
        .collect();
    for ix in 0..s.x_grid().n(0) {
        for iy in 0..ny {
            let expect = chi[ix] * s.pointer().data()[iy];
            assert!((psi0.data()[ix * ny + iy] - expect).norm() < 1e-12);
        }
    }
    // Gaussian overlap of density-σ packets separated by D: exp(−D²/(8σ²)).
    let oracle = (-(5.0f64 * 5.0) / (8.0 * 0.25 * 0.25)).exp();
    let overlap = s.pointer_overlap(s.duration());
    assert!(overlap < 1e-10);
    assert!((overlap - oracle).abs() < 1e-12, "{overlap:e} vs {oracle:e}");
    let mid = s.pointer_overlap(s.duration() / 4.0);
    let d: f64 = 5.0 / 4.0;
    assert!((mid - (-(d * d) / (8.0 * 0.25 * 0.25)).exp()).abs() < 1e-8);
}

#[test]
fn single_branch_is_a_product() {
    let s = MeasurementSetup::reference([c(1.0), c(0.0)]).unwrap();
    let psi = s.premeasurement_unitary(s.duration()).unwrap();
    let phi = s.shifted_pointer(-s.coupling() * s.duration());
    let ny = s.y_grid().n(0);
    for ix in 0..s.x_grid().n(0) {
        for iy in 0..ny {
            let e = s.eigenstates()[0].data()[ix] * phi[iy];
            assert!((psi.data()[ix * ny + iy] - e).norm() < 1e-12);
        }
    }
    let r = run_ideal_measurement(&s, 4).unwrap();
    assert_eq!(r.outcome, 0);
    assert!(r.fidelity > 1.0 - 1e-10);
}

#[test]
fn coupling_current_satisfies_continuity() {
    let s = reference();
    let t = 1.1;
    let h = 1e-4;
    let g = CouplingGuidance::new(&s);
    let (rho, jx, jy) = g.current(&s.premeasurement_unitary(t).unwrap());
    let rp: Vec<f64> = s.premeasurement_unitary(t + h).unwrap().data().iter().map(|z| z.norm_sqr()).collect();
    let rm: Vec<f64> = s.premeasurement_unitary(t - h).unwrap().data().iter().map(|z| z.norm_sqr()).collect();
    let mut j = jx.clone();
    j.extend_from_slice(&jy);
    let div = divergence(s.joint_grid(), &j);
    let scale = rho.iter().fold(0.0f64, |m, &r| m.max(r));
    for i in 0..rho.len() {
        let r = (rp[i] - rm[i]) / (2.0 * h) + div[i];
        assert!(r.abs() < 1e-5 * scale, "residual {r} at {i}");
    }
}

#[test]
fn pointwise_field_matches_grid_current() {
    let s = reference();
    let t = 0.9;
    let (rho, jx, jy) = CouplingGuidance::new(&s).current(&s.premeasurement_unitary(t).unwrap());
    let field = PremeasurementField::new(&s).unwrap();
    let g = s.joint_grid();
    let ny = s.y_grid().n(0);
    let scale = rho.iter().fold(0.0f64, |m, &r| m.max(r));
    for i in (0..g.len()).step_by(37) {
        let (x, y) = (g.coordinate(0, i / ny), g.coordinate(1, i % ny));
        let (r, ax, ay) = field.current(t, x, y);
        assert!((r - rho[i]).abs() < 1e-8 * scale);
        assert!((ax - jx[i]).abs() < 1e-8 * scale, "{ax} {}", jx[i]);
        assert!((ay - jy[i]).abs() < 1e-8 * scale);
    }
}

#[test]
fn local_observable_limit() {
    // For a product state of one eigenstate the velocity is (0, λα).
    let s = MeasurementSetup::reference([c(0.0), c(1.0)]).unwrap();
    let g = CouplingGuidance::new(&s);
    let (rho, jx, jy) = g.current(&s.premeasurement_unitary(0.7).unwrap());
    let max = rho.iter().fold(0.0f64, |m, &r| m.max(r));
    for i in 0..rho.len() {
        if rho[i] > 1e-6 * max {
            assert!((jy[i] / rho[i] - 1.0).abs() < 1e-9);
            assert!((jx[i] / rho[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn conditional_slices() {
    let s = reference();
    let psi = s.premeasurement_unitary(s.duration()).unwrap();
    for (beta, y) in [(0usize, -2.5), (1, 2.5), (1, 3.4)] {
        let (slice, norm) = conditional_wavefunction(&psi, y).unwrap();
        assert!(norm > 0.0);
        let f = inner_product(&s.eigenstates()[beta], &normalize(&slice).unwrap()).unwrap().norm();
        assert!((f - 1.0).abs() < 1e-10, "beta {beta}: {f}");
    }
    let psi0 = s.premeasurement_unitary(0.0).unwrap();
    let (slice, _) = conditional_wavefunction(&psi0, 0.3).unwrap();
    let chi = normalize(
        &WaveFunction::new(
            s.x_grid().clone(),
            1,
            (0..s.x_grid().n(0)).map(|i| s.eigenstates()[0].data()[i] * 0.6 + s.eigenstates()[1].data()[i] * 0.8).collect(),
            0.0,
        )
        .unwrap(),
    )
    .unwrap();
    assert!((inner_product(&chi, &normalize(&slice).unwrap()).unwrap().norm() - 1.0).abs() < 1e-10);
    // A pointer that vanishes identically away from its packet.
    let joint = s.joint_grid().clone();
    let ny = s.y_grid().n(0);
    let data: Vec<Complex64> = (0..joint.len())
        .map(|i| {
            let y = joint.coordinate(1, i % ny);
            if y.abs() < 1.0 { s.eigenstates()[0].data()[i / ny] * (1.0 - y * y) } else { c(0.0) }
        })
        .collect();
    let compact = normalize(&WaveFunction::new(joint, 1, data, 0.0).unwrap()).unwrap();
    assert!(conditional_wavefunction(&compact, 0.5).is_ok());
    assert!(matches!(conditional_wavefunction(&compact, 4.0), Err(Error::ZeroNorm(_))));
}

#[test]
fn pvm_bookkeeping() {
    let s = reference();
    let e = pvm_expectation(&s.eigenstates()[1], s.eigenstates(), s.eigenvalues()).unwrap();
    assert!(e.probabilities[0].abs() < 1e-12 && (e.probabilities[1] - 1.0).abs() < 1e-12);
    let chi = s.eigenstates()[0].combine(c(0.6), &s.eigenstates()[1], c(0.8)).unwrap();
    let e = pvm_expectation(&chi, s.eigenstates(), s.eigenvalues()).unwrap();
    assert!((e.probabilities[0] - 0.36).abs() < 1e-10 && (e.probabilities[1] - 0.64).abs() < 1e-10);
    assert!((e.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!((e.mean - 0.28).abs() < 1e-10);
    let bad = vec![s.eigenstates()[0].clone(), s.eigenstates()[0].clone()];
    assert!(matches!(pvm_expectation(&chi, &bad, &[0.0, 1.0]), Err(Error::NonOrthonormalBasis(_))));
}

#[test]
fn effective_wavefunction_diagnostics() {
    let s = reference();
    let tau = s.duration();
    let psi = s.premeasurement_unitary(tau).unwrap();
    let beta = 1;
    let phi = |t: f64| {
        WaveFunction::new(s.y_grid().clone(), 1, s.shifted_pointer(s.coupling() * t * s.eigenvalues()[beta]), t).unwrap()
    };
    let sys_part = s.eigenstates()[beta].scale(s.coefficients()[beta]);
    let rest = s.branch(0, tau).unwrap();
    let ok = effective_wavefunction_check(&psi, &sys_part, &phi(tau), &rest, 2.5).unwrap();
    assert!(ok.passed, "{ok:?}");
    let off = effective_wavefunction_check(&psi, &sys_part, &phi(tau), &rest, -2.5).unwrap();
    assert!(!off.passed && off.residual < 1e-10);
    let t = tau / 4.0;
    let early = s.premeasurement_unitary(t).unwrap();
    let mid = effective_wavefunction_check(&early, &sys_part, &phi(t), &s.branch(0, t).unwrap(), 0.6).unwrap();
    let d = s.coupling() * t * 2.0;
    assert!(!mid.passed);
    assert!((mid.overlap - (-(d * d) / (8.0 * 0.25 * 0.25)).exp()).abs() < 1e-6, "{mid:?}");
}

#[test]
fn measurement_runs_are_repeatable() {
    let s = reference();
    let a = run_ideal_measurement(&s, 77).unwrap();
    let b = run_ideal_measurement(&s, 77).unwrap();
    assert_eq!(a.outcome, b.outcome);
    assert_eq!(a.trajectory, b.trajectory);
    assert!(a.fidelity > 1.0 - 1e-6);
}

#[test]
fn born_frequencies_small_batch() {
    let s = reference();
    let n = 2000;
    let (report, runs) = born_statistics(&s, n, 12345).unwrap();
    assert_eq!(report.failed_runs, 0, "{:?}", report.records.iter().filter(|r| r.error.is_some()).take(5).collect::<Vec<_>>());
    assert!(report.passed, "{:?} {:?}", report.frequencies, report.z_scores);
    // A batch member reproduces as a single run with its sub-seed.
    let single = run_ideal_measurement(&s, runs[17].seed).unwrap();
    assert_eq!(single.outcome, runs[17].outcome);
    assert_eq!(single.pointer_position, runs[17].pointer_position);

    let half = 0.5f64.sqrt();
    let sym = MeasurementSetup::reference([c(half), c(half)]).unwrap();
    let (r, _) = born_statistics(&sym, 1000, 3).unwrap();
    let diff = (r.frequencies[0] - r.frequencies[1]).abs();
    assert!(diff < 3.0 * 2.0 * (0.25f64 / 1000.0).sqrt(), "{:?}", r.frequencies);
}

#[test]
fn post_measurement_checks() {
    let s = reference();
    let (_, runs) = born_statistics(&s, 100, 9).unwrap();
    let r = branch_irrelevance(&s, &runs[..20], 100, 0.01).unwrap();
    assert!(r.passed, "{r:?}");
    let c = conditional_dynamics_check(&s, &runs[0], 100, 0.01).unwrap();
    assert!(c.passed, "{c:?}");
}

#[test]
fn finite_mass_pointer_agrees() {
    let r = finite_mass_cross_check(&FiniteMassConfig::default()).unwrap();
    assert!(r.passed, "{r:?}");
}
