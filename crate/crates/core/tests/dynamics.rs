use std::sync::Arc;

use bohmian::dynamics::{
    integrate_ensemble, integrate_trajectory, velocity_at, velocity_field, IntegrationOptions,
};
use bohmian::evolution::{evolve, EvolutionParams, Potential, SnapshotSource, StreamingHistory, WaveFunctionHistory};
use bohmian::{make_grid, normalize, AxisSpec, Error, ParticleSystem, WaveFunction};
use num_complex::Complex64;

/// Closed-form free Gaussian (ħ = m = 1) centred at 0 with initial position spread `s0`.
fn free_gaussian(x: f64, t: f64, s0: f64) -> Complex64 {
    let a = Complex64::new(s0 * s0, t / 2.0);
    let norm = (2.0 * std::f64::consts::PI).powf(-0.25) * (s0 / a).sqrt();
    norm * (-x * x / (4.0 * a)).exp()
}

/// Velocity of the analytic packet: x·σ̇/σ with σ² = s0²(1 + t²/(4 s0⁴)).
fn free_velocity(x: f64, t: f64, s0: f64) -> f64 {
    x * t / (4.0 * s0.powi(4) + t * t)
}

fn free_trajectory(x0: f64, t: f64, s0: f64) -> f64 {
    x0 * (1.0 + t * t / (4.0 * s0.powi(4))).sqrt()
}

fn free_history(n: usize, half: f64, t1: f64, dt: f64, stride: usize) -> WaveFunctionHistory {
    let g = make_grid(&[AxisSpec::new(n, -half, half)]).unwrap();
    let psi = normalize(&WaveFunction::from_fn(g.clone(), |q| free_gaussian(q[0], 0.0, 1.0)).unwrap()).unwrap();
    evolve(&psi, &Potential::zero(g), &ParticleSystem::single(1), 0.0, t1, &EvolutionParams::new(dt, stride)).unwrap()
}

fn oscillator(n: usize, excited: bool) -> (WaveFunction, Potential) {
    let g = make_grid(&[AxisSpec::new(n, -10.0, 10.0)]).unwrap();
    let psi = WaveFunction::from_fn(g.clone(), |q| {
        let x = q[0];
        Complex64::new(if excited { x } else { 1.0 } * (-x * x / 2.0).exp(), 0.0)
    })
    .unwrap();
    let v = Potential::scalar_fn(g, |q| 0.5 * q[0] * q[0]).unwrap();
    (normalize(&psi).unwrap(), v)
}

#[test]
fn gaussian_velocity_matches_closed_form() {
    let g = make_grid(&[AxisSpec::new(512, -25.0, 25.0)]).unwrap();
    let t = 1.3;
    let psi = WaveFunction::from_fn(g.clone(), |q| free_gaussian(q[0], t, 1.0)).unwrap().with_time(t);
    let sys = ParticleSystem::single(1);
    let vf = velocity_field(&psi, &sys).unwrap();
    for i in 0..g.len() {
        let x = g.coordinate(0, i);
        if x.abs() < 6.0 {
            assert!((vf.at(0, i).unwrap() - free_velocity(x, t, 1.0)).abs() < 1e-9, "x = {x}");
        }
    }
    for x in [-2.31, 0.017, 3.3] {
        let v = velocity_at(&psi, &[x], &sys).unwrap()[0];
        assert!((v - free_velocity(x, t, 1.0)).abs() < 1e-5, "x = {x}: {v}");
    }
}

#[test]
fn real_eigenstate_has_no_velocity() {
    let (psi, _) = oscillator(128, false);
    let vf = velocity_field(&psi, &ParticleSystem::single(1)).unwrap();
    for i in 0..psi.grid().len() {
        if let Some(v) = vf.at(0, i) {
            assert!(v.abs() < 1e-12);
        }
    }
}

#[test]
fn grid_point_velocity_agrees_with_field() {
    let g = make_grid(&[AxisSpec::new(128, -10.0, 10.0)]).unwrap();
    let psi = normalize(
        &WaveFunction::from_fn(g.clone(), |q| Complex64::new(-(q[0] - 1.0).powi(2) / 3.0, 0.7 * q[0] + 0.1 * q[0] * q[0]).exp())
            .unwrap(),
    )
    .unwrap();
    let sys = ParticleSystem::single(1);
    let vf = velocity_field(&psi, &sys).unwrap();
    for i in [40, 64, 70, 90] {
        let x = g.coordinate(0, i);
        let v = velocity_at(&psi, &[x], &sys).unwrap()[0];
        assert!((v - vf.at(0, i).unwrap()).abs() < 1e-10);
    }
}

#[test]
fn node_is_reported() {
    let (psi, _) = oscillator(128, true);
    let err = velocity_at(&psi, &[0.0], &ParticleSystem::single(1));
    assert!(matches!(err, Err(Error::NodeEncountered { .. })), "{err:?}");
}

#[test]
fn stationary_state_trajectory_is_still() {
    // Exact stationary history e^{-iEt}ψ₀ with E = 1/2.
    let (psi, _) = oscillator(128, false);
    let sys = ParticleSystem::single(1);
    let snapshots = (0..=40)
        .map(|i| {
            let t = 0.05 * i as f64;
            Arc::new(psi.scale(Complex64::new(0.0, -0.5 * t).exp()).with_time(t))
        })
        .collect();
    let mut h = WaveFunctionHistory { snapshots, interval: 0.05 };
    let traj = integrate_trajectory(&[0.7], &mut h, &sys, &IntegrationOptions::new(0.05)).unwrap();
    assert!(traj.completed());
    for s in &traj.samples {
        assert!((s.q[0] - 0.7).abs() < 1e-10);
    }
}

#[test]
fn free_gaussian_trajectory_follows_scaling_law() {
    let mut h = free_history(512, 20.0, 2.0, 0.01, 1);
    let sys = ParticleSystem::single(1);
    for x0 in [0.5, 1.0, -1.7] {
        let traj = integrate_trajectory(&[x0], &mut h, &sys, &IntegrationOptions::new(0.01)).unwrap();
        let end = traj.last();
        assert!((end.t - 2.0).abs() < 1e-12);
        let exact = free_trajectory(x0, 2.0, 1.0);
        let rel = ((end.q[0] - exact) / exact).abs();
        assert!(rel < 1e-4, "x0 = {x0}: rel error {rel:e}");
    }
}

#[test]
fn rk4_global_error_is_fourth_order() {
    // Stage times land on snapshots, so only the integrator's own error changes with dt_traj.
    let mut h = free_history(1024, 20.0, 3.2, 0.025, 4);
    let sys = ParticleSystem::single(1);
    let run = |h: &mut WaveFunctionHistory, dt: f64| {
        integrate_trajectory(&[1.5], h, &sys, &IntegrationOptions::new(dt)).unwrap().last().q[0]
    };
    let reference = run(&mut h, 0.1);
    let e1 = (run(&mut h, 1.6) - reference).abs();
    let e2 = (run(&mut h, 0.8) - reference).abs();
    let ratio = e1 / e2;
    assert!((10.0..=22.0).contains(&ratio), "ratio {ratio} ({e1:e} / {e2:e})");
}

#[test]
fn trajectories_never_cross_in_one_dimension() {
    let g = make_grid(&[AxisSpec::new(256, -20.0, 20.0)]).unwrap();
    let psi = normalize(
        &WaveFunction::from_fn(g.clone(), |q| {
            let x = q[0];
            Complex64::new(-(x + 3.0).powi(2) / 2.0, 1.5 * x).exp() + Complex64::new(-(x - 3.0).powi(2) / 2.0, -1.5 * x).exp()
        })
        .unwrap(),
    )
    .unwrap();
    let sys = ParticleSystem::single(1);
    let mut h = evolve(&psi, &Potential::zero(g), &sys, 0.0, 3.0, &EvolutionParams::new(0.01, 2)).unwrap();
    let starts: Vec<Vec<f64>> = (0..40).map(|i| vec![-5.0 + 0.25 * i as f64]).collect();
    let mut opts = IntegrationOptions::new(0.02);
    opts.record_stride = 5;
    let trajs = integrate_ensemble(&starts, &mut h, &sys, &opts).unwrap();
    let live: Vec<_> = trajs.iter().filter(|t| t.completed()).collect();
    assert!(live.len() >= 38);
    for s in 0..live[0].samples.len() {
        for w in live.windows(2) {
            assert!(w[0].samples[s].q[0] < w[1].samples[s].q[0]);
        }
    }
}

#[test]
fn symmetric_state_has_no_transverse_velocity_on_axis() {
    let g = make_grid(&[AxisSpec::new(64, -8.0, 8.0), AxisSpec::new(64, -8.0, 8.0)]).unwrap();
    let psi = normalize(
        &WaveFunction::from_fn(g, |q| {
            let (x, y) = (q[0], q[1]);
            let long = Complex64::new(-(x * x) / 4.0, 2.0 * x).exp();
            long * ((-(y - 2.0).powi(2)).exp() + (-(y + 2.0).powi(2)).exp())
        })
        .unwrap(),
    )
    .unwrap();
    let sys = ParticleSystem::single(2);
    for x in [-1.3, 0.0, 0.77, 2.1] {
        let v = velocity_at(&psi, &[x, 0.0], &sys).unwrap();
        assert!(v[1].abs() < 1e-10, "{v:?}");
    }
}

#[test]
fn ensemble_equals_isolated_runs_and_is_repeatable() {
    let mut h = free_history(256, 20.0, 1.0, 0.01, 2);
    let sys = ParticleSystem::single(1);
    let opts = IntegrationOptions::new(0.01);
    let starts: Vec<Vec<f64>> = (0..16).map(|i| vec![-3.0 + 0.4 * i as f64]).collect();
    let all = integrate_ensemble(&starts, &mut h, &sys, &opts).unwrap();
    for (q, t) in starts.iter().zip(&all) {
        let alone = integrate_trajectory(q, &mut h, &sys, &opts).unwrap();
        assert_eq!(&alone, t);
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let again = pool.install(|| integrate_ensemble(&starts, &mut h, &sys, &opts).unwrap());
    assert_eq!(all, again);
}

#[test]
fn streaming_history_gives_identical_trajectories() {
    let g = make_grid(&[AxisSpec::new(256, -20.0, 20.0)]).unwrap();
    let psi = normalize(&WaveFunction::from_fn(g.clone(), |q| free_gaussian(q[0], 0.0, 1.0)).unwrap()).unwrap();
    let sys = ParticleSystem::single(1);
    let params = EvolutionParams::new(0.01, 2);
    let v = Potential::zero(g);
    let mut stored = evolve(&psi, &v, &sys, 0.0, 1.0, &params).unwrap();
    let mut stream = StreamingHistory::new(&psi, Arc::new(v), &sys, 0.0, 1.0, &params).unwrap();
    assert_eq!(stream.len(), stored.len());
    let starts = vec![vec![0.3], vec![-1.1]];
    let opts = IntegrationOptions::new(0.01);
    let a = integrate_ensemble(&starts, &mut stored, &sys, &opts).unwrap();
    let b = integrate_ensemble(&starts, &mut stream, &sys, &opts).unwrap();
    assert_eq!(a, b);
}

#[test]
fn incommensurate_step_is_rejected() {
    let mut h = free_history(128, 20.0, 1.0, 0.01, 2);
    let err = integrate_trajectory(&[0.0], &mut h, &ParticleSystem::single(1), &IntegrationOptions::new(0.015));
    assert!(matches!(err, Err(Error::TimeGridMismatch(_))));
}

#[test]
fn screen_crossing_is_recorded_and_integration_continues() {
    use bohmian::dynamics::Screen;
    let g = make_grid(&[AxisSpec::new(512, -25.0, 25.0)]).unwrap();
    let psi = normalize(
        &WaveFunction::from_fn(g.clone(), |q| Complex64::new(-(q[0] + 3.0).powi(2) / 4.0, 2.0 * q[0]).exp()).unwrap(),
    )
    .unwrap();
    let sys = ParticleSystem::single(1);
    let mut h = evolve(&psi, &Potential::zero(g), &sys, 0.0, 2.5, &EvolutionParams::new(0.005, 2)).unwrap();
    let mut opts = IntegrationOptions::new(0.01);
    opts.record_stride = 0;
    opts.screen = Some(Screen { axis: 0, position: 0.0 });
    let t = integrate_ensemble(&[vec![-3.0], vec![-6.0]], &mut h, &sys, &opts).unwrap();
    // The packet centre moves as x = -3 + 2t.
    let hit = t[0].screen_hit.as_ref().unwrap();
    assert!((hit.t - 1.5).abs() < 1e-4, "{hit:?}");
    assert!(hit.q[0].abs() < 1e-12);
    assert!((t[0].last().t - 2.5).abs() < 1e-12 && (t[0].last().q[0] - 2.0).abs() < 1e-4);
    assert!(t[1].screen_hit.is_none());
}
