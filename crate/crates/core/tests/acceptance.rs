//! Acceptance battery: one PASS/FAIL line per criterion, run sequentially so that timings are honest.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use bohmian::dynamics::{integrate_trajectory, velocity_field, IntegrationOptions};
use bohmian::evolution::{evolve, EvolutionParams, Potential, WaveFunctionHistory};
use bohmian::scenarios::measure::measure;
use bohmian::scenarios::run::write_outputs;
use bohmian::scenarios::{run_measure, simulate, verify, MeasureConfig, MeasureOptions, MeasureOutcome, ScenarioConfig, Suite};
use bohmian::{density, make_grid, AxisSpec, ParticleSystem, WaveFunction};
use num_complex::Complex64;
use serde_json::{json, Value};

type Outcome = Result<(bool, String), Box<dyn std::error::Error>>;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn shipped(name: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(config_path(&format!("{name}.json"))).unwrap()).unwrap()
}

fn scenario(v: &Value) -> ScenarioConfig {
    ScenarioConfig::from_json(&v.to_string()).unwrap()
}

/// σ(t) of a free Gaussian with initial position spread σ0.
fn sigma_t(s0: f64, t: f64, hbar: f64, m: f64) -> f64 {
    s0 * (1.0 + (hbar * t / (2.0 * m * s0 * s0)).powi(2)).sqrt()
}

fn free_gaussian(x: f64, s0: f64) -> Complex64 {
    Complex64::new((2.0 * std::f64::consts::PI * s0 * s0).powf(-0.25) * (-x * x / (4.0 * s0 * s0)).exp(), 0.0)
}

fn centered_packet(n: usize, half: f64) -> WaveFunction {
    let g = make_grid(&[AxisSpec::new(n, -half, half)]).unwrap();
    bohmian::normalize(&WaveFunction::from_fn(g, |q| free_gaussian(q[0], 1.0)).unwrap()).unwrap()
}

fn free_history(psi: &WaveFunction, t: f64, dt: f64, stride: usize) -> WaveFunctionHistory {
    let g = psi.grid().clone();
    evolve(psi, &Potential::zero(g), &ParticleSystem::single(1), 0.0, t, &EvolutionParams::new(dt, stride)).unwrap()
}

fn verdict(run: &bohmian::scenarios::ScenarioRun, name: &str) -> (f64, bool) {
    let v = run.summary.verdict(name).unwrap_or_else(|| panic!("no verdict {name}"));
    (v.value, v.passed)
}

fn unitarity() -> Outcome {
    let psi = centered_packet(512, 20.0);
    let h = free_history(&psi, 5.0, 0.005, 1000);
    let end = h.last();
    assert!((end.time() - 5.0).abs() < 1e-9);
    let dev = (end.norm() - 1.0).abs();
    Ok((dev < 1e-10, format!("|‖ψ‖−1| = {dev:.2e} after 1000 steps")))
}

fn packet_width() -> Outcome {
    let psi = centered_packet(512, 20.0);
    let rho = density(free_history(&psi, 2.0, 0.005, 400).last());
    let g = &rho.grid;
    let xs = g.coordinates(0);
    let dx = g.spacing(0);
    let mean: f64 = xs.iter().zip(&rho.rho).map(|(x, r)| x * r).sum::<f64>() * dx;
    let var: f64 = xs.iter().zip(&rho.rho).map(|(x, r)| (x - mean).powi(2) * r).sum::<f64>() * dx;
    let exact = sigma_t(1.0, 2.0, 1.0, 1.0);
    let rel = (var.sqrt() - exact).abs() / exact;
    Ok((rel < 1e-6, format!("σ(2) = {:.12}, closed form {exact:.12}, rel {rel:.2e}", var.sqrt())))
}

fn trajectory_law() -> Outcome {
    let sys = ParticleSystem::single(1);
    let psi = centered_packet(512, 20.0);
    let mut h = free_history(&psi, 2.0, 0.005, 1);
    let x0 = 1.0;
    let exact = x0 * sigma_t(1.0, 2.0, 1.0, 1.0);
    let err = |h: &mut WaveFunctionHistory, dt: f64| -> Result<f64, bohmian::Error> {
        let end = integrate_trajectory(&[x0], h, &sys, &IntegrationOptions::new(dt))?.last().q[0];
        Ok((end - exact).abs() / exact)
    };
    let e1 = err(&mut h, 1e-3)?;
    let e2 = err(&mut h, 5e-4)?;

    // The integrator's own error is measurable only at steps where it exceeds interpolation error;
    // stage times coincide with snapshots so the field is the same at every step size.
    let wide = centered_packet(1024, 20.0);
    let mut coarse = free_history(&wide, 3.2, 0.025, 4);
    let end = |h: &mut WaveFunctionHistory, dt: f64| -> Result<f64, bohmian::Error> {
        Ok(integrate_trajectory(&[1.5], h, &sys, &IntegrationOptions::new(dt))?.last().q[0])
    };
    let reference = end(&mut coarse, 0.1)?;
    let ratio = (end(&mut coarse, 1.6)? - reference).abs() / (end(&mut coarse, 0.8)? - reference).abs();
    let ok = e1 < 1e-4 && e2 < 1e-4 && (10.0..=22.0).contains(&ratio);
    Ok((ok, format!("rel err {e1:.2e} (dt_traj 1e-3), {e2:.2e} (5e-4); RK4 halving ratio {ratio:.2}")))
}

fn equivariance() -> Outcome {
    let mut fp = shipped("free_packet");
    fp["ensemble"]["size"] = json!(100_000);
    let run = simulate(&scenario(&fp), 42)?;
    let (ks, ks_ok) = verdict(&run, "equivariance_ks");
    let t_free = run.final_state.time();

    let mut ds = shipped("double_slit");
    ds["ensemble"]["size"] = json!(100_000);
    let run = simulate(&scenario(&ds), 42)?;
    let (chi, chi_ok) = verdict(&run, "equivariance_chi_square");
    let (k1, k1_ok) = verdict(&run, "equivariance_ks_x1");
    let (k2, k2_ok) = verdict(&run, "equivariance_ks_x2");
    let crit = 1.628 / (100_000f64).sqrt();
    let ok = ks_ok && chi_ok && k1_ok && k2_ok && ks < crit && k1 < crit && k2 < crit && (t_free - 2.0).abs() < 1e-12;
    Ok((ok, format!("n=1e5: free KS {ks:.2e}; double slit KS {k1:.2e}/{k2:.2e}, χ² {chi:.1}; critical {crit:.2e}")))
}

fn continuity() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in ["free_packet", "spin", "double_slit"] {
        let cfg = scenario(&shipped(name));
        assert_eq!(cfg.accuracy.dt_ladder.len(), 3);
        let r = verify(&cfg, Suite::Continuity, None)?;
        for row in &r.rows {
            let in_band = (3.5..=4.5).contains(&row.value);
            ok &= in_band && !row.check.contains("floor");
            notes.push(format!("{name} {:.3}", row.value));
        }
    }
    Ok((ok, format!("halving ratios {}", notes.join(", "))))
}

fn born_and_branches() -> Result<(Outcome, Outcome), Box<dyn std::error::Error>> {
    let cfg = MeasureConfig::from_path(&config_path("measurement.json"))?;
    assert_eq!(cfg.measurement.coefficients, vec![[0.6, 0.0], [0.8, 0.0]]);
    let (_, outcome) = measure(&cfg, 10_000, cfg.seed)?;
    let MeasureOutcome::Batch { born, branches } = outcome else { unreachable!() };
    let half = 3.0 * (0.2304f64 / 1e4).sqrt();
    let f = born.frequencies[1];
    let ok6 = (f - 0.64).abs() <= half && born.min_fidelity > 1.0 - 1e-6 && born.failed_runs == 0 && born.runs == 10_000;
    let c6 = format!("freq {f:.4} in 0.64 ± {half:.4}; min fidelity 1 − {:.1e}; failed {}", 1.0 - born.min_fidelity, born.failed_runs);
    let ok7 = branches.max_deviation < 1e-8 && branches.runs == 100 && branches.steps == 100;
    let c7 = format!("max deviation {:.2e} over {} runs × {} steps", branches.max_deviation, branches.runs, branches.steps);
    Ok((Ok((ok6, c6)), Ok((ok7, c7))))
}

fn double_slit() -> Outcome {
    let both = simulate(&scenario(&shipped("double_slit")), 42)?;
    let (fringes, _) = verdict(&both, "fringe_maxima");
    let (crossings, _) = verdict(&both, "axis_crossings");
    let single = simulate(&scenario(&shipped("single_slit")), 42)?;
    let (modes, _) = verdict(&single, "unimodal_screen");
    let hits = both.screen_histogram.as_ref().map_or(0.0, |h| h.total());
    let ok = fringes >= 5.0 && crossings == 0.0 && modes == 1.0 && hits > 0.0;
    Ok((ok, format!("{fringes} fringe maxima from {hits} arrivals, {crossings} axis crossings, single slit {modes} maximum")))
}

fn spin() -> Outcome {
    let cfg = scenario(&shipped("spin"));
    let run = simulate(&cfg, cfg.ensemble.seed)?;
    let finals: Vec<f64> = run.trajectories.iter().filter(|t| t.completed()).map(|t| t.last().q[0]).collect();
    let n = finals.len() as f64;
    let up = finals.iter().filter(|&&z| z > 0.0).count() as f64 / n;
    let band = 3.0 * (0.36f64 * 0.64 / n).sqrt();
    let weight_ok = (up - 0.36).abs() <= band && (1.0 - up - 0.64).abs() <= band && n == 10_000.0;

    // Velocity checks on two-component states: real (stationary) and common plane wave.
    let g = make_grid(&[AxisSpec::new(256, -16.0, 16.0)])?;
    let sys = ParticleSystem::new(vec![1.0], vec![1], 1.0, 2)?;
    let real = WaveFunction::from_spinor_fn(g.clone(), 2, |q, s| {
        let e = (-q[0] * q[0] / 2.0).exp();
        s[0] = Complex64::new(0.6 * e, 0.0);
        s[1] = Complex64::new(0.8 * q[0] * e, 0.0);
    })?;
    let v_real = velocity_field(&real, &sys)?;
    let real_max = (0..g.len()).filter_map(|i| v_real.at(0, i)).fold(0.0f64, |m, v| m.max(v.abs()));
    let k = 2.0 * std::f64::consts::PI * 3.0 / g.length(0);
    let plane = WaveFunction::from_spinor_fn(g.clone(), 2, |q, s| {
        let p = Complex64::from_polar(1.0, k * q[0]);
        s[0] = p * 0.6;
        s[1] = p * Complex64::new(0.0, 0.8);
    })?;
    let v_plane = velocity_field(&plane, &sys)?;
    let plane_max = (0..g.len()).filter_map(|i| v_plane.at(0, i)).fold(0.0f64, |m, v| m.max((v - k).abs()));
    let ok = weight_ok && real_max < 1e-10 && plane_max < 1e-10;
    Ok((ok, format!("weights {up:.4}/{:.4} (±{band:.4}); real |v| {real_max:.1e}; plane |v−ħk/m| {plane_max:.1e}", 1.0 - up)))
}

fn nonlocality() -> Outcome {
    let cfg = scenario(&shipped("entangled_pair"));
    let eps = cfg.checks.nonlocal.as_ref().unwrap().epsilon;
    let run = simulate(&cfg, cfg.ensemble.seed)?;
    let (diff, _) = verdict(&run, "nonlocal_dependence");
    let (control, _) = verdict(&run, "factorized_control");
    Ok((diff > eps && control < 1e-10, format!("velocity difference {diff:.4} > ε = {eps}; factorized {control:.1e}")))
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut ok = true;
    let mut checked = 0;
    let in_pool = |threads: usize, f: &(dyn Fn(&Path) + Sync)| {
        let dir = tempfile::tempdir().unwrap();
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| f(dir.path()));
        files(dir.path())
    };
    for name in ["free_packet", "spin", "entangled_pair", "harmonic"] {
        let mut v = shipped(name);
        v["ensemble"]["size"] = json!(2000);
        let cfg = scenario(&v);
        let job = |dir: &Path| {
            let mut run = simulate(&cfg, 42).unwrap();
            write_outputs(&mut run, dir, cfg.ensemble.export_trajectories).unwrap();
        };
        let (a, b) = (in_pool(1, &job), in_pool(4, &job));
        checked += a.len();
        ok &= !a.is_empty() && a == b;
    }
    let cfg = MeasureConfig::from_path(&config_path("measurement.json"))?;
    let job = |dir: &Path| {
        let opts = MeasureOptions { runs: Some(100), seed: Some(5), out_dir: Some(dir.to_path_buf()) };
        run_measure(&cfg, &opts).unwrap();
    };
    let (a, b) = (in_pool(1, &job), in_pool(4, &job));
    checked += a.len();
    ok &= !a.is_empty() && a == b;
    Ok((ok, format!("{checked} payload files identical across 1 and 4 threads")))
}

fn report(id: usize, title: &str, limit: Option<Duration>, elapsed: Duration, outcome: Outcome) -> bool {
    let (passed, detail) = match outcome {
        Ok(x) => x,
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let budget = limit.map_or(String::new(), |l| format!(" / {}s", l.as_secs()));
    let ok = passed && in_time;
    println!(
        "{} {id:>2} {title:<22} {detail} [{:.1}s{budget}]",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    ok
}

fn timed<T>(f: impl FnOnce() -> T) -> (Duration, T) {
    let start = Instant::now();
    let out = f();
    (start.elapsed(), out)
}

fn main() {
    let secs = |s: u64| Some(Duration::from_secs(s));
    let mut all = true;
    let (t, o) = timed(unitarity);
    all &= report(1, "unitarity", secs(5), t, o);
    let (t, o) = timed(packet_width);
    all &= report(2, "analytic packet", secs(5), t, o);
    let (t, o) = timed(trajectory_law);
    all &= report(3, "trajectory law", secs(10), t, o);
    let (t, o) = timed(equivariance);
    all &= report(4, "equivariance", secs(180), t, o);
    let (t, o) = timed(continuity);
    all &= report(5, "continuity residual", secs(30), t, o);
    let (t, o) = timed(born_and_branches);
    let (c6, c7) = o.unwrap_or_else(|e| (Err(e.to_string().into()), Err("measurement batch failed".into())));
    all &= report(6, "born rule / collapse", secs(300), t, c6);
    all &= report(7, "discarded branches", None, t, c7);
    let (t, o) = timed(double_slit);
    all &= report(8, "double slit", secs(180), t, o);
    let (t, o) = timed(spin);
    all &= report(9, "spin splitting", None, t, o);
    let (t, o) = timed(nonlocality);
    all &= report(10, "nonlocality", None, t, o);
    let (t, o) = timed(determinism);
    all &= report(11, "determinism", None, t, o);
    if !all {
        std::process::exit(1);
    }
}
