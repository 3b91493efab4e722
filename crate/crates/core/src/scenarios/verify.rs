//! Test batteries run against a scenario config: equivariance, continuity and convergence.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::build::{build_grid, build_initial, build_potential};
use super::config::ScenarioConfig;
use super::run::{Bound, Verdict};
use crate::equilibrium::{continuity_residual, equivariance_test, EquivarianceOptions};
use crate::error::{Error, Result};
use crate::evolution::{evolve, EvolutionParams};
use crate::grid::inner_product;

/// Residuals below this are roundoff; their ratios carry no order information.
const CONTINUITY_FLOOR: f64 = 1e-10;
const CONVERGENCE_FLOOR: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Equivariance,
    Continuity,
    Convergence,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equivariance" => Ok(Suite::Equivariance),
            "continuity" => Ok(Suite::Continuity),
            "convergence" => Ok(Suite::Convergence),
            other => Err(Error::Config(format!("unknown suite `{other}` (expected equivariance, continuity or convergence)"))),
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Suite::Equivariance => "equivariance",
            Suite::Continuity => "continuity",
            Suite::Convergence => "convergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub scenario: String,
    pub seed: u64,
    /// `(dt, value)` along the ladder for the continuity and convergence suites.
    pub ladder: Vec<[f64; 2]>,
    pub rows: Vec<Verdict>,
    pub passed: bool,
}

impl SuiteReport {
    /// Plain-text table of statistics against thresholds.
    pub fn table(&self) -> String {
        let mut out = format!("suite {} on {}\n", self.suite, self.scenario);
        for [dt, v] in &self.ladder {
            out.push_str(&format!("  dt {dt:<12} value {v:.6e}\n"));
        }
        out.push_str(&format!("  {:<44} {:>14} {:>26}  {}\n", "check", "value", "bound", "result"));
        for r in &self.rows {
            let bound = match r.bound {
                Bound::Below(t) => format!("< {t:.6e}"),
                Bound::Above(t) => format!("> {t:.6e}"),
                Bound::AtLeast(t) => format!(">= {t}"),
                Bound::Within([a, b]) => format!("in [{a}, {b}]"),
                Bound::Equals(t) => format!("= {t}"),
            };
            out.push_str(&format!(
                "  {:<44} {:>14.6e} {:>26}  {}\n",
                r.check,
                r.value,
                bound,
                if r.passed { "PASS" } else { "FAIL" }
            ));
        }
        out
    }
}

/// Ratio of successive ladder values rescaled to an equivalent halving of dt.
fn halving_ratio(e: [f64; 2], dt: [f64; 2]) -> f64 {
    (e[0] / e[1]).powf(std::f64::consts::LN_2 / (dt[0] / dt[1]).ln())
}

fn ratio_rows(values: &[f64], ladder: &[f64], band: [f64; 2], floor: f64, label: &str) -> Vec<Verdict> {
    (0..values.len() - 1)
        .map(|i| {
            let ratio = halving_ratio([values[i], values[i + 1]], [ladder[i], ladder[i + 1]]);
            let mut v = Verdict::new(format!("{label} ratio {}/{}", ladder[i], ladder[i + 1]), ratio, Bound::Within(band));
            if values[i + 1] < floor && values[i] < floor {
                v.check.push_str(" (roundoff floor)");
                v.passed = true;
            }
            v
        })
        .collect()
}

pub fn verify(cfg: &ScenarioConfig, suite: Suite, seed: Option<u64>) -> Result<SuiteReport> {
    cfg.validate()?;
    let seed = seed.unwrap_or(cfg.ensemble.seed);
    let grid = build_grid(cfg)?;
    let sys = cfg.system.build()?;
    let psi0 = build_initial(cfg, &grid, &sys)?.with_time(0.0);
    let potential = build_potential(cfg, &grid, &sys)?;
    let s = &cfg.schedule;
    let ladder = &cfg.accuracy.dt_ladder;
    let band = cfg.checks.ratio_band;
    let (values, rows) = match suite {
        Suite::Equivariance => {
            let opts = EquivarianceOptions {
                evolution: EvolutionParams::new(s.dt, s.store_stride),
                dt_traj: s.dt_traj,
                alpha: cfg.checks.alpha,
            };
            let r = equivariance_test(&psi0, &potential, &sys, s.t_end, cfg.ensemble.size, seed, &opts)?;
            let mut rows = Vec::new();
            match &r.chi_square {
                None => rows.push(Verdict::new("ks statistic", r.statistic, Bound::Below(r.threshold))),
                Some(chi) => {
                    rows.push(Verdict::new("chi-square statistic", chi.statistic, Bound::Below(chi.critical)));
                    for (j, m) in r.marginals.iter().enumerate() {
                        rows.push(Verdict::new(format!("ks statistic x{}", j + 1), m.statistic, Bound::Below(m.critical)));
                    }
                }
            }
            rows.push(Verdict::new("node hits", r.node_hits as f64, Bound::Equals(0.0)));
            (Vec::new(), rows)
        }
        Suite::Continuity => {
            // Mid-horizon, away from the switch-on of any coupling window at t = 0.
            let steps = ((0.5 * s.t_end / s.dt).round() as usize).max(1);
            let t_mid = steps as f64 * s.dt;
            let psi = evolve(&psi0, &potential, &sys, 0.0, t_mid, &EvolutionParams::new(s.dt, steps))?.last().as_ref().clone();
            let r: Vec<f64> = ladder.iter().map(|&dt| continuity_residual(&psi, &potential, &sys, dt)).collect::<Result<_>>()?;
            let rows = ratio_rows(&r, ladder, band, CONTINUITY_FLOOR, "residual");
            (r, rows)
        }
        Suite::Convergence => {
            let finals = ladder
                .iter()
                .map(|&dt| {
                    let steps = (s.t_end / dt).round().max(1.0) as usize;
                    let h = evolve(&psi0, &potential, &sys, 0.0, s.t_end, &EvolutionParams::new(dt, steps))?;
                    Ok(h.last().clone())
                })
                .collect::<Result<Vec<_>>>()?;
            // Differences of successive rungs; each shrinks like the error of the coarser one.
            let diffs: Vec<f64> = finals
                .windows(2)
                .map(|w| {
                    let d = w[0].combine(1.0.into(), &w[1], (-1.0).into())?;
                    Ok(inner_product(&d, &d)?.re.sqrt())
                })
                .collect::<Result<_>>()?;
            let rows = ratio_rows(&diffs, &ladder[..ladder.len() - 1], band, CONVERGENCE_FLOOR, "self-convergence");
            (diffs, rows)
        }
    };
    let passed = rows.iter().all(|r| r.passed);
    let ladder = values.iter().zip(ladder).map(|(v, dt)| [*dt, *v]).collect();
    Ok(SuiteReport { suite, scenario: cfg.id.clone(), seed, ladder, rows, passed })
}
