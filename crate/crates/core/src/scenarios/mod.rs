//! Config-driven experiments tying evolution, trajectories, sampling and measurement together.

pub mod analysis;
pub mod build;
pub mod config;
pub mod measure;
pub mod run;
pub mod verify;

pub use build::{build_double_slit, build_entangled_pair, build_spin_scenario};
pub use config::{MeasureConfig, ScenarioConfig};
pub use measure::{run_measure, MeasureOptions, MeasureOutcome, MeasureSummary};
pub use run::{run_scenario, simulate, Bound, RunOptions, RunSummary, ScenarioRun, Verdict};
pub use verify::{verify, Suite, SuiteReport};
