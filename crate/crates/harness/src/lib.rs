//! Configuration-driven experiments for `msip-core`: multi-trial runs,
//! metric collection, CSV/JSON/SVG output and the acceptance matrix.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod svg;

pub use config::{load_config, parse_config, RunConfig};
pub use error::{HarnessError, Result};
pub use experiment::{run_experiment, ExperimentResult, TrialResult, TrialStatus};
pub use output::write_outputs;
