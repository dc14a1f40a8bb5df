//! Configuration loading, pipeline orchestration and result files for the
//! `slq` binary.

pub mod config;
pub mod run;
pub mod verify;

pub use config::{ExperimentConfig, Pipeline, Problem};
pub use run::{run_experiment, run_pipeline, write_trace_csv, Outcome, RunReport};
pub use verify::{parse_p, verify, VerifyReport, DEFAULT_TOL};

/// Exit status of `slq run` when every pipeline converged.
pub const EXIT_CONVERGED: i32 = 0;
/// Exit status on any error.
pub const EXIT_ERROR: i32 = 1;
/// Exit status of `slq run` when some pipeline hit its iteration limit.
pub const EXIT_NOT_CONVERGED: i32 = 2;
