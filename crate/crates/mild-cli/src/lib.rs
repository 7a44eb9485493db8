//! Library side of the experiment driver; the `mild` binary is a thin
//! wrapper over these pieces so tests can drive the same paths.

pub mod config;
pub mod experiment;

pub use config::{ExperimentConfig, MethodChoice, SetupChoice};
pub use experiment::{
    generate_data, render_report, run_sweep, verify_report, MethodSummary, SeedRun, SweepOutcome,
};

/// Process exit codes shared by the subcommands.
pub mod exit_codes {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const INVALID_CONFIG: i32 = 2;
    pub const TRAINING_DIVERGED: i32 = 3;
    pub const CHECKS_FAILED: i32 = 4;
}
