//! Config-driven experiment harness: ground-truth generation, the
//! split-and-conquer simulation loop, method comparison, and CSV output.

pub mod config;
pub mod generate;
pub mod run;

pub use config::{ExperimentConfig, InitPolicy, Method, TruthSource};
pub use generate::{generate_mixture, GeneratedTruth, GeneratorSpec};
pub use run::{
    csv_row, default_cost, fit_local_estimates, render_summary, run_experiment, run_method,
    run_repetition, summarize, transmit, ExperimentOutcome, RepetitionFailure, ResultRecord,
    SummaryRow, CSV_HEADER,
};
