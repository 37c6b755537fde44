//! Experiment harness: class-split incremental scenarios, AP evaluation,
//! the ablation and scarce-data suites, the response-distance diagnostic,
//! and report emission.

mod ap;
mod experiment;
mod report;

pub use ap::{evaluate_ap, evaluate_ap_averaged, ApSummary, ClassAp};
pub use experiment::{
    ablation_suite, distance_diagnostic, response_distance, run_incremental, run_suite,
    scarce_data_experiment, DistanceDiagnostic, ExperimentConfig, ExperimentReport, Mode,
    ResponseDistance, RunOutput, ScarcePair,
};
pub use report::{emit_report, median};
