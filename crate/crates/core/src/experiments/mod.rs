//! End-to-end experiment runners shared by the command-line tool and the
//! acceptance tests.

pub mod config;
pub mod pipeline;
pub mod toy;

pub use config::ExperimentConfig;
pub use pipeline::{
    evaluate_model, export_projection, prepare, run_ablation, run_loss_curves, run_once, train_model, AblationRow,
    AblationTable, EvalReport, LossCurve, Prepared, LAMBDA_GRID,
};
pub use toy::{baseline_weights, run_toy_study, BoundaryGrid, ToyStudyConfig, ToyStudyResult};
