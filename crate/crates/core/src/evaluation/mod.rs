//! Cross-validation, metrics, significance tests and report rendering.

mod cv;
mod folds;
mod metrics;
mod report;
mod stats;

use thiserror::Error;

use crate::models::ModelError;

pub use cv::{
    compare_methods, evaluate_folds, fold_seed, run_cv, summarize_comparison, transfer_experiment, ComparisonReport,
    ComparisonRow, CvOptions, EvalReport, FailedFold, FoldOutcome, FoldResult, TransferFold, TransferReport,
};
pub use folds::{make_folds, FoldPlan, Stratification};
pub use metrics::{metrics, Metrics};
pub use report::{
    accuracy_line, chance_label, comparison_csv, comparison_table, confusion_svg, eval_csv, exemplar_svg,
    per_class_csv, per_exemplar_csv, transfer_csv, CATEGORY_NAMES,
};
pub use stats::{binomial_interval, mean_std, paired_ttest, stars, TTest};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("fold {fold} failed")]
    FoldFailed {
        fold: usize,
        #[source]
        source: ModelError,
    },
    #[error("fold plan: {0}")]
    Folds(String),
    #[error("metrics: {0}")]
    Metrics(String),
    #[error("comparison: {0}")]
    Mismatch(String),
    #[error("statistics: {0}")]
    Stats(String),
}
