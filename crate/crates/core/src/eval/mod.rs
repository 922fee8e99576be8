//! Ablation runs, significance testing, confusion analysis and reports.

mod ablation;
mod confusion;
mod report;
mod wilcoxon;

pub use ablation::{
    ablate, median, restrict, AblationConfig, AblationReport, AblationRow, SplitLevel, Task, SIGNIFICANCE_LEVEL,
};
pub use confusion::{confusion, ConfusionReport};
pub use report::{
    ablation_tsv, accuracy_chart, corpus_charts, render_report, significance_tsv, summary_markdown, Bar, BarChart,
};
pub use wilcoxon::{average_ranks, wilcoxon_signed_rank, WilcoxonResult, EXACT_LIMIT};

use crate::corpus::SplitError;
use crate::features::FeatureError;
use crate::model::ModelError;
use crate::pipeline::PipelineError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty {0}")]
    Empty(&'static str),
    #[error("label `{0}` is not in the label set")]
    UnknownLabel(String),
    #[error("invalid evaluation configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Features(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Io(String),
}
