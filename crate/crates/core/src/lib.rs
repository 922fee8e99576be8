//! Speech-act classification and search-action prediction for
//! conversational-search transcripts.
//!
//! The crate is organised along the workflow:
//!
//! * [`corpus`]: session data model, file formats, validation, splits, stats
//! * [`annotation`]: inter-annotator agreement (Cohen's kappa)
//! * [`features`]: linguistic, metadata and contextual-embedding channels
//! * [`model`]: the attention-based BiLSTM classifier, training and persistence
//! * [`pipeline`]: instance construction and the two-stage speech → search run
//! * [`eval`]: channel ablation, Wilcoxon significance, confusion, reports
//! * [`cor`]: dialogue grammar for sequence checks and synthetic corpora

pub mod annotation;
pub mod corpus;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod eval;
pub mod cor;
