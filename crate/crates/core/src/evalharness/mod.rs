//! Scoring and diagnosis of reasoning traces.

pub mod classify;
pub mod metrics;
pub mod report;

pub use classify::{classify, ErrorLabel};
pub use metrics::{normalize, score, MetricKind};
pub use report::{
    evaluate_corpus, item_from_trace, referee_for, summarize, EvalError, EvalItem, EvalReport,
};
