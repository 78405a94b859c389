//! Top-k metrics, evaluation reports and attention traces.

mod metrics;
mod report;
mod traces;

pub use metrics::{mean_topk_recall, per_class_recall, top_k_ids, topk_accuracy, topk_hit, ClassRecall, ClassSubset};
pub use report::{evaluate, score_windows, window_config, EvalOptions, EvalReport, FactorMap, ScoreSummary, RECALL_K};
pub use traces::{dump_traces, write_traces};
