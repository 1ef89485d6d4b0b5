//! Ranking metrics, next-location and recovery evaluation, and the
//! representation-consistency study.

mod consistency;
mod metrics;
mod tasks;

pub use consistency::{consistency_study, CategoryConsistency, ConsistencyReport, GroupMeans};
pub use metrics::{dcg_at_k, hit_at_k, ndcg_at_k, ndcg_from_relevance};
pub use tasks::{
    evaluate_next_location, evaluate_recovery, predict_next, predict_recovery, report_from_predictions, EvalReport,
    MetricValue, Prediction, ReportConfig, RECOVERY_NOTE,
};
