//! Ranking metrics, the frequency baseline and the ablation harness.

mod ablation;
mod metrics;
mod popular;

pub use ablation::{run_ablation, run_popular, run_variant, variant_label, AblationRun};
pub use metrics::{average_reports, evaluate, mean_metrics, rank_metrics, read_metrics, write_metrics, Metric, MetricRow, MetricsReport, RankHit};
pub use popular::{popular_baseline, PopularRanking};
pub use crate::trainer::Variant as AblationVariant;
