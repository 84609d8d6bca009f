//! Forecast metrics, horizon reports, reference baselines, the embedding
//! probe and CSV exporters for figure data.

mod baselines;
mod export;
mod metrics;
mod probe;

pub use baselines::{metric_inputs, persistence_baseline, stack_targets, HistoricalAverage};
pub use export::{export_matrix, export_pair_association, export_scatter};
pub use metrics::{
    adjacency_similarity, compute_metrics, horizon_report, horizon_step, render_table, Aggregate, Metrics,
    MetricsReport, StepMetrics,
};
pub use probe::{embedding_features, fit_probe, probe_embeddings, r_squared, trig_kernel, ProbeFit, ProbeResult};
