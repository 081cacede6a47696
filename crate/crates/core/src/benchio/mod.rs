//! Benchmark records, the synthetic oracle and cross-task analysis.

mod records;
mod stats;
mod synth;

pub use records::{load, load_with, save, split_records, write_records, BenchRecord, CodeSpace};
pub use stats::{cross_task_matrix, metric_summary, spearman, CorrMatrix, MetricSummary};
pub use synth::{gen_benchmark, SynthParams, SyntheticTask};
