//! Benchmark runs: sample a dataset, mark each image, ask the model, bind
//! its answer to regions and score it.
//!
//! A run lives in `runs/<spec-hash>/` with `spec.json`, one JSON record per
//! item under `records/`, failures under `failures/`, the marked images
//! under `images/` and `report.json` / `report.txt`. Rerunning the same
//! spec only processes items without a record.

mod dataset;
mod error;
mod report;
mod run;
mod spec;

pub use dataset::{sample_subset, DatasetIndex, IndexItem, VideoFrame};
pub use error::BenchError;
pub use report::{aggregate_report, report_table, write_report, ReportFile};
pub use run::{
    failure_path, read_failures, read_records, record_path, run_benchmark, run_dir_for, Exchange, FailureRecord,
    ResponseRecord, RunRecord, RunSummary,
};
pub use spec::BenchSpec;
