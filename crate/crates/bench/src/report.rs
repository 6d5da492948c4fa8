use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use som_core::metrics::{InstanceScore, MetricKind, MetricReport};
use som_core::TaskKind;

use crate::run::{read_failures, read_records, write_atomic};
use crate::{BenchError, BenchSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub model: String,
    pub task: TaskKind,
    pub records: usize,
    pub failures: usize,
    pub reports: Vec<MetricReport>,
}

/// Recomputes the metric from the per-instance scores stored in records.
/// Items that only have a failure file count as misses.
pub fn aggregate_report(run_dir: &Path) -> Result<(Vec<MetricReport>, String), BenchError> {
    let spec = BenchSpec::load(&run_dir.join("spec.json")).map_err(|e| match e {
        BenchError::Io { .. } => BenchError::EmptyRun(run_dir.to_path_buf()),
        other => other,
    })?;
    let records = read_records(run_dir)?;
    if records.is_empty() {
        return Err(BenchError::EmptyRun(run_dir.to_path_buf()));
    }
    let failures = read_failures(run_dir)?;
    let metric = MetricKind::for_task(spec.task)
        .ok_or_else(|| BenchError::Config(format!("{} has no metric", spec.task)))?;

    let mut scores: Vec<InstanceScore> = Vec::new();
    for (name, r) in &records {
        if r.task != spec.task {
            return Err(BenchError::MixedTasks {
                dir: run_dir.to_path_buf(),
                expected: spec.task.to_string(),
                record: name.clone(),
                found: r.task.to_string(),
            });
        }
        scores.extend(r.scores.iter().cloned());
    }
    for (name, f) in &failures {
        if records.contains_key(name) {
            continue;
        }
        scores.extend(f.expected.iter().map(|id| InstanceScore {
            id: id.clone(),
            score: 0.0,
            matched_region_id: None,
        }));
    }
    scores.sort_by(|a, b| a.id.cmp(&b.id));
    let reports = vec![MetricReport::from_scores(spec.task, metric, scores)];
    let table = report_table(&spec.model, &reports);
    Ok((reports, table))
}

/// One row per (model, task, metric); scores in percent.
pub fn report_table(model: &str, reports: &[MetricReport]) -> String {
    let header = ["model", "task", "metric", "n", "score"].map(String::from);
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                model.to_string(),
                r.task.to_string(),
                r.metric.as_str().to_string(),
                r.n_instances.to_string(),
                format!("{:.1}", r.value * 100.0),
            ]
        })
        .collect();
    let mut widths = header.clone().map(|h| h.len());
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for row in std::iter::once(&header).chain(&rows) {
        let _ = writeln!(
            out,
            "{:<w0$}  {:<w1$}  {:<w2$}  {:>w3$}  {:>w4$}",
            row[0],
            row[1],
            row[2],
            row[3],
            row[4],
            w0 = widths[0],
            w1 = widths[1],
            w2 = widths[2],
            w3 = widths[3],
            w4 = widths[4],
        );
    }
    out
}

pub fn write_report(run_dir: &Path, spec: &BenchSpec, reports: &[MetricReport], table: &str) -> Result<(), BenchError> {
    let records = read_records(run_dir)?.len();
    let failures = read_failures(run_dir)?.len();
    let file = ReportFile {
        model: spec.model.clone(),
        task: spec.task,
        records,
        failures,
        reports: reports.to_vec(),
    };
    let mut json = serde_json::to_vec_pretty(&file).expect("serializable");
    json.push(b'\n');
    write_atomic(&run_dir.join("report.json"), &json)?;
    write_atomic(&run_dir.join("report.txt"), table.as_bytes())
}
