//! Accuracy metrics, run reports, multi-run aggregation and artifact files.
//!
//! Accuracies are fractions in [0, 1]. Tables render them as percentages with
//! one decimal.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::{ConfigDigest, Method, TrainHistory};

/// Version of the report and aggregate JSON schemas.
pub const SCHEMA_VERSION: u32 = 1;

/// Header of the learning-curve CSV.
pub const HISTORY_HEADER: &str = "epoch,source_loss,target_loss,target_acc,disc_acc";

fn check_pair(predictions: &[usize], truth: &[usize]) -> Result<()> {
    if predictions.len() != truth.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} labels",
            predictions.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    Ok(())
}

/// Fraction of positions where `predictions` matches `truth`.
pub fn accuracy(predictions: &[usize], truth: &[usize]) -> Result<f64> {
    check_pair(predictions, truth)?;
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / truth.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion_matrix(
    predictions: &[usize],
    truth: &[usize],
    num_classes: usize,
) -> Result<Vec<Vec<u64>>> {
    check_pair(predictions, truth)?;
    let mut counts = vec![vec![0u64; num_classes]; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if p >= num_classes || t >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class id {} out of range for {num_classes} classes",
                p.max(t)
            )));
        }
        counts[t][p] += 1;
    }
    Ok(counts)
}

/// Recall of each class; `None` for classes absent from the truth.
pub fn per_class_accuracy(confusion: &[Vec<u64>]) -> Vec<Option<f64>> {
    confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[c] as f64 / total as f64)
        })
        .collect()
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub task: String,
    pub method: Method,
    pub config_digest: ConfigDigest,
    pub seed: u64,
    /// Absent when the target labels were not supplied.
    pub target_accuracy: Option<f64>,
    pub per_class_accuracy: Vec<Option<f64>>,
    pub confusion: Vec<Vec<u64>>,
    pub discriminator_accuracy: Option<f64>,
    /// Learning-curve file, relative to the report.
    pub history_file: Option<String>,
    pub runtime_seconds: f64,
}

impl RunReport {
    /// Builds a report; accuracy fields are filled when `truth` is given.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        task: &str,
        method: Method,
        config_digest: ConfigDigest,
        seed: u64,
        predictions: &[usize],
        truth: Option<&[usize]>,
        num_classes: usize,
        discriminator_accuracy: Option<f64>,
        runtime_seconds: f64,
    ) -> Result<Self> {
        let (target_accuracy, confusion) = match truth {
            Some(t) => (
                Some(accuracy(predictions, t)?),
                confusion_matrix(predictions, t, num_classes)?,
            ),
            None => (None, Vec::new()),
        };
        let report = Self {
            schema_version: SCHEMA_VERSION,
            task: task.to_string(),
            method,
            config_digest,
            seed,
            target_accuracy,
            per_class_accuracy: per_class_accuracy(&confusion),
            confusion,
            discriminator_accuracy,
            history_file: None,
            runtime_seconds,
        };
        report.validate()?;
        Ok(report)
    }

    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: Option<f64>| v.is_none_or(|a| (0.0..=1.0).contains(&a));
        if !in_unit(self.target_accuracy) || !in_unit(self.discriminator_accuracy) {
            return Err(Error::Invariant(format!(
                "report `{}` seed {}: accuracy outside [0, 1]",
                self.task, self.seed
            )));
        }
        if self.per_class_accuracy != per_class_accuracy(&self.confusion) {
            return Err(Error::Invariant(format!(
                "report `{}` seed {}: per-class accuracies disagree with the confusion counts",
                self.task, self.seed
            )));
        }
        Ok(())
    }
}

/// Mean and spread of one (task, method) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateEntry {
    pub task: String,
    pub method: Method,
    pub n_runs: usize,
    /// Sorted seeds of the runs in the group.
    pub seeds: Vec<u64>,
    /// `None` when no run had target labels.
    pub mean_accuracy: Option<f64>,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std_accuracy: Option<f64>,
    pub single_run: bool,
    pub mean_discriminator_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    /// Ordered by task, then method.
    pub entries: Vec<AggregateEntry>,
}

/// Mean and sample std of `values`. Values are sorted first so the result
/// does not depend on input order.
fn mean_std(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Groups reports by task and method.
pub fn aggregate(reports: &[RunReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::InvalidArgument("no reports to aggregate".into()));
    }
    let mut groups: BTreeMap<(&str, Method), Vec<&RunReport>> = BTreeMap::new();
    for r in reports {
        groups.entry((r.task.as_str(), r.method)).or_default().push(r);
    }
    let mut entries = Vec::with_capacity(groups.len());
    for ((task, method), runs) in groups {
        let labeled = runs.iter().filter(|r| r.target_accuracy.is_some()).count();
        if labeled != 0 && labeled != runs.len() {
            return Err(Error::InvalidArgument(format!(
                "task `{task}` ({method}): {labeled} of {} runs have target accuracy",
                runs.len()
            )));
        }
        let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        let (mean_accuracy, std_accuracy) = if labeled > 0 {
            let mut acc: Vec<f64> = runs.iter().filter_map(|r| r.target_accuracy).collect();
            let (m, s) = mean_std(&mut acc);
            (Some(m), Some(s))
        } else {
            (None, None)
        };
        let mut disc: Vec<f64> = runs.iter().filter_map(|r| r.discriminator_accuracy).collect();
        let mean_discriminator_accuracy = (!disc.is_empty()).then(|| mean_std(&mut disc).0);
        entries.push(AggregateEntry {
            task: task.to_string(),
            method,
            n_runs: runs.len(),
            seeds,
            mean_accuracy,
            std_accuracy,
            single_run: runs.len() == 1,
            mean_discriminator_accuracy,
        });
    }
    Ok(AggregateReport {
        schema_version: SCHEMA_VERSION,
        entries,
    })
}

/// Task × method table of `mean±std` percentages.
pub fn render_table(report: &AggregateReport) -> String {
    let mut methods: Vec<Method> = report.entries.iter().map(|e| e.method).collect();
    methods.sort();
    methods.dedup();
    let mut tasks: Vec<&str> = report.entries.iter().map(|e| e.task.as_str()).collect();
    tasks.dedup();
    let cell = |task: &str, method: Method| {
        report
            .entries
            .iter()
            .find(|e| e.task == task && e.method == method)
            .map_or_else(
                || "-".to_string(),
                |e| match (e.mean_accuracy, e.std_accuracy) {
                    (Some(m), Some(s)) => {
                        let n = if e.single_run { " (n=1)" } else { "" };
                        format!("{:.1}±{:.1}{n}", 100.0 * m, 100.0 * s)
                    }
                    _ => format!("n/a ({} runs)", e.n_runs),
                },
            )
    };
    let mut rows = vec![std::iter::once("task".to_string())
        .chain(methods.iter().map(Method::to_string))
        .collect::<Vec<_>>()];
    for task in &tasks {
        rows.push(
            std::iter::once(task.to_string())
                .chain(methods.iter().map(|&m| cell(task, m)))
                .collect(),
        );
    }
    let ncol = rows[0].len();
    let widths: Vec<usize> = (0..ncol)
        .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(s, &w)| format!("{s}{}", " ".repeat(w - s.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Learning-curve CSV text. Missing metrics are empty cells.
pub fn history_csv(history: &TrainHistory) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in &history.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.epoch,
            r.source_class_loss,
            opt_cell(r.target_class_loss),
            opt_cell(r.target_accuracy),
            opt_cell(r.discriminator_accuracy)
        );
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T, path: &Path) -> Result<String> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    Ok(text)
}

/// Reads a schema-versioned JSON file.
fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let json_err = |e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    };
    let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err)?;
    let found = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            path: path.to_path_buf(),
            expected: SCHEMA_VERSION,
            found,
        });
    }
    serde_json::from_value(value).map_err(json_err)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let report: RunReport = read_versioned(path)?;
    report.validate()?;
    Ok(report)
}

pub fn read_aggregate(path: impl AsRef<Path>) -> Result<AggregateReport> {
    read_versioned(path.as_ref())
}

/// Something that can be written to disk.
#[derive(Debug, Clone, Copy)]
pub enum Artifact<'a> {
    History(&'a TrainHistory),
    Report(&'a RunReport),
    Aggregate(&'a AggregateReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes a history as CSV, or a report as JSON.
pub fn emit(artifact: Artifact<'_>, path: impl AsRef<Path>, format: Format) -> Result<()> {
    let path = path.as_ref();
    let text = match (artifact, format) {
        (Artifact::History(h), Format::Csv) => history_csv(h),
        (Artifact::History(h), Format::Json) => to_json(h, path)?,
        (Artifact::Report(r), Format::Json) => to_json(r, path)?,
        (Artifact::Aggregate(a), Format::Json) => to_json(a, path)?,
        (_, Format::Csv) => {
            return Err(Error::InvalidArgument(
                "reports are written as JSON only".into(),
            ))
        }
    };
    write_text(path, &text)
}

/// Writes `id,prediction` rows.
pub fn write_predictions(
    path: impl AsRef<Path>,
    ids: &[String],
    predictions: &[usize],
) -> Result<()> {
    let path = path.as_ref();
    if ids.len() != predictions.len() {
        return Err(Error::InvalidArgument(format!(
            "{} ids for {} predictions",
            ids.len(),
            predictions.len()
        )));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    w.write_record(["id", "prediction"]).map_err(csv_err)?;
    for (id, p) in ids.iter().zip(predictions) {
        w.write_record([id.as_str(), &p.to_string()]).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::{EpochRecord, TrainConfig};
    use proptest::prelude::*;

    fn report(task: &str, method: Method, seed: u64, acc: Option<f64>) -> RunReport {
        RunReport {
            schema_version: SCHEMA_VERSION,
            task: task.into(),
            method,
            config_digest: TrainConfig::default().digest(method),
            seed,
            target_accuracy: acc,
            per_class_accuracy: Vec::new(),
            confusion: Vec::new(),
            discriminator_accuracy: None,
            history_file: None,
            runtime_seconds: 1.0,
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0, 1, 2], &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&[0, 1, 2, 3], &[0, 1, 0, 0]).unwrap(), 0.5);
        assert!(accuracy(&[0, 1], &[0]).is_err());
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn confusion_and_per_class() {
        let c = confusion_matrix(&[0, 1, 1, 2], &[0, 0, 1, 1], 3).unwrap();
        assert_eq!(c, vec![vec![1, 1, 0], vec![0, 1, 1], vec![0, 0, 0]]);
        assert_eq!(per_class_accuracy(&c), vec![Some(0.5), Some(0.5), None]);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
    }

    #[test]
    fn report_validation() {
        let digest = TrainConfig::default().digest(Method::Lad);
        let r = RunReport::new("a", Method::Lad, digest.clone(), 0, &[0, 1], Some(&[0, 0]), 2, Some(0.5), 0.1)
            .unwrap();
        assert_eq!(r.target_accuracy, Some(0.5));
        assert_eq!(r.per_class_accuracy, vec![Some(0.5), None]);
        let mut bad = r.clone();
        bad.per_class_accuracy[0] = Some(1.0);
        assert!(bad.validate().is_err());
        let mut bad = r;
        bad.discriminator_accuracy = Some(1.5);
        assert!(bad.validate().is_err());
        let u = RunReport::new("a", Method::Lad, digest, 0, &[0, 1], None, 2, None, 0.1).unwrap();
        assert_eq!(u.target_accuracy, None);
    }

    #[test]
    fn two_point_sample_std() {
        let agg = aggregate(&[
            report("t", Method::Lad, 0, Some(0.8)),
            report("t", Method::Lad, 1, Some(0.9)),
        ])
        .unwrap();
        let e = &agg.entries[0];
        assert!((e.mean_accuracy.unwrap() - 0.85).abs() < 1e-12);
        assert!((e.std_accuracy.unwrap() - 0.01f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert!((e.std_accuracy.unwrap() - 0.0707).abs() < 1e-4);
        assert_eq!(e.n_runs, 2);
        assert!(!e.single_run);
    }

    #[test]
    fn single_run_is_flagged() {
        let agg = aggregate(&[report("t", Method::Lad, 3, Some(0.7))]).unwrap();
        let e = &agg.entries[0];
        assert_eq!(e.std_accuracy, Some(0.0));
        assert!(e.single_run);
        assert!(render_table(&agg).contains("70.0±0.0 (n=1)"));
    }

    #[test]
    fn aggregate_errors() {
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[
            report("t", Method::Lad, 0, Some(0.8)),
            report("t", Method::Lad, 1, None),
        ])
        .is_err());
    }

    #[test]
    fn groups_are_ordered() {
        let agg = aggregate(&[
            report("b", Method::Lad, 0, Some(0.5)),
            report("a", Method::Baseline, 0, Some(0.5)),
            report("a", Method::Lad, 0, Some(0.5)),
        ])
        .unwrap();
        let keys: Vec<_> = agg.entries.iter().map(|e| (e.task.as_str(), e.method)).collect();
        assert_eq!(keys, vec![("a", Method::Lad), ("a", Method::Baseline), ("b", Method::Lad)]);
        let table = render_table(&agg);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("task"));
        assert!(lines[2].contains('-'));
    }

    #[test]
    fn history_csv_rows() {
        let mut h = TrainHistory::default();
        assert_eq!(history_csv(&h), format!("{HISTORY_HEADER}\n"));
        for epoch in [10, 20, 30] {
            h.push(EpochRecord {
                epoch,
                source_class_loss: 0.25,
                target_class_loss: Some(0.5),
                target_accuracy: None,
                discriminator_accuracy: Some(0.75),
                wallclock_seconds: 1.0,
            })
            .unwrap();
        }
        let text = history_csv(&h);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1], "10,0.25,0.5,,0.75");
        assert!(lines[3].starts_with("30,"));
    }

    #[test]
    fn report_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        let mut r = RunReport::new(
            "amazon->dslr",
            Method::Lad,
            TrainConfig::default().digest(Method::Lad),
            7,
            &[0, 1, 2, 2],
            Some(&[0, 1, 1, 2]),
            3,
            Some(0.123456789012345),
            12.5,
        )
        .unwrap();
        r.history_file = Some("history.csv".into());
        emit(Artifact::Report(&r), &path, Format::Json).unwrap();
        assert_eq!(read_report(&path).unwrap(), r);
        assert!(emit(Artifact::Report(&r), &path, Format::Csv).is_err());

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("\"schema_version\": 1", "\"schema_version\": 9")).unwrap();
        assert!(matches!(
            read_report(&path),
            Err(Error::SchemaVersion { found: 9, .. })
        ));
        fs::write(&path, "{ not json").unwrap();
        assert!(matches!(read_report(&path), Err(Error::Json { .. })));
        assert!(matches!(read_report(dir.path().join("missing.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn predictions_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions(&path, &["a".into(), "b,c".into()], &[2, 0]).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "id,prediction\na,2\n\"b,c\",0\n");
        assert!(write_predictions(&path, &["a".into()], &[]).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_order_invariant_and_exact(
            accs in prop::collection::vec(0.0f64..=1.0, 1..15),
            rot in 0usize..15,
        ) {
            let reports: Vec<RunReport> = accs
                .iter()
                .enumerate()
                .map(|(i, &a)| report(if i % 2 == 0 { "x" } else { "y" }, Method::Lad, i as u64, Some(a)))
                .collect();
            let mut permuted = reports.clone();
            permuted.reverse();
            let r = rot % permuted.len();
            permuted.rotate_left(r);
            let a = aggregate(&reports).unwrap();
            prop_assert_eq!(&a, &aggregate(&permuted).unwrap());
            for e in &a.entries {
                let vals: Vec<f64> = reports
                    .iter()
                    .filter(|r| r.task == e.task)
                    .filter_map(|r| r.target_accuracy)
                    .collect();
                let n = vals.len() as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = if vals.len() > 1 {
                    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                prop_assert!((e.mean_accuracy.unwrap() - mean).abs() < 1e-12);
                prop_assert!((e.std_accuracy.unwrap() - var.sqrt()).abs() < 1e-12);
                prop_assert_eq!(e.n_runs, vals.len());
            }
        }
    }
}
