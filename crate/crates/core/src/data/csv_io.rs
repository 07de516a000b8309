//! Feature CSV files.
//!
//! ```text
//! # num_classes=31          (optional, must precede the header)
//! id,label,f0,f1,...,f{d-1} (or id,f0,... for unlabeled data)
//! img_0001,3,0.25,1.5e-3,...
//! ```
//!
//! UTF-8, LF line endings, `.` as decimal separator. Floats are written with
//! 17 significant digits so `f64` values survive a round trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::data::FeatureDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor2;

const NUM_CLASSES_KEY: &str = "num_classes=";

pub fn load_features(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    let mut header_line = 1u64;
    let mut declared_classes = None;
    for line in content.lines() {
        let Some(comment) = line.strip_prefix('#') else {
            break;
        };
        if let Some(k) = comment.trim().strip_prefix(NUM_CLASSES_KEY) {
            let k = k
                .trim()
                .parse::<usize>()
                .map_err(|e| parse_err(header_line, format!("bad num_classes: {e}")))?;
            declared_classes = Some(k);
        }
        header_line += 1;
    }

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(content.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| parse_err(header_line, e.to_string()))?
        .clone();
    if headers.is_empty() || headers.get(0) != Some("id") {
        return Err(parse_err(
            header_line,
            "header must start with an `id` column".into(),
        ));
    }
    let has_labels = headers.get(1) == Some("label");
    let first_feature = if has_labels { 2 } else { 1 };
    let dim = headers.len() - first_feature;
    for (j, name) in headers.iter().skip(first_feature).enumerate() {
        if name != format!("f{j}") {
            return Err(parse_err(
                header_line,
                format!("expected feature column `f{j}`, found `{name}`"),
            ));
        }
    }

    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut data = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            let message = match e.kind() {
                csv::ErrorKind::UnequalLengths {
                    expected_len, len, ..
                } => format!("expected {expected_len} fields, found {len}"),
                _ => e.to_string(),
            };
            parse_err(line, message)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        ids.push(record[0].to_string());
        if has_labels {
            let y = record[1].trim().parse::<usize>().map_err(|_| {
                parse_err(line, format!("label `{}` is not a class id", &record[1]))
            })?;
            labels.push(y);
        }
        for (j, cell) in record.iter().skip(first_feature).enumerate() {
            let v = cell
                .trim()
                .parse::<f64>()
                .map_err(|_| parse_err(line, format!("f{j}: `{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(Error::Data(format!(
                    "{}:{line}: non-finite value in f{j}",
                    path.display()
                )));
            }
            data.push(v);
        }
    }

    let n = ids.len();
    let num_classes = match declared_classes {
        Some(k) => k,
        None => labels.iter().max().map_or(0, |m| m + 1),
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    FeatureDataset::new(
        name,
        Tensor2::from_vec(n, dim, data)?,
        has_labels.then_some(labels),
        num_classes,
        Some(ids),
    )
}

pub fn save_features(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e: std::io::Error| Error::io(path, e);
    let file = File::create(path).map_err(io_err)?;
    let mut out = BufWriter::new(file);
    if dataset.num_classes > 0 {
        writeln!(out, "# {NUM_CLASSES_KEY}{}", dataset.num_classes).map_err(io_err)?;
    }
    {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(&mut out);
        let csv_err = |e: csv::Error| Error::io(path, e.into());
        let mut header = vec!["id".to_string()];
        if dataset.labels.is_some() {
            header.push("label".into());
        }
        header.extend((0..dataset.dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_err)?;
        let mut row = Vec::with_capacity(header.len());
        for (r, feats) in dataset.features.iter_rows().enumerate() {
            row.clear();
            row.push(dataset.id(r));
            if let Some(labels) = &dataset.labels {
                row.push(labels[r].to_string());
            }
            row.extend(feats.iter().map(|v| format!("{v:.16e}")));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

/// Reads an `id,label` file.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(content.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["id", "label"] {
        return Err(parse_err(1, "header must be `id,label`".into()));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        let y = record[1]
            .trim()
            .parse::<usize>()
            .map_err(|_| parse_err(line, format!("label `{}` is not a class id", &record[1])))?;
        out.push((record[0].to_string(), y));
    }
    Ok(out)
}

/// Writes the labels of `dataset` as an `id,label` file.
pub fn save_labels(dataset: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument(format!("`{}` has no labels to save", dataset.name)))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::io(path, e.into());
    w.write_record(["id", "label"]).map_err(csv_err)?;
    for (r, y) in labels.iter().enumerate() {
        w.write_record([dataset.id(r), y.to_string()]).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, e.into_error()))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn write(dir: &tempfile::TempDir, name: &str, content: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, content).unwrap();
        p
    }

    #[test]
    fn loads_labeled_and_unlabeled() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "id,label,f0,f1\nx,0,1.0,2.0\ny,2,3.5,-1\nz,1,0,0\n");
        let ds = load_features(&p).unwrap();
        assert_eq!((ds.len(), ds.dim()), (3, 2));
        assert_eq!(ds.labels, Some(vec![0, 2, 1]));
        assert_eq!(ds.num_classes, 3);
        assert_eq!(ds.name, "a");
        assert_eq!(ds.features.row(1), &[3.5, -1.0]);

        let p = write(&dir, "b.csv", "id,f0,f1\nx,1.0,2.0\ny,3.5,-1\nz,0,0\n");
        let ds = load_features(&p).unwrap();
        assert!(ds.labels.is_none());
        assert_eq!(ds.num_classes, 0);
        assert_eq!(ds.ids.as_deref().unwrap()[2], "z");
    }

    #[test]
    fn header_metadata_sets_class_count() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "# num_classes=5\nid,label,f0\nx,0,1.0\n");
        assert_eq!(load_features(&p).unwrap().num_classes, 5);
        let p = write(&dir, "b.csv", "# num_classes=2\nid,label,f0\nx,3,1.0\n");
        assert!(matches!(load_features(&p), Err(Error::Data(_))));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "# num_classes=2\nid,label,f0,f1\nx,0,1.0,2.0\ny,1,3.5\n");
        match load_features(&p) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("expected 4 fields"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(&dir, "b.csv", "id,f0\nx,1.0\ny,abc\n");
        match load_features(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        let p = write(&dir, "c.csv", "id,f0\nx,NaN\n");
        assert!(matches!(load_features(&p), Err(Error::Data(_))));
        let p = write(&dir, "d.csv", "id,f0\nx,inf\n");
        assert!(matches!(load_features(&p), Err(Error::Data(_))));
        let p = write(&dir, "e.csv", "name,f0\nx,1\n");
        assert!(matches!(load_features(&p), Err(Error::Parse { line: 1, .. })));
        let p = write(&dir, "f.csv", "id,label,f0\nx,-1,1\n");
        assert!(matches!(load_features(&p), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(load_features(dir.path().join("missing.csv")), Err(Error::Io { .. })));
    }

    #[test]
    fn unlabeled_save_omits_label_column() {
        let dir = tempfile::tempdir().unwrap();
        let f = Tensor2::from_rows(&[[1.0, 2.0]]).unwrap();
        let ds = FeatureDataset::new("t", f, None, 0, Some(vec!["r0".into()])).unwrap();
        let p = dir.path().join("t.csv");
        save_features(&ds, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "id,f0,f1\nr0,1.0000000000000000e0,2.0000000000000000e0\n"
        );
    }

    #[test]
    fn empty_dataset_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let ds = FeatureDataset::new("e", Tensor2::zeros(0, 3), Some(vec![]), 4, None).unwrap();
        let p = dir.path().join("e.csv");
        save_features(&ds, &p).unwrap();
        assert_eq!(
            std::fs::read_to_string(&p).unwrap(),
            "# num_classes=4\nid,label,f0,f1,f2\n"
        );
        let back = load_features(&p).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 3);
        assert_eq!(back.num_classes, 4);
    }

    #[test]
    fn random_dataset_round_trips_bit_exactly() {
        let mut rng = Rng::new(17);
        let (n, d) = (1000, 64);
        let data = (0..n * d)
            .map(|_| (rng.uniform() - 0.5) * 10f64.powi((rng.uniform() * 20.0) as i32 - 10))
            .collect();
        let labels = (0..n).map(|_| (rng.uniform() * 7.0) as usize).collect();
        let ids = (0..n).map(|i| format!("img,{i}")).collect();
        let ds = FeatureDataset::new(
            "rt",
            Tensor2::from_vec(n, d, data).unwrap(),
            Some(labels),
            9,
            Some(ids),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.csv");
        save_features(&ds, &p).unwrap();
        let back = load_features(&p).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn label_files_round_trip_and_attach() {
        let dir = tempfile::tempdir().unwrap();
        let ds = FeatureDataset::new(
            "t",
            Tensor2::from_rows(&[[0.0], [1.0], [2.0]]).unwrap(),
            Some(vec![2, 0, 1]),
            3,
            Some(vec!["a".into(), "b".into(), "c,d".into()]),
        )
        .unwrap();
        let p = dir.path().join("labels.csv");
        save_labels(&ds, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "id,label\na,2\nb,0\n\"c,d\",1\n");
        let pairs = load_labels(&p).unwrap();
        let relabeled = ds.without_labels().with_labels_from(&pairs).unwrap();
        assert_eq!(relabeled, ds);

        assert!(ds.without_labels().with_labels_from(&pairs[..2]).is_err());
        assert!(save_labels(&ds.without_labels(), &p).is_err());
        let bad = write(&dir, "bad.csv", "id,label\na,x\n");
        assert!(matches!(load_labels(&bad), Err(Error::Parse { line: 2, .. })));
        let bad = write(&dir, "bad2.csv", "id,y\na,1\n");
        assert!(load_labels(&bad).is_err());
    }
}
