use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::io::write_atomic;
use crate::types::{ClassId, Dataset, DatasetError, LabelSpace, LabelSpaceError, PredictionLog, Split};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("unexpected header: {0}")]
    UnknownHeader(String),
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("line {line}: expected {expected} features, found {found}")]
    InconsistentDimension {
        line: u64,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: u64, label: String },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    LabelSpace(#[from] LabelSpaceError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(e: csv::Error) -> DataError {
    let line = e.position().map_or(0, |p| p.line());
    DataError::MalformedRow {
        line,
        reason: e.to_string(),
    }
}

/// Seventeen significant digits, enough to round-trip any finite `f64`.
fn fmt_f64(out: &mut String, x: f64) {
    let _ = write!(out, "{x:.16e}");
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

struct RawRows {
    dim: usize,
    labels: Vec<(u64, String)>,
    features: Vec<Vec<f64>>,
}

fn read_raw(path: &Path) -> Result<RawRows, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let mut cols = headers.iter();
    if cols.next() != Some("label") {
        return Err(DataError::UnknownHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut dim = 0;
    for (i, name) in cols.enumerate() {
        if name != format!("f{i}") {
            return Err(DataError::UnknownHeader(format!(
                "column {} is {name:?}, expected \"f{i}\"",
                i + 1
            )));
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(DataError::UnknownHeader("no feature columns".into()));
    }

    let mut labels = Vec::new();
    let mut features = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != dim + 1 {
            return Err(DataError::InconsistentDimension {
                line,
                expected: dim,
                found: record.len().saturating_sub(1),
            });
        }
        let label = record[0].to_string();
        if label.is_empty() {
            return Err(DataError::MalformedRow {
                line,
                reason: "empty label".into(),
            });
        }
        let row = record
            .iter()
            .skip(1)
            .map(|f| match f.trim().parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(DataError::MalformedRow {
                    line,
                    reason: format!("{f:?} is not a finite number"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        labels.push((line, label));
        features.push(row);
    }
    if features.is_empty() {
        return Err(DataError::Dataset(DatasetError::Empty));
    }
    Ok(RawRows {
        dim,
        labels,
        features,
    })
}

/// Reads a dataset whose label space is inferred from the file: classes in
/// order of first appearance, counts from the file itself.
pub fn read_dataset_csv(path: &Path, split: Split) -> Result<(Dataset, LabelSpace), DataError> {
    let raw = read_raw(path)?;
    let mut names: Vec<String> = Vec::new();
    let mut index = std::collections::HashMap::new();
    let labels: Vec<ClassId> = raw
        .labels
        .into_iter()
        .map(|(_, name)| {
            *index.entry(name.clone()).or_insert_with(|| {
                names.push(name);
                names.len() - 1
            })
        })
        .collect();
    let mut counts = vec![0u64; names.len()];
    for &l in &labels {
        counts[l] += 1;
    }
    let space = LabelSpace::new(names, counts)?;
    let ds = Dataset::new(raw.features, labels, split)?;
    debug_assert_eq!(ds.dim(), raw.dim);
    Ok((ds, space))
}

/// Reads a dataset against a known label space.
pub fn read_dataset_csv_in_space(
    path: &Path,
    space: &LabelSpace,
    split: Split,
) -> Result<Dataset, DataError> {
    let raw = read_raw(path)?;
    let labels = raw
        .labels
        .into_iter()
        .map(|(line, name)| {
            space
                .index_of(&name)
                .ok_or(DataError::UnknownLabel { line, label: name })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(raw.features, labels, split)?)
}

pub fn write_dataset_csv(dataset: &Dataset, space: &LabelSpace, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("label");
    for i in 0..dataset.dim() {
        let _ = write!(out, ",f{i}");
    }
    out.push('\n');
    for (x, &y) in dataset.features().iter().zip(dataset.labels()) {
        out.push_str(&quote(space.name(y)));
        for &v in x {
            out.push(',');
            fmt_f64(&mut out, v);
        }
        out.push('\n');
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

/// `name,count` per class, in class order.
pub fn write_labels_csv(space: &LabelSpace, path: &Path) -> Result<(), DataError> {
    let mut out = String::from("name,count\n");
    for (name, count) in space.names().iter().zip(space.counts()) {
        let _ = writeln!(out, "{},{count}", quote(name));
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

pub fn read_labels_csv(path: &Path) -> Result<LabelSpace, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["name", "count"] {
        return Err(DataError::UnknownHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut names = Vec::new();
    let mut counts = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        names.push(record[0].to_string());
        counts.push(record[1].trim().parse::<u64>().map_err(|e| DataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?);
    }
    Ok(LabelSpace::new(names, counts)?)
}

/// Reads `ground_truth,predicted` rows of class names.
pub fn read_prediction_log_csv(path: &Path, space: &LabelSpace) -> Result<PredictionLog, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["ground_truth", "predicted"] {
        return Err(DataError::UnknownHeader(headers.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(DataError::MalformedRow {
                line,
                reason: format!("expected 2 fields, found {}", record.len()),
            });
        }
        let resolve = |name: &str| {
            space.index_of(name).ok_or_else(|| DataError::UnknownLabel {
                line,
                label: name.to_string(),
            })
        };
        rows.push((resolve(&record[0])?, resolve(&record[1])?));
    }
    Ok(PredictionLog::new(rows, space.len()).expect("indices resolved against the space"))
}

pub fn write_prediction_log_csv(
    log: &PredictionLog,
    space: &LabelSpace,
    path: &Path,
) -> Result<(), DataError> {
    let mut out = String::from("ground_truth,predicted\n");
    for &(t, p) in log.rows() {
        let _ = writeln!(out, "{},{}", quote(space.name(t)), quote(space.name(p)));
    }
    write_atomic(path, out.as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space() -> LabelSpace {
        LabelSpace::new(vec!["on".into(), "near, by".into(), "has".into()], vec![3, 1, 1]).unwrap()
    }

    #[test]
    fn dataset_round_trip_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let s = space();
        let ds = Dataset::new(
            vec![vec![0.1, -2.5e-300], vec![1.0 / 3.0, 7.0], vec![f64::MAX, -0.0]],
            vec![0, 1, 2],
            Split::Train,
        )
        .unwrap();
        write_dataset_csv(&ds, &s, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = read_dataset_csv_in_space(&p, &s, Split::Train).unwrap();
        assert_eq!(back, ds);
        write_dataset_csv(&back, &s, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);

        let (inferred, inferred_space) = read_dataset_csv(&p, Split::Train).unwrap();
        assert_eq!(inferred_space.names(), s.names());
        assert_eq!(inferred.labels(), ds.labels());
    }

    #[test]
    fn short_row_reports_its_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "label,f0,f1\non,1.0,2.0\non,1.0\n").unwrap();
        match read_dataset_csv(&p, Split::Train) {
            Err(DataError::InconsistentDimension {
                line: 3,
                expected: 2,
                found: 1,
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header_and_empty_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "class,f0\non,1.0\n").unwrap();
        assert!(matches!(read_dataset_csv(&p, Split::Train), Err(DataError::UnknownHeader(_))));
        fs::write(&p, "label,f0\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&p, Split::Train),
            Err(DataError::Dataset(DatasetError::Empty))
        ));
        fs::write(&p, "").unwrap();
        assert!(read_dataset_csv(&p, Split::Train).is_err());
        fs::write(&p, "label,f0\non,abc\n").unwrap();
        assert!(matches!(
            read_dataset_csv(&p, Split::Train),
            Err(DataError::MalformedRow { line: 2, .. })
        ));
    }

    #[test]
    fn prediction_log_round_trip_and_unknown_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.csv");
        let s = space();
        let log = PredictionLog::new(vec![(0, 0), (1, 0), (2, 1)], 3).unwrap();
        write_prediction_log_csv(&log, &s, &p).unwrap();
        let bytes = fs::read(&p).unwrap();
        let back = read_prediction_log_csv(&p, &s).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.len(), 3);
        write_prediction_log_csv(&back, &s, &p).unwrap();
        assert_eq!(fs::read(&p).unwrap(), bytes);

        fs::write(&p, "ground_truth,predicted\non,on\nunder,on\n").unwrap();
        match read_prediction_log_csv(&p, &s) {
            Err(DataError::UnknownLabel { line: 3, label }) => assert_eq!(label, "under"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.csv");
        write_labels_csv(&space(), &p).unwrap();
        assert_eq!(read_labels_csv(&p).unwrap(), space());
    }

    proptest! {
        #[test]
        fn any_finite_feature_survives(xs in proptest::collection::vec(
            any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..6)
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("d.csv");
            let s = space();
            let ds = Dataset::new(vec![xs.clone(), xs], vec![2, 0], Split::Val).unwrap();
            write_dataset_csv(&ds, &s, &p).unwrap();
            let back = read_dataset_csv_in_space(&p, &s, Split::Val).unwrap();
            let bits = |d: &Dataset| d.features().iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&ds));
        }
    }
}
