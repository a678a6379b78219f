//! On-disk formats: dataset CSV, JSON documents, and the CSV exports of
//! traces, PR curves, predictions and gap series.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate};
use serde::de::DeserializeOwned;
use serde::Serialize;

use qboost_core::bench::{GapSeries, UNSCORED_GAP};
use qboost_core::dataset::{Dataset, Label, Row};
use qboost_core::metrics::PrCurve;
use qboost_core::qubo::{QuboFile, QuboMatrix};
use qboost_core::solvers::SolveTrace;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    /// serde_json's message already carries line and column.
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {column} column not found")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: file is empty")]
    Empty { path: PathBuf },
    #[error("{path}: line {line}, column {column}: {message}")]
    Cell {
        path: PathBuf,
        line: u64,
        column: String,
        message: String,
    },
    #[error("{path}: {source}")]
    Invalid {
        path: PathBuf,
        source: qboost_core::Error,
    },
}

pub type IoResult<T> = Result<T, IoError>;

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> IoError + '_ {
    move |source| IoError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Creates the parent directory if needed and writes `bytes`.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> IoResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(file_err(dir))?;
    }
    fs::write(path, bytes).map_err(file_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> IoResult<T> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    parse_json(path, &text)
}

pub fn parse_json<T: DeserializeOwned>(path: &Path, text: &str) -> IoResult<T> {
    serde_json::from_str(text).map_err(|source| IoError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("serializable value");
    out.push(b'\n');
    out
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> IoResult<()> {
    write_bytes(path, &to_json_bytes(value))
}

pub fn read_qubo(path: &Path) -> IoResult<QuboMatrix> {
    let file: QuboFile = read_json(path)?;
    QuboMatrix::from_file(&file).map_err(|source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_qubo(path: &Path, q: &QuboMatrix) -> IoResult<()> {
    write_json(path, &q.to_file())
}

/// Day number of an integer ordinal, an ISO-8601 date, or an RFC 3339
/// timestamp.
pub fn parse_date(cell: &str) -> Option<i64> {
    let cell = cell.trim();
    if let Ok(v) = cell.parse::<i64>() {
        return Some(v);
    }
    if let Ok(d) = NaiveDate::parse_from_str(cell, "%Y-%m-%d") {
        return Some(i64::from(d.num_days_from_ce()));
    }
    DateTime::parse_from_rfc3339(cell)
        .ok()
        .map(|t| i64::from(t.date_naive().num_days_from_ce()))
}

/// Reads a headed CSV. Labels must be 0 or 1 and map to -1 and +1; every
/// column other than the label and date is a numeric feature, in file
/// order.
pub fn load_csv(path: &Path, label_column: &str, date_column: &str) -> IoResult<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let headers = reader.headers().map_err(csv_err(path))?.clone();
    if headers.is_empty() {
        return Err(IoError::Empty {
            path: path.to_path_buf(),
        });
    }
    let find = |name: &str, what: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| IoError::MissingColumn {
                path: path.to_path_buf(),
                column: format!("{what} ({name})"),
            })
    };
    let label_at = find(label_column, "label")?;
    let date_at = find(date_column, "date")?;
    let feature_at: Vec<usize> = (0..headers.len()).filter(|&c| c != label_at && c != date_at).collect();
    let names: Vec<String> = feature_at.iter().map(|&c| headers[c].to_string()).collect();

    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err(path))?;
        let line = record.position().map_or(0, |p| p.line());
        let cell_err = |c: usize, message: String| IoError::Cell {
            path: path.to_path_buf(),
            line,
            column: headers[c].to_string(),
            message,
        };
        let label = match record[label_at].trim() {
            "0" => Label::Negative,
            "1" => Label::Positive,
            other => return Err(cell_err(label_at, format!("label must be 0 or 1, got {other:?}"))),
        };
        let date = parse_date(&record[date_at])
            .ok_or_else(|| cell_err(date_at, format!("unreadable date {:?}", &record[date_at])))?;
        let mut features = Vec::with_capacity(feature_at.len());
        for &c in &feature_at {
            let v: f64 = record[c]
                .trim()
                .parse()
                .map_err(|_| cell_err(c, format!("non-numeric value {:?}", &record[c])))?;
            features.push(v);
        }
        rows.push(Row { features, label, date });
    }
    if rows.is_empty() {
        return Err(IoError::Empty {
            path: path.to_path_buf(),
        });
    }
    Dataset::new(rows, names).map_err(|source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `date, <features>, label` with labels as 0/1, readable by
/// [`load_csv`] with columns `label` and `date`.
pub fn write_dataset_csv(path: &Path, d: &Dataset) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["date".to_string()];
    header.extend(d.feature_names().iter().cloned());
    header.push("label".to_string());
    w.write_record(&header).map_err(csv_err(path))?;
    for row in d.rows() {
        let mut rec = Vec::with_capacity(row.features.len() + 2);
        rec.push(row.date.to_string());
        rec.extend(row.features.iter().map(f64::to_string));
        rec.push(if row.label == Label::Positive { "1" } else { "0" }.to_string());
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    finish(path, w)
}

fn finish(path: &Path, w: csv::Writer<Vec<u8>>) -> IoResult<()> {
    let bytes = w.into_inner().map_err(|e| IoError::File {
        path: path.to_path_buf(),
        source: e.into_error(),
    })?;
    write_bytes(path, &bytes)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `cycle, atom_count, cost, best_cost, gap`. Cycles without a scored
/// bitstring leave `cost` empty; `gap` is measured against `reference`
/// and is the unscored gap until the first score.
pub fn write_trace_csv(path: &Path, trace: &SolveTrace, reference: f64) -> IoResult<()> {
    let gaps = trace.best_gaps(reference).map_err(|source| IoError::Invalid {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["cycle", "atom_count", "cost", "best_cost", "gap"])
        .map_err(csv_err(path))?;
    for (r, g) in trace.records.iter().zip(gaps) {
        w.write_record([
            r.cycle.to_string(),
            r.atom_count.to_string(),
            opt(r.cost),
            opt(r.best_cost),
            g.unwrap_or(UNSCORED_GAP).to_string(),
        ])
        .map_err(csv_err(path))?;
    }
    finish(path, w)
}

pub fn write_pr_csv(path: &Path, curve: &PrCurve) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "precision", "recall"]).map_err(csv_err(path))?;
    for p in &curve.points {
        w.write_record([p.threshold.to_string(), p.precision.to_string(), p.recall.to_string()])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// `id, margin, label` with the predicted label as -1 or 1.
pub fn write_predictions_csv(path: &Path, margins: &[f64], labels: &[Label]) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "margin", "label"]).map_err(csv_err(path))?;
    for (id, (m, l)) in margins.iter().zip(labels).enumerate() {
        w.write_record([id.to_string(), m.to_string(), l.sign().to_string()])
            .map_err(csv_err(path))?;
    }
    finish(path, w)
}

/// One gap-convergence block per problem size: `n, cycle, mean, std`.
pub fn write_series_csv(path: &Path, series: &[(usize, GapSeries)]) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "cycle", "mean", "std"]).map_err(csv_err(path))?;
    for (n, s) in series {
        for (c, (m, sd)) in s.mean.iter().zip(&s.std).enumerate() {
            w.write_record([n.to_string(), (c + 1).to_string(), m.to_string(), sd.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    finish(path, w)
}

/// Plain text with a trailing newline.
pub fn write_text(path: &Path, text: &str) -> IoResult<()> {
    let mut bytes = Vec::with_capacity(text.len() + 1);
    bytes.write_all(text.as_bytes()).expect("in-memory write");
    if !text.ends_with('\n') {
        bytes.push(b'\n');
    }
    write_bytes(path, &bytes)
}
