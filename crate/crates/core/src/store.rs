//! Line-oriented dataset store: one JSON object per line.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::model::{AdvisoryRecord, Timestamp};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{} invalid line(s) in dataset", .0.rejections.len())]
    Invalid(ValidationReport),
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl StoreError {
    fn io(path: &Path, source: io::Error) -> Self {
        StoreError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Rejection {
    /// 1-based line number in the source file.
    pub line_no: usize,
    pub reason: String,
}

/// Lines rejected while loading, in file order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub rejections: Vec<Rejection>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.rejections.is_empty()
    }

    /// Writes `line_no<TAB>reason`, one rejection per line.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.rejections {
            let reason = r.reason.replace(['\t', '\n'], " ");
            writeln!(out, "{}\t{}", r.line_no, reason)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_tsv(&mut w).map_err(|e| StoreError::io(path, e))?;
        w.flush().map_err(|e| StoreError::io(path, e))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.rejections {
            writeln!(f, "line {}: {}", r.line_no, r.reason)?;
        }
        Ok(())
    }
}

/// Records that passed validation plus the report for those that did not.
#[derive(Clone, Debug, Default)]
pub struct LoadedDataset {
    pub records: Vec<AdvisoryRecord>,
    pub report: ValidationReport,
}

impl LoadedDataset {
    /// Fails when any line was rejected.
    pub fn into_strict(self) -> Result<Vec<AdvisoryRecord>, StoreError> {
        if self.report.is_empty() {
            Ok(self.records)
        } else {
            Err(StoreError::Invalid(self.report))
        }
    }
}

/// Loads and validates a dataset. Blank lines are skipped; every other line
/// either becomes a record or a rejection. Duplicate identifiers are rejected
/// on their second and later occurrences.
pub fn load_dataset(path: &Path) -> Result<LoadedDataset, StoreError> {
    load_dataset_at(path, Timestamp::from_datetime(chrono::Utc::now()))
}

/// As [`load_dataset`], with an explicit upper bound for timestamps.
pub fn load_dataset_at(path: &Path, now: Timestamp) -> Result<LoadedDataset, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    parse_dataset(BufReader::new(file), now).map_err(|e| StoreError::io(path, e))
}

pub fn parse_dataset<R: BufRead>(reader: R, now: Timestamp) -> io::Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let reject = |reason: String| Rejection { line_no, reason };
        let record: AdvisoryRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                out.report.rejections.push(reject(format!("parse error: {e}")));
                continue;
            }
        };
        if let Err(reason) = record.validate(now) {
            out.report.rejections.push(reject(reason));
            continue;
        }
        if !seen.insert(record.ghsa_id.clone()) {
            out.report
                .rejections
                .push(reject(format!("duplicate ghsa_id {}", record.ghsa_id)));
            continue;
        }
        out.records.push(record);
    }
    Ok(out)
}

pub fn save_dataset(records: &[AdvisoryRecord], path: &Path) -> Result<(), StoreError> {
    save_jsonl(records, path)
}

/// Writes any serializable items as JSON lines.
pub fn save_jsonl<T: Serialize>(items: &[T], path: &Path) -> Result<(), StoreError> {
    let file = File::create(path).map_err(|e| StoreError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_jsonl(items, &mut w).map_err(|e| StoreError::io(path, e))?;
    w.flush().map_err(|e| StoreError::io(path, e))
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], out: &mut W) -> io::Result<()> {
    for item in items {
        serde_json::to_writer(&mut *out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads JSON lines without record-level validation (profiles, repo metadata).
pub fn load_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut items = Vec::new();
    let mut report = ValidationReport::default();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(item) => items.push(item),
            Err(e) => report.rejections.push(Rejection {
                line_no: idx + 1,
                reason: format!("parse error: {e}"),
            }),
        }
    }
    if report.is_empty() {
        Ok(items)
    } else {
        Err(StoreError::Invalid(report))
    }
}
