//! Line-delimited JSON record files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Invalid { path: String, line: usize, message: String },
}

/// A skipped line in non-strict reading.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineDiagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadOutcome<T> {
    pub records: Vec<T>,
    pub diagnostics: Vec<LineDiagnostic>,
}

/// Reads one record per non-blank line. Each parsed record also goes through
/// `validate`. In strict mode the first bad line aborts; otherwise bad lines
/// are reported and skipped.
pub fn read_jsonl<T, V>(path: impl AsRef<Path>, strict: bool, validate: V) -> Result<ReadOutcome<T>, JsonlError>
where
    T: DeserializeOwned,
    V: Fn(&T) -> Result<(), String>,
{
    let path = path.as_ref();
    let shown = path.display().to_string();
    let io = |source| JsonlError::Io {
        path: shown.clone(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<T>(&line)
            .map_err(|e| e.to_string())
            .and_then(|r| validate(&r).map(|()| r));
        match parsed {
            Ok(r) => records.push(r),
            Err(message) if strict => {
                return Err(JsonlError::Invalid {
                    path: shown,
                    line: i + 1,
                    message,
                })
            }
            Err(message) => {
                log::warn!("{shown}:{}: skipped: {message}", i + 1);
                diagnostics.push(LineDiagnostic { line: i + 1, message });
            }
        }
    }
    Ok(ReadOutcome { records, diagnostics })
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, records: &[T]) -> Result<(), JsonlError> {
    let path = path.as_ref();
    let io = |source| JsonlError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(w, "{line}").map_err(io)?;
    }
    w.flush().map_err(io)
}
