//! Report envelope, exit codes and CSV series.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cfs_core::CfsError;
use serde::Serialize;
use serde_json::Value;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_SCHEMA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] CfsError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Read { .. } | CliError::Usage(_) => EXIT_SCHEMA,
            CliError::Write { .. } | CliError::Csv(_) => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                CfsError::DimensionMismatch(_) | CfsError::InvalidInput(_) | CfsError::TauOutOfRange { .. } => EXIT_SCHEMA,
                CfsError::EigenFailure { .. } | CfsError::Quadrature { .. } => EXIT_NUMERIC,
                CfsError::Precondition(_) | CfsError::Model(_) => EXIT_FAIL,
            },
        }
    }

    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_SCHEMA => "schema_error",
            EXIT_NUMERIC => "numerical_failure",
            _ => "precondition_failure",
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    PreconditionViolated,
    Error,
}

impl Status {
    pub fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => EXIT_PASS,
            _ => EXIT_FAIL,
        }
    }
}

/// Long series for external plotting.
#[derive(Debug, Clone, Default)]
pub struct Series {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
        Ok(())
    }
}

/// What a command hands back to the driver.
pub struct Outcome {
    pub status: Status,
    pub tolerances: Value,
    pub result: Value,
    pub series: Option<Series>,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub seed: u64,
    pub timestamp: String,
    pub status: Status,
    pub exit_code: i32,
    pub inputs: BTreeMap<String, String>,
    pub tolerances: Value,
    pub result: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
}

#[derive(Debug, Serialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

/// RFC 3339 UTC time; SOURCE_DATE_EPOCH pins it for reproducible files.
pub fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.trim().parse::<i64>().ok());
    let t = match secs.and_then(|s| chrono::DateTime::from_timestamp(s, 0)) {
        Some(t) => t,
        None => chrono::Utc::now(),
    };
    t.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

pub fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let cases = [
            (CliError::Core(CfsError::InvalidInput("x".into())), EXIT_SCHEMA, "schema_error"),
            (CliError::Core(CfsError::Precondition("x".into())), EXIT_FAIL, "precondition_failure"),
            (CliError::Usage("x".into()), EXIT_SCHEMA, "schema_error"),
        ];
        for (e, code, kind) in cases {
            assert_eq!(e.exit_code(), code);
            assert_eq!(e.kind(), kind);
        }
        assert_eq!(Status::PreconditionViolated.exit_code(), EXIT_FAIL);
        assert_eq!(Status::from_pass(true).exit_code(), EXIT_PASS);
    }

    #[test]
    fn series_round_trips_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        let mut s = Series::new(&["tau", "value"]);
        s.rows = vec![vec![0.1, -2.5e-17], vec![1.0, 3.0]];
        s.write(&path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        assert_eq!(r.headers().unwrap(), vec!["tau", "value"]);
        let back: Vec<Vec<f64>> = r.records().map(|rec| rec.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
        assert_eq!(back, s.rows);
    }
}
