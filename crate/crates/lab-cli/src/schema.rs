//! CSV schemas. One long format per artifact kind so plotting and reports
//! stay generic.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ssl_dynamics::Objective;

use crate::error::{LabError, Result};

pub const TRAJECTORY_HEADER: &[&str] = &["time", "feature_index", "w_bar"];
pub const CRITICAL_TIME_HEADER: &[&str] = &["objective", "L", "epsilon", "lambda", "rho", "p", "t_star_measured", "t_star_formula"];
pub const GENERATIVE_HEADER: &[&str] = &["run_seed", "feature", "lambda_hat", "rho_hat", "lambda_theory", "rho_theory", "diag_error", "T_or_n"];
pub const MATRIX_HEADER: &[&str] = &["row", "col", "value"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub feature_index: usize,
    pub w_bar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalTimeRow {
    pub objective: Objective,
    #[serde(rename = "L")]
    pub depth: u32,
    pub epsilon: f64,
    pub lambda: f64,
    pub rho: f64,
    pub p: f64,
    pub t_star_measured: f64,
    pub t_star_formula: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerativeRow {
    pub run_seed: u64,
    pub feature: usize,
    pub lambda_hat: f64,
    pub rho_hat: f64,
    pub lambda_theory: f64,
    pub rho_theory: f64,
    pub diag_error: f64,
    #[serde(rename = "T_or_n")]
    pub t_or_n: usize,
}

/// One cell of a dense matrix, for heatmaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    Trajectory,
    CriticalTime,
    Generative,
    Matrix,
}

impl Schema {
    pub fn header(self) -> &'static [&'static str] {
        match self {
            Schema::Trajectory => TRAJECTORY_HEADER,
            Schema::CriticalTime => CRITICAL_TIME_HEADER,
            Schema::Generative => GENERATIVE_HEADER,
            Schema::Matrix => MATRIX_HEADER,
        }
    }

    pub fn from_header(header: &[&str]) -> Option<Self> {
        [Schema::Trajectory, Schema::CriticalTime, Schema::Generative, Schema::Matrix].into_iter().find(|s| s.header() == header)
    }
}

/// Serialises rows (with header) to an in-memory CSV document.
pub fn to_csv<T: Serialize>(rows: &[T], schema: Schema) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    let fail = |e: csv::Error| LabError::format("<memory>", e.to_string());
    w.write_record(schema.header()).map_err(fail)?;
    for r in rows {
        w.serialize(r).map_err(fail)?;
    }
    w.into_inner().map_err(|e| LabError::format("<memory>", e.to_string()))
}

/// Schema of a CSV file, from its header line.
pub fn detect_schema(path: &Path) -> Result<Schema> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    let fields: Vec<&str> = header.iter().collect();
    Schema::from_header(&fields).ok_or_else(|| LabError::format(path, format!("unrecognised header `{}`", fields.join(","))))
}

/// Reads every row, requiring the header to match `schema` exactly.
pub fn read_rows<T: DeserializeOwned>(path: &Path, schema: Schema) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.clone();
    let fields: Vec<&str> = header.iter().collect();
    if fields != schema.header() {
        return Err(LabError::format(path, format!("expected header `{}`, found `{}`", schema.header().join(","), fields.join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_error(path, e))).collect()
}

fn csv_error(path: &Path, e: csv::Error) -> LabError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => LabError::io(path, io),
        other => LabError::format(path, format!("{other:?}")),
    }
}
