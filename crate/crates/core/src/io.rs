//! File formats shared by the command-line front end.
//!
//! Datasets and adaptive scenarios travel as CSV, trajectories as JSON
//! lines. All floats are written with 17 significant digits so a reread
//! reproduces the exact bit pattern; this matters because locations are
//! matched exactly against the model's location set.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write as _};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adaptive::{AdaptiveTrajectoryPoint, ScenarioStep, VisitRecord};
use crate::baseline::{Dataset, Record};
use crate::error::{Error, Result};
use crate::filter::TrajectoryPoint;

/// Formats a float with enough digits to round-trip exactly.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_float(text: &str, line: usize, column: &str) -> Result<f64> {
    text.trim().parse::<f64>().map_err(|e| Error::Parse {
        line,
        message: format!("column {column}: {e} (got {text:?})"),
    })
}

fn dataset_header(dim: usize) -> Vec<String> {
    let mut header = vec!["t".to_string()];
    for i in 1..=dim {
        header.push(format!("x{i}"));
    }
    header.push("y".to_string());
    header.push("sigma".to_string());
    header
}

/// Writes measurement records as `t,x1[,x2...],y,sigma`. An empty slice
/// produces a header-only file.
pub fn write_records(path: &Path, records: &[Record], dim: usize) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    writer.write_record(dataset_header(dim)).map_err(csv_error)?;
    for r in records {
        if r.point.len() != dim {
            return Err(Error::DimensionMismatch(format!(
                "record has dimension {}, writer expects {dim}",
                r.point.len()
            )));
        }
        let mut row = vec![format_float(r.time)];
        row.extend(r.point.iter().map(|&c| format_float(c)));
        row.push(format_float(r.value));
        row.push(format_float(r.noise_sd));
        writer.write_record(row).map_err(csv_error)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a dataset CSV written by [`write_records`] (or by hand with the
/// same schema). The file must contain at least one record.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let dim = validate_dataset_header(&headers)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != dim + 3 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", dim + 3, row.len()),
            });
        }
        let time = parse_float(&row[0], line, "t")?;
        let mut point = Vec::with_capacity(dim);
        for d in 0..dim {
            point.push(parse_float(&row[1 + d], line, &format!("x{}", d + 1))?);
        }
        let value = parse_float(&row[dim + 1], line, "y")?;
        let noise_sd = parse_float(&row[dim + 2], line, "sigma")?;
        records.push(Record { time, point, value, noise_sd });
    }
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "dataset {} contains no records",
            path.display()
        )));
    }
    Dataset::new(records)
}

fn validate_dataset_header(headers: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = headers.iter().collect();
    if fields.len() < 4
        || fields[0] != "t"
        || fields[fields.len() - 2] != "y"
        || fields[fields.len() - 1] != "sigma"
    {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header t,x1[,x2...],y,sigma, got {}", fields.join(",")),
        });
    }
    let dim = fields.len() - 3;
    for (i, field) in fields[1..=dim].iter().enumerate() {
        let want = format!("x{}", i + 1);
        if *field != want {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected column {want}, got {field}"),
            });
        }
    }
    Ok(dim)
}

/// Writes an adaptive scenario as `t,x1[,x2...],y,sigma,is_new`, one row per
/// visit. Steps without visits cannot be represented and are rejected.
pub fn write_scenario(path: &Path, steps: &[ScenarioStep], dim: usize) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(csv_error)?;
    let mut header = dataset_header(dim);
    header.push("is_new".to_string());
    writer.write_record(header).map_err(csv_error)?;
    for step in steps {
        if step.visits.is_empty() {
            return Err(Error::InvalidInput(format!(
                "scenario step at {} has no visits; empty steps have no file form",
                step.time
            )));
        }
        for visit in &step.visits {
            if visit.point.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "visit has dimension {}, writer expects {dim}",
                    visit.point.len()
                )));
            }
            let mut row = vec![format_float(step.time)];
            row.extend(visit.point.iter().map(|&c| format_float(c)));
            row.push(format_float(visit.value));
            row.push(format_float(visit.noise_sd));
            row.push(if visit.is_new { "true".into() } else { "false".into() });
            writer.write_record(row).map_err(csv_error)?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Reads an adaptive scenario, grouping rows that share a time into one
/// step. Times must be non-decreasing down the file.
pub fn read_scenario(path: &Path) -> Result<Vec<ScenarioStep>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let headers = reader.headers().map_err(csv_error)?.clone();
    let fields: Vec<&str> = headers.iter().collect();
    if fields.last() != Some(&"is_new") {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "expected header t,x1[,x2...],y,sigma,is_new, got {}",
                fields.join(",")
            ),
        });
    }
    let trimmed = csv::StringRecord::from(fields[..fields.len() - 1].to_vec());
    let dim = validate_dataset_header(&trimmed)?;
    let mut steps: Vec<ScenarioStep> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        if row.len() != dim + 4 {
            return Err(Error::Parse {
                line,
                message: format!("expected {} fields, got {}", dim + 4, row.len()),
            });
        }
        let time = parse_float(&row[0], line, "t")?;
        let mut point = Vec::with_capacity(dim);
        for d in 0..dim {
            point.push(parse_float(&row[1 + d], line, &format!("x{}", d + 1))?);
        }
        let value = parse_float(&row[dim + 1], line, "y")?;
        let noise_sd = parse_float(&row[dim + 2], line, "sigma")?;
        let is_new = match row[dim + 3].trim() {
            "true" | "1" => true,
            "false" | "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    message: format!("column is_new: expected true/false, got {other:?}"),
                })
            }
        };
        let visit = VisitRecord { point, value, noise_sd, is_new };
        match steps.last_mut() {
            Some(step) if step.time == time => step.visits.push(visit),
            Some(step) if time < step.time => {
                return Err(Error::Parse {
                    line,
                    message: format!(
                        "scenario times must be non-decreasing, got {time} after {}",
                        step.time
                    ),
                });
            }
            _ => steps.push(ScenarioStep { time, visits: vec![visit] }),
        }
    }
    Ok(steps)
}

/// One JSON-lines record of a filter trajectory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub is_update: bool,
    /// Field estimate at the model locations.
    pub f: Vec<f64>,
    /// Marginal posterior variances at the model locations.
    pub var: Vec<f64>,
    /// Negative log marginal likelihood accumulated so far.
    pub ell: f64,
    /// Estimates at configured query points, when any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_var: Option<Vec<f64>>,
}

impl TrajectoryRow {
    pub fn from_point(point: &TrajectoryPoint) -> Self {
        Self {
            t: point.time,
            is_update: point.is_update,
            f: point.mean.iter().copied().collect(),
            var: point.cov.diagonal().iter().copied().collect(),
            ell: point.nll,
            query_f: None,
            query_var: None,
        }
    }
}

/// One JSON-lines record of an adaptive trajectory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct AdaptiveRow {
    pub t: f64,
    /// Location set after the step.
    pub locations: Vec<Vec<f64>>,
    pub f: Vec<f64>,
    pub var: Vec<f64>,
    pub ell: f64,
    pub expanded: usize,
    pub dropped: usize,
    pub skipped_new: usize,
    /// Eigenvalues floored during state reconstruction (regularization
    /// diagnostics; zero on clean steps).
    pub floored: usize,
}

impl AdaptiveRow {
    pub fn from_point(point: &AdaptiveTrajectoryPoint) -> Self {
        Self {
            t: point.time,
            locations: point.locations.clone(),
            f: point.mean.iter().copied().collect(),
            var: point.cov.diagonal().iter().copied().collect(),
            ell: point.nll,
            expanded: point.report.expanded,
            dropped: point.report.dropped,
            skipped_new: point.skipped_new,
            floored: point.report.floored_eigenvalues,
        }
    }
}

/// Writes serializable rows as JSON lines.
pub fn write_json_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    for row in rows {
        let line = serde_json::to_string(row)
            .map_err(|e| Error::InvalidInput(format!("serialization failed: {e}")))?;
        writeln!(writer, "{line}")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads JSON lines into deserializable rows, reporting the failing line on
/// parse errors. Blank lines are skipped.
pub fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: index + 1, message: e.to_string() })?;
        rows.push(row);
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    if let csv::ErrorKind::Io(io) = e.into_kind() {
        Error::Io(io)
    } else {
        Error::Parse { line, message: "malformed CSV".into() }
    }
}
