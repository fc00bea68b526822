//! CSV ingestion and report emission.
//!
//! Every writer formats floats with Rust's shortest round-trip
//! representation, so identical inputs give identical bytes.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DteError, Result};
use crate::model::{CdfEstimate, EffectBand, ExperimentData, LocationGrid};
use crate::simulation::SimulationReport;

/// Which columns of the input file hold what. An empty covariate list means
/// "every column that is neither the arm nor the outcome".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub covariates: Vec<String>,
    pub arm: String,
    pub outcome: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            covariates: Vec::new(),
            arm: "arm".into(),
            outcome: "outcome".into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub data: ExperimentData,
    /// Original label of arm `w` at index `w - 1`.
    pub arm_labels: Vec<String>,
    pub covariate_names: Vec<String>,
}

/// Sorts arm labels numerically when all of them parse as numbers, and
/// lexicographically otherwise. Position in the sorted list plus one is the
/// arm id.
pub fn arm_label_order(labels: &BTreeSet<String>) -> Vec<String> {
    let mut out: Vec<String> = labels.iter().cloned().collect();
    let numeric: Option<Vec<f64>> = out.iter().map(|s| s.trim().parse::<f64>().ok()).collect();
    if let Some(values) = numeric {
        let mut paired: Vec<(f64, String)> = values.into_iter().zip(out).collect();
        paired.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
        out = paired.into_iter().map(|(_, s)| s).collect();
    }
    out
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = value.trim().parse().map_err(|e: std::num::ParseFloatError| {
        DteError::ParseError {
            row,
            column: column.to_string(),
            message: format!("{value:?}: {e}"),
        }
    })?;
    if !v.is_finite() {
        return Err(DteError::NonFiniteValue {
            field: if column.is_empty() { "value" } else { "csv" },
            row,
        });
    }
    Ok(v)
}

/// Reads a header-first CSV. Rows in errors are 1-based data rows (the
/// header is not counted).
pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<LoadedCsv> {
    let file = File::open(path).map_err(|e| DteError::Io(format!("{}: {e}", path.display())))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: &CsvSchema) -> Result<LoadedCsv> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DteError::MissingColumn(name.to_string()))
    };
    let arm_idx = find(&schema.arm)?;
    let outcome_idx = find(&schema.outcome)?;
    let covariate_names: Vec<String> = if schema.covariates.is_empty() {
        headers
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != arm_idx && *i != outcome_idx)
            .map(|(_, h)| h.clone())
            .collect()
    } else {
        schema.covariates.clone()
    };
    if covariate_names.is_empty() {
        return Err(DteError::MissingColumn("<covariates>".into()));
    }
    let cov_idx: Vec<usize> = covariate_names
        .iter()
        .map(|c| find(c))
        .collect::<Result<_>>()?;

    let mut raw_arms = Vec::new();
    let mut outcomes = Vec::new();
    let mut cells = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| DteError::ParseError {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        let get = |idx: usize, name: &str| {
            record.get(idx).ok_or_else(|| DteError::ParseError {
                row,
                column: name.to_string(),
                message: "missing field".into(),
            })
        };
        let arm = get(arm_idx, &schema.arm)?.to_string();
        if arm.is_empty() {
            return Err(DteError::ParseError {
                row,
                column: schema.arm.clone(),
                message: "empty arm label".into(),
            });
        }
        raw_arms.push(arm);
        let y = parse_cell(get(outcome_idx, &schema.outcome)?, row, &schema.outcome).map_err(
            |e| match e {
                DteError::NonFiniteValue { row, .. } => DteError::NonFiniteValue {
                    field: "outcome",
                    row,
                },
                other => other,
            },
        )?;
        outcomes.push(y);
        for (&idx, name) in cov_idx.iter().zip(&covariate_names) {
            let v = parse_cell(get(idx, name)?, row, name).map_err(|e| match e {
                DteError::NonFiniteValue { row, .. } => DteError::NonFiniteValue {
                    field: "covariate",
                    row,
                },
                other => other,
            })?;
            cells.push(v);
        }
    }
    let n = outcomes.len();
    let labels: BTreeSet<String> = raw_arms.iter().cloned().collect();
    let arm_labels = arm_label_order(&labels);
    let arms: Vec<usize> = raw_arms
        .iter()
        .map(|a| arm_labels.iter().position(|l| l == a).expect("label present") + 1)
        .collect();
    let covariates = Array2::from_shape_vec((n, covariate_names.len()), cells)
        .map_err(|e| DteError::ShapeMismatch(e.to_string()))?;
    let data = ExperimentData::new(covariates, arms, outcomes, arm_labels.len().max(1))?;
    Ok(LoadedCsv {
        data,
        arm_labels,
        covariate_names,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = File::create(path).map_err(|e| DteError::Io(format!("{}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

/// `location,point,se,ci_lo,ci_hi`, one row per location.
pub fn write_band_csv(band: &EffectBand, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "location,point,se,ci_lo,ci_hi")?;
    for j in 0..band.len() {
        writeln!(
            out,
            "{},{},{},{},{}",
            band.locations[j], band.point[j], band.se[j], band.ci_lo[j], band.ci_hi[j]
        )?;
    }
    out.flush()?;
    Ok(())
}

/// `location,method,bias,mse,reduction_pct`, one row per location and
/// method.
pub fn write_study_csv(report: &SimulationReport, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "location,method,bias,mse,reduction_pct")?;
    let summary = report.summarize();
    for (j, loc) in report.locations().iter().enumerate() {
        for s in &summary {
            writeln!(
                out,
                "{},{},{},{},{}",
                loc, s.method, s.bias[j], s.mse[j], s.reduction_pct[j]
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `location,<arm label>...` with one CDF column per arm.
pub fn write_cdf_csv(
    theta: &CdfEstimate,
    grid: &LocationGrid,
    arm_labels: &[String],
    path: &Path,
) -> Result<()> {
    let mut out = create(path)?;
    write!(out, "location")?;
    for label in arm_labels {
        write!(out, ",{label}")?;
    }
    writeln!(out)?;
    for (j, loc) in grid.locations().iter().enumerate() {
        write!(out, "{loc}")?;
        for w in 0..theta.n_arms() {
            write!(out, ",{}", theta.values[[w, j]])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Two-column `location,<name>` table.
pub fn write_series_csv(locations: &[f64], values: &[f64], name: &str, path: &Path) -> Result<()> {
    if locations.len() != values.len() {
        return Err(DteError::ShapeMismatch("series length".into()));
    }
    let mut out = create(path)?;
    writeln!(out, "location,{name}")?;
    for (l, v) in locations.iter().zip(values) {
        writeln!(out, "{l},{v}")?;
    }
    out.flush()?;
    Ok(())
}

/// Arbitrary rows under a fixed header.
pub fn write_table_csv(header: &[&str], rows: &[Vec<String>], path: &Path) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}
