//! CSV ingestion: header-based column mapping, strict numeric parsing, and
//! row-level handling of missing values.

use std::path::Path;

use anyhow::{bail, Context, Result};
use bentrank_core::Dataset;

/// Which columns to read and whether to prepend an intercept column.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    pub response: String,
    pub threshold: String,
    pub covariates: Vec<String>,
    pub add_intercept: bool,
}

/// Ingestion result: the validated dataset, the linear-covariate names in
/// column order, and the 1-based file line numbers of rows dropped for
/// missing values.
#[derive(Debug)]
pub struct Ingested {
    pub dataset: Dataset,
    pub covariate_names: Vec<String>,
    pub dropped_lines: Vec<usize>,
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan")
}

/// Parse a mapped CSV file into a [`Dataset`].
///
/// Rows with a missing value (empty cell, `NA`, `NaN`, or a non-finite
/// number) in any mapped column are dropped and reported by line number;
/// any other non-numeric cell is a hard error naming the row and column.
pub fn ingest_csv(path: &Path, mapping: &ColumnMapping) -> Result<Ingested> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("cannot open {}", path.display()))?;

    let headers = reader
        .headers()
        .with_context(|| format!("cannot read header row of {}", path.display()))?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("column '{name}' not found in {}", path.display()))
    };

    let response_idx = find(&mapping.response)?;
    let threshold_idx = find(&mapping.threshold)?;
    let covariate_idx: Vec<usize> = mapping
        .covariates
        .iter()
        .map(|name| find(name))
        .collect::<Result<_>>()?;

    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut covariate_cols: Vec<Vec<f64>> = vec![Vec::new(); covariate_idx.len()];
    let mut dropped_lines = Vec::new();

    for (record_idx, record) in reader.records().enumerate() {
        // header occupies line 1
        let line = record_idx + 2;
        let record = record.with_context(|| format!("malformed CSV record at line {line}"))?;

        let mut cells = Vec::with_capacity(2 + covariate_idx.len());
        for (&idx, name) in [response_idx, threshold_idx]
            .iter()
            .zip([&mapping.response, &mapping.threshold])
        {
            cells.push((idx, name.as_str()));
        }
        for (&idx, name) in covariate_idx.iter().zip(&mapping.covariates) {
            cells.push((idx, name.as_str()));
        }

        let mut values = Vec::with_capacity(cells.len());
        let mut missing = false;
        for (idx, name) in cells {
            let raw = record.get(idx).unwrap_or("");
            if is_missing(raw) {
                missing = true;
                break;
            }
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => values.push(v),
                Ok(_) => {
                    missing = true;
                    break;
                }
                Err(_) => {
                    bail!(
                        "line {line}, column '{name}': value '{raw}' is not numeric"
                    );
                }
            }
        }
        if missing {
            dropped_lines.push(line);
            continue;
        }

        y.push(values[0]);
        z.push(values[1]);
        for (col, &v) in covariate_cols.iter_mut().zip(&values[2..]) {
            col.push(v);
        }
    }

    if y.is_empty() {
        bail!("{}: no usable data rows", path.display());
    }

    let mut x_cols = Vec::new();
    let mut covariate_names = Vec::new();
    if mapping.add_intercept {
        x_cols.push(vec![1.0; y.len()]);
        covariate_names.push("intercept".to_string());
    }
    for (col, name) in covariate_cols.into_iter().zip(&mapping.covariates) {
        x_cols.push(col);
        covariate_names.push(name.clone());
    }

    let dataset = Dataset::from_columns(y, &x_cols, z)
        .with_context(|| format!("{} failed validation", path.display()))?;

    Ok(Ingested {
        dataset,
        covariate_names,
        dropped_lines,
    })
}
