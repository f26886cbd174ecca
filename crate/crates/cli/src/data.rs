//! CSV datasets.

use std::path::Path;

use cmgva::targets::{interaction_count, interaction_expand};

use crate::config::{DataSpec, TargetSpec};
use crate::error::{CliError, CliResult};

/// A numeric table with named columns, stored row-major.
#[derive(Clone, Debug)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: usize,
    pub values: Vec<f64>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let headers: Vec<String> = rdr
            .headers()
            .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            // header is line 1
            let line = i + 2;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    CliError::input(format!(
                        "{}:{line}: column '{}' has non-numeric value '{field}'",
                        path.display(),
                        headers[j]
                    ))
                })?;
                values.push(v);
            }
            rows += 1;
        }
        Ok(Self {
            headers,
            rows,
            values,
        })
    }

    pub fn column_index(&self, name: &str, path: &Path) -> CliResult<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::input(format!(
                "{}: no column named '{name}' (have: {})",
                path.display(),
                self.headers.join(", ")
            ))
        })
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        let c = self.headers.len();
        (0..self.rows).map(|i| self.values[i * c + j]).collect()
    }
}

/// Response vector and row-major design matrix.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub cols: usize,
}

/// Reads the columns named in `spec`. With `intercept`, the design gets a
/// leading column of ones, or the full interaction expansion when requested.
pub fn load(spec: &DataSpec, intercept: bool, path: &Path) -> CliResult<Dataset> {
    let t = Table::read(path)?;
    if t.rows == 0 {
        return Err(CliError::input(format!("{}: no data rows", path.display())));
    }
    let yj = t.column_index(&spec.response, path)?;
    let cov: Vec<usize> = match &spec.covariates {
        Some(names) => names
            .iter()
            .map(|n| t.column_index(n, path))
            .collect::<CliResult<_>>()?,
        None => (0..t.headers.len()).filter(|&j| j != yj).collect(),
    };
    if cov.is_empty() {
        return Err(CliError::input(format!("{}: no covariate columns", path.display())));
    }
    let c = t.headers.len();
    let p = cov.len();
    let mut raw = Vec::with_capacity(t.rows * p);
    for i in 0..t.rows {
        raw.extend(cov.iter().map(|&j| t.values[i * c + j]));
    }
    let y = t.column(yj);
    let (x, cols) = if !intercept {
        (raw, p)
    } else if spec.interactions {
        (interaction_expand(&raw, p)?, interaction_count(p))
    } else {
        let mut x = Vec::with_capacity(t.rows * (p + 1));
        for row in raw.chunks(p) {
            x.push(1.0);
            x.extend_from_slice(row);
        }
        (x, p + 1)
    };
    Ok(Dataset { y, x, cols })
}

/// Loads the training data named by a regression or network target.
pub fn load_for(target: &TargetSpec) -> CliResult<Option<Dataset>> {
    match target {
        TargetSpec::Logistic { data } | TargetSpec::Linear { data } => load(data, true, &data.path).map(Some),
        TargetSpec::Dfnn { data, .. } => load(data, false, &data.path).map(Some),
        _ => Ok(None),
    }
}
