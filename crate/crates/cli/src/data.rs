//! Comma-separated input with a header row; an empty cell is missing.

use std::path::Path;

use csv::StringRecord;
use ndarray::{Array1, Array2};

use crate::error::{CliError, Result};

pub struct Table {
    pub headers: StringRecord,
    pub rows: Vec<StringRecord>,
}

fn line_of(row: &StringRecord) -> u64 {
    row.position().map_or(0, |p| p.line())
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(CliError::io(path))?;
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
        let headers = reader.headers()?.clone();
        if headers.is_empty() || headers.iter().all(str::is_empty) {
            return Err(CliError::MalformedCsv { line: 1, message: "missing header row".into() });
        }
        for (i, name) in headers.iter().enumerate() {
            if headers.iter().take(i).any(|other| other == name) {
                return Err(CliError::MalformedCsv { line: 1, message: format!("duplicate column '{name}'") });
            }
        }
        let rows = reader.records().collect::<std::result::Result<Vec<_>, _>>()?;
        if rows.len() < 2 {
            return Err(CliError::MalformedCsv {
                line: 1,
                message: format!("need at least 2 data rows, found {}", rows.len()),
            });
        }
        Ok(Self { headers, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("column '{name}' not found in header")))
    }

    /// Indices of the covariate columns: `names` if given, otherwise every
    /// column except `exclude`.
    pub fn covariate_columns(&self, names: Option<&[String]>, exclude: usize) -> Result<Vec<usize>> {
        let cols = match names {
            Some(names) => {
                let cols = names.iter().map(|n| self.column(n)).collect::<Result<Vec<_>>>()?;
                if cols.contains(&exclude) {
                    return Err(CliError::Usage(format!("column '{}' cannot be a covariate", &self.headers[exclude])));
                }
                cols
            }
            None => (0..self.headers.len()).filter(|&c| c != exclude).collect(),
        };
        if cols.is_empty() {
            return Err(CliError::Usage("no covariate columns".into()));
        }
        Ok(cols)
    }

    pub fn covariates(&self, cols: &[usize]) -> Result<Array2<f64>> {
        let mut x = Array2::zeros((self.rows.len(), cols.len()));
        for (i, row) in self.rows.iter().enumerate() {
            for (j, &c) in cols.iter().enumerate() {
                let cell = row[c].trim();
                if cell.is_empty() {
                    return Err(CliError::MissingInCovariates {
                        line: line_of(row),
                        column: self.headers[c].to_string(),
                    });
                }
                x[[i, j]] = parse_number(cell, row, &self.headers[c])?;
            }
        }
        Ok(x)
    }

    /// Response values with NaN where the cell is empty, plus the indicator.
    pub fn response(&self, col: usize) -> Result<(Array1<f64>, Vec<bool>)> {
        let mut y = Array1::from_elem(self.rows.len(), f64::NAN);
        let mut delta = vec![false; self.rows.len()];
        for (i, row) in self.rows.iter().enumerate() {
            let cell = row[col].trim();
            if !cell.is_empty() {
                y[i] = parse_number(cell, row, &self.headers[col])?;
                delta[i] = true;
            }
        }
        Ok((y, delta))
    }

    pub fn indicator(&self, col: usize) -> Result<Vec<bool>> {
        self.rows
            .iter()
            .map(|row| match row[col].trim() {
                "1" | "true" | "TRUE" | "True" => Ok(true),
                "0" | "false" | "FALSE" | "False" => Ok(false),
                other => Err(CliError::MalformedCsv {
                    line: line_of(row),
                    message: format!("column '{}' must be 0 or 1, found '{other}'", &self.headers[col]),
                }),
            })
            .collect()
    }

    /// Original rows with missing responses filled from `m_hat` and an
    /// `imputed` 0/1 column appended.
    pub fn write_imputed(&self, path: &Path, response: usize, delta: &[bool], m_hat: &Array1<f64>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.headers.clone();
        header.push_field("imputed");
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let filled = m_hat[i].to_string();
            let fields =
                row.iter().enumerate().map(|(c, v)| if c == response && !delta[i] { filled.as_str() } else { v });
            let flag = if delta[i] { "0" } else { "1" };
            w.write_record(fields.chain(std::iter::once(flag)))?;
        }
        w.flush().map_err(CliError::io(path))
    }
}

fn parse_number(cell: &str, row: &StringRecord, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::MalformedCsv {
            line: line_of(row),
            message: format!("column '{column}': '{cell}' is not a finite number"),
        }),
    }
}
