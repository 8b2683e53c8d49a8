// SPDX-License-Identifier: MIT OR Apache-2.0

//! CSV input.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use tbfl::Dataset;

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelArg {
    /// Multivariate mean shift: every column is a response.
    Mean,
    /// Linear regression: predictors and responses.
    Regression,
    /// Gaussian graphical model: every column is a node.
    Ggm,
    /// Vector autoregression of the given lag on the columns.
    Lagged,
}

/// Numeric CSV with a header row.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    fn matrix(&self, columns: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), columns.len(), |r, c| self.rows[r][columns[c]])
    }
}

pub fn read_table(path: &Path) -> Result<Table, CliError> {
    if !path.exists() {
        return Err(CliError::InputNotFound(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: "missing header row".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| csv_error(path, e))?;
        if record.len() != headers.len() {
            return Err(CliError::Parse {
                path: path.to_path_buf(),
                row,
                column: record.len().min(headers.len()) + 1,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut values = Vec::with_capacity(record.len());
        for (j, cell) in record.iter().enumerate() {
            let parse_err = |message: String| CliError::Parse {
                path: path.to_path_buf(),
                row,
                column: j + 1,
                message,
            };
            let v: f64 = cell.parse().map_err(|_| parse_err(format!("not a number: {cell:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(format!("non-finite value {cell:?}")));
            }
            values.push(v);
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::Format {
            path: path.to_path_buf(),
            message: "no data rows".into(),
        });
    }
    Ok(Table { headers, rows })
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let csv::ErrorKind::Io(io) = e.into_kind() else { unreachable!() };
            CliError::Io {
                path: path.to_path_buf(),
                source: io,
            }
        }
        _ => CliError::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        },
    }
}

fn single<'a>(paths: &'a [PathBuf], model: ModelArg) -> Result<&'a Path, CliError> {
    match paths {
        [p] => Ok(p),
        _ => Err(CliError::Usage(format!(
            "model {model:?} takes exactly one input file, got {}",
            paths.len()
        ))),
    }
}

/// Load the input files and wrap them with the adapter for `model`.
///
/// Regression takes either two files (predictors, then responses) or one file
/// whose columns are all prefixed `x_` or `y_`.
pub fn read_dataset(paths: &[PathBuf], model: ModelArg, lag: usize) -> Result<Dataset, CliError> {
    let all = |t: &Table| t.matrix(&(0..t.headers.len()).collect::<Vec<_>>());
    let dataset = match model {
        ModelArg::Mean => Dataset::mean_shift(all(&read_table(single(paths, model)?)?))?,
        ModelArg::Ggm => Dataset::graphical(all(&read_table(single(paths, model)?)?))?,
        ModelArg::Lagged => Dataset::lagged(all(&read_table(single(paths, model)?)?), lag)?,
        ModelArg::Regression => match paths {
            [xp, yp] => {
                let (x, y) = (read_table(xp)?, read_table(yp)?);
                if x.rows.len() != y.rows.len() {
                    return Err(CliError::Format {
                        path: yp.clone(),
                        message: format!(
                            "response file has {} rows but the predictor file has {}",
                            y.rows.len(),
                            x.rows.len()
                        ),
                    });
                }
                Dataset::regression(all(&x), all(&y))?
            }
            [p] => {
                let t = read_table(p)?;
                let mut xs = Vec::new();
                let mut ys = Vec::new();
                for (j, h) in t.headers.iter().enumerate() {
                    if h.starts_with("x_") {
                        xs.push(j);
                    } else if h.starts_with("y_") {
                        ys.push(j);
                    } else {
                        return Err(CliError::Format {
                            path: p.clone(),
                            message: format!("column {} ({h:?}) has neither an x_ nor a y_ prefix", j + 1),
                        });
                    }
                }
                if xs.is_empty() || ys.is_empty() {
                    return Err(CliError::Format {
                        path: p.clone(),
                        message: "prefix mode needs at least one x_ and one y_ column".into(),
                    });
                }
                Dataset::regression(t.matrix(&xs), t.matrix(&ys))?
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "regression takes one or two input files, got {}",
                    paths.len()
                )))
            }
        },
    };
    Ok(dataset)
}
