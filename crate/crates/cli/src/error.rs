// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::PathBuf;

use serde_json::json;
use tbfl::TbflError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input not found: {}", .0.display())]
    InputNotFound(PathBuf),

    /// `row` counts data rows from 1 (header excluded); `column` counts from 1.
    #[error("{}: row {row}, column {column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Tbfl(#[from] TbflError),
}

impl CliError {
    /// 2 for usage and validation problems, 3 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 3,
            CliError::Tbfl(e) => match e.root() {
                TbflError::InvalidData(_)
                | TbflError::InvalidBlockSize { .. }
                | TbflError::InvalidConfig(_)
                | TbflError::InvalidSpec(_) => 2,
                _ => 3,
            },
            _ => 2,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::InputNotFound(_) => "input_not_found",
            CliError::Parse { .. } => "parse",
            CliError::Format { .. } => "format",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Tbfl(e) => match e.root() {
                TbflError::InvalidData(_) => "invalid_data",
                TbflError::InvalidBlockSize { .. } => "invalid_block_size",
                TbflError::InvalidConfig(_) => "invalid_config",
                TbflError::InvalidSpec(_) => "invalid_spec",
                TbflError::DegenerateResiduals { .. } => "degenerate_residuals",
                _ => "pipeline",
            },
        }
    }

    /// Machine-readable error object written to stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut body = json!({
            "kind": self.kind(),
            "message": self.to_string(),
            "exit_code": self.exit_code(),
        });
        match self {
            CliError::Parse { path, row, column, .. } => {
                body["path"] = json!(path);
                body["row"] = json!(row);
                body["column"] = json!(column);
            }
            CliError::InputNotFound(path) | CliError::Format { path, .. } | CliError::Io { path, .. } => {
                body["path"] = json!(path);
            }
            CliError::Tbfl(TbflError::Stage { stage, .. }) => body["stage"] = json!(stage.to_string()),
            _ => {}
        }
        json!({ "error": body })
    }
}
