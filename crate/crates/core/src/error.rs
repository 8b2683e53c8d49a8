// SPDX-License-Identifier: MIT OR Apache-2.0

use std::fmt;

use thiserror::Error;

/// Pipeline stage that produced an error.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Partition,
    Solver,
    Screening,
    Clustering,
    Localization,
    Thresholding,
    Precision,
    BlockSelection,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Partition => "partition",
            Stage::Solver => "solver",
            Stage::Screening => "screening",
            Stage::Clustering => "clustering",
            Stage::Localization => "localization",
            Stage::Thresholding => "thresholding",
            Stage::Precision => "precision",
            Stage::BlockSelection => "block-selection",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum TbflError {
    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid block size {block_size} for n = {n} (need 2 <= b_n <= n/2)")]
    InvalidBlockSize { n: usize, block_size: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("zero residual variance for response {response} in segment {segment}")]
    DegenerateResiduals { segment: usize, response: usize },

    #[error("invalid scenario: {0}")]
    InvalidSpec(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<TbflError>,
    },

    #[error("every candidate block size failed: {}", .0.join("; "))]
    Pipeline(Vec<String>),
}

impl TbflError {
    pub(crate) fn at(self, stage: Stage) -> Self {
        match self {
            TbflError::Stage { .. } => self,
            other => TbflError::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Innermost error, skipping stage tags.
    pub fn root(&self) -> &TbflError {
        match self {
            TbflError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, TbflError>;
