// SPDX-License-Identifier: MIT OR Apache-2.0

//! Threshold block fused lasso for multiple change-point detection in
//! mean-shift, regression, VAR and Gaussian graphical models.

pub mod block_select;
pub mod blocks;
pub mod error;
pub mod evalsim;
pub mod kkt;
pub mod localization;
pub mod model;
pub mod pipeline;
pub mod prox;
pub mod screening;
pub mod seed;
pub mod solver;

pub use blocks::{BlockPartition, ThetaStack};
pub use error::{Result, Stage, TbflError};
pub use model::{Dataset, ModelKind, PrecisionEstimate, SegmentCoefficients};
