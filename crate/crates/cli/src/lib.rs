// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line front end: CSV input, JSON reports and the `detect`,
//! `select-block-size` and `simulate` subcommands.

pub mod args;
pub mod commands;
pub mod error;
pub mod io;
pub mod report;

pub use args::Cli;
pub use commands::run;
pub use error::CliError;
