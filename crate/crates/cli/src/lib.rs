//! Experiment surface of streamflow: configuration, benchmark runners and
//! the commands behind the `streamflow` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiments;
