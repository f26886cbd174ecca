//! Command-line runner: fit a copula mixture to a configured target, sample
//! from checkpoints and score held-out data.

pub mod commands;
pub mod config;
pub mod data;
pub mod error;
