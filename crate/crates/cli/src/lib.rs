//! Command-line tools and the trial-conduct HTTP service.

pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod service;
pub mod tally;
