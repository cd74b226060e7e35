//! Harness library behind the `bops` binary: experiment configuration,
//! orchestration and on-disk formats.

pub mod config;
pub mod experiment;
pub mod formats;
