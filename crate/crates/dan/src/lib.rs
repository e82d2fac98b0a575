//! Std companion to `dan-core`: file formats, checkpoints, run configs and the CLI.

pub mod error;
pub mod formats;
pub mod checkpoint;
pub mod config;
pub mod pipeline;
pub mod cli;
