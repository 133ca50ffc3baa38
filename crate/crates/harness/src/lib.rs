//! Experiment harness: config files, the experiment commands and their
//! CSV/manifest outputs.

pub mod config;
pub mod experiments;
pub mod output;
