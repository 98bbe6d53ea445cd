//! Reproducible experiments on top of the `fastr` library.

pub mod commands;
pub mod config;
pub mod output;
