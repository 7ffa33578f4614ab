//! File formats, logs and the command-line front end for `metachem-core`.

pub mod cli;
pub mod config;
pub mod builtin;
pub mod graph_file;
pub mod records;

pub use metachem_core as core;
