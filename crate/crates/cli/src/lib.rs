//! Configuration, execution and output of MLMC convergence studies.

pub mod args;
pub mod config;
pub mod experiment;
pub mod output;
pub mod plot;
pub mod presets;
