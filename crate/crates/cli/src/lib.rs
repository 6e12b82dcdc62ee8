//! Library side of the `memsim` command: artifact handling, experiment
//! execution and SVG charts.

pub mod artifacts;
pub mod plot;
pub mod runner;
