//! Experiment drivers and data export for the `racetraj` command-line tool.

pub mod experiments;
pub mod output;
