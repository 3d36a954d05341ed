//! Filesystem-facing layer around `creativity-core`: configuration,
//! corpus manifests, checkpoints, CSV reports, SVG plots, and the
//! subcommand implementations behind the `deepcreativity` binary.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod plot;
pub mod report;

/// Process exit codes, fixed for scripting.
pub mod exit {
    pub const OK: i32 = 0;
    /// Bad input: config, manifest, corpus, or argument problems.
    pub const INPUT: i32 = 2;
    /// Numerical failure: non-finite losses or gradient breakdowns.
    pub const NUMERICAL: i32 = 3;
    /// Incompatible artifacts, for example checkpoints built on a
    /// different vocabulary.
    pub const INCOMPATIBLE: i32 = 4;
}
