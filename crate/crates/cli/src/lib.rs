//! Host-side companion to `boltzgen-core`: file formats, run configuration,
//! a scoped-thread executor, and the implementations behind the `boltzgen`
//! binary's subcommands.
//!
//! Layout:
//! - [`config`] — TOML run configuration with flag overrides.
//! - [`jsonl`] — JSON-Lines conformer datasets.
//! - [`sdf`] — V2000 molfile / SD-file subset.
//! - [`checkpoint`] — binary checkpoint files (JSON header + tensor blobs).
//! - [`metrics`] — training metrics JSON.
//! - [`exec`] — thread-pool executor satisfying the core batching contract.
//! - [`commands`] — the subcommand implementations.
//! - [`error`] — exit-code classification.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod jsonl;
pub mod metrics;
pub mod sdf;

pub use error::{CliError, Result};
