//! Std companion to `tea-core`: CSV ingestion, configuration files, the
//! binary container format, the training harness, and the `tea` binary's
//! command implementations.

pub mod commands;
pub mod config;
pub mod container;
pub mod data;
pub mod error;
pub mod synth;
pub mod train;
