//! Implementation of the `mdgc` command-line tool: subcommand logic,
//! run-configuration parsing, the binary checkpoint format, and atomic file
//! writes. The binary itself is a thin argument-parsing shell over
//! [`commands`].

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod fsio;
