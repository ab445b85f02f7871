//! Library surface of the harness so integration tests can drive the
//! commands in-process; the `tgtlab` binary is a thin wrapper.

pub mod commands;
pub mod config;
