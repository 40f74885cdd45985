//! Verification harness and CLI companion to the `sweepsim-core`
//! simulation engine: experiment configuration, statistical tests,
//! file formats, parallel replicate scheduling, and the verification
//! suites behind the `sweepsim` binary.

pub mod cli;
pub mod config;
pub mod io;
pub mod runner;
pub mod stats;
pub mod verify;
