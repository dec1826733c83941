//! File formats and the command line for the fusionsim simulator.

#![forbid(unsafe_code)]

pub mod appfile;
pub mod cli;
pub mod error;
pub mod export;
pub mod tracefile;
