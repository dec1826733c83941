//! Deterministic simulation of a Function-as-a-Service platform running an
//! application whose tasks are fused into deployment functions, plus the
//! feedback loop that re-partitions tasks to cut latency and billed cost.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! anything touching the file system live in the `fusionsim` crate.
//!
//! ```
//! use fusionsim_core::model::FusionSetup;
//! use fusionsim_core::workloads::{builtin_app, Workload};
//! use fusionsim_core::simkernel::{run_simulation, PlatformConfig};
//!
//! let app = builtin_app("tree").unwrap();
//! let setup: FusionSetup = "(A,B,D,E)-(C)-(F)-(G)".parse().unwrap();
//! let trace = run_simulation(&app, &setup, &Workload::steady(1.0, 10, 7), &PlatformConfig::default()).unwrap();
//! assert_eq!(trace.root_records().count(), 10);
//! ```

#![no_std]
#![forbid(unsafe_code)]
#![warn(rust_2018_idioms, missing_debug_implementations)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod callgraph;
pub mod controller;
pub mod model;
pub mod optimizer;
pub mod simkernel;
pub mod time;
pub mod trace;
pub mod workloads;

pub use model::{CallMode, FusionGroup, FusionSetup, SetupMutation, TaskId};
pub use time::SimTime;
