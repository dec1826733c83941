//! Discrete-event simulation of a FaaS platform executing an application
//! under a fusion setup.
//!
//! One function is deployed per fusion group. Each instance serves one
//! request at a time. A request to a function runs its entry task and, in
//! FIFO order, every task called locally from it; calls to tasks in other
//! groups go through the platform as new requests. Remote synchronous calls
//! block the caller (both sides are billed), remote asynchronous calls only
//! cost the dispatch. Cold-start initialisation is not billed; the fusion
//! handler's own overhead is.

mod engine;

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CallMode, FusionSetup, SetupError, TaskId};
use crate::time::SimTime;
use crate::trace::TraceLog;
use crate::workloads::{ApplicationSpec, DurationDist, Workload, WorkloadError};

pub use engine::Simulator;

/// How the memory demand of a fused function is derived from its tasks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryModel {
    /// The largest task dominates.
    #[default]
    Max,
    /// Every resident task holds its memory for the whole execution.
    Sum,
}

impl MemoryModel {
    pub fn combine(self, memories: impl IntoIterator<Item = u32>) -> u32 {
        match self {
            MemoryModel::Max => memories.into_iter().max().unwrap_or(0),
            MemoryModel::Sum => memories.into_iter().sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatformConfig {
    pub cold_start_ms: DurationDist,
    pub handler_overhead_warm_ms: f64,
    pub handler_overhead_cold_ms: f64,
    /// Paid once per instance, on its first remote call (endpoint lookup).
    pub first_remote_call_penalty_ms: f64,
    pub remote_call_overhead_ms: f64,
    pub async_dispatch_overhead_ms: f64,
    pub instance_idle_timeout_ms: f64,
    pub billing_granularity_ms: u64,
    pub price_per_gb_second: f64,
    pub price_per_request: f64,
    /// Provisioned memory of every function; what billing uses.
    pub function_memory_mb: u32,
    pub memory_model: MemoryModel,
    pub limit_max_duration_ms: Option<f64>,
    pub limit_max_memory_mb: Option<u32>,
}

impl Default for PlatformConfig {
    fn default() -> Self {
        PlatformConfig {
            cold_start_ms: DurationDist::Constant(1000.0),
            handler_overhead_warm_ms: 1.3,
            handler_overhead_cold_ms: 36.6,
            first_remote_call_penalty_ms: 1100.0,
            remote_call_overhead_ms: 50.0,
            async_dispatch_overhead_ms: 1.0,
            instance_idle_timeout_ms: 600_000.0,
            billing_granularity_ms: 1,
            price_per_gb_second: 0.000_016_666_7,
            price_per_request: 0.000_000_2,
            function_memory_mb: 128,
            memory_model: MemoryModel::Max,
            limit_max_duration_ms: None,
            limit_max_memory_mb: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SimError {
    #[error("invalid platform config: {0}")]
    Platform(&'static str),
    #[error("setup does not match the application: {0}")]
    Setup(#[from] SetupError),
    #[error("invalid workload: {0}")]
    Workload(#[from] WorkloadError),
}

impl PlatformConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let non_negative = |v: f64| v.is_finite() && v >= 0.0;
        let check = |ok: bool, what: &'static str| if ok { Ok(()) } else { Err(SimError::Platform(what)) };
        check(
            match self.cold_start_ms {
                DurationDist::Constant(ms) => non_negative(ms),
                DurationDist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
            },
            "cold_start_ms must be >= 0",
        )?;
        check(non_negative(self.handler_overhead_warm_ms), "handler_overhead_warm_ms must be >= 0")?;
        check(non_negative(self.handler_overhead_cold_ms), "handler_overhead_cold_ms must be >= 0")?;
        check(non_negative(self.first_remote_call_penalty_ms), "first_remote_call_penalty_ms must be >= 0")?;
        check(non_negative(self.remote_call_overhead_ms), "remote_call_overhead_ms must be >= 0")?;
        check(non_negative(self.async_dispatch_overhead_ms), "async_dispatch_overhead_ms must be >= 0")?;
        check(non_negative(self.instance_idle_timeout_ms), "instance_idle_timeout_ms must be >= 0")?;
        check(self.billing_granularity_ms >= 1, "billing_granularity_ms must be >= 1")?;
        check(non_negative(self.price_per_gb_second), "price_per_gb_second must be >= 0")?;
        check(non_negative(self.price_per_request), "price_per_request must be >= 0")?;
        check(self.function_memory_mb >= 1, "function_memory_mb must be >= 1")?;
        check(self.limit_max_duration_ms.is_none_or(non_negative), "limit_max_duration_ms must be >= 0")?;
        Ok(())
    }

    /// Billed milliseconds for a busy interval: rounded up to the
    /// granularity, never less than one granule.
    pub fn billed_ms(&self, busy: SimTime) -> u64 {
        let granule_us = self.billing_granularity_ms * 1000;
        let granules = busy.as_micros().div_ceil(granule_us).max(1);
        granules * self.billing_granularity_ms
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Locality {
    Local,
    Remote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Failure {
    /// Busy interval would exceed `limit_max_duration_ms`.
    Timeout,
    /// Resident task memory exceeded `limit_max_memory_mb`.
    OutOfMemory,
    /// A synchronously called remote function failed.
    CalleeFailed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub caller: TaskId,
    pub callee: TaskId,
    pub mode: CallMode,
    pub locality: Locality,
    pub issued_at_ms: SimTime,
    /// When the callee finished: for sync calls and for local calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completed_at_ms: Option<SimTime>,
    /// Remote async request handed to the platform.
    #[serde(default)]
    pub dispatched: bool,
    /// Execution serving a remote call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub callee_execution: Option<u64>,
    #[serde(default)]
    pub failed: bool,
}

/// One task's run inside an execution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpan {
    pub task: TaskId,
    pub start_ms: SimTime,
    pub end_ms: SimTime,
    pub memory_mb: u32,
}

impl TaskSpan {
    pub fn duration(&self) -> SimTime {
        self.end_ms.saturating_sub(self.start_ms)
    }
}

/// One request served by one function instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub execution_id: u64,
    /// The external request this execution belongs to.
    pub invocation_id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent_execution: Option<u64>,
    /// Canonical label of the fusion group, e.g. `(A,B)`.
    pub function_id: String,
    pub entry_task: TaskId,
    pub cold_start: bool,
    /// When the request reached the platform.
    pub arrival_ms: SimTime,
    /// Start of the busy interval, after any cold start.
    pub start_ms: SimTime,
    pub end_ms: SimTime,
    pub billed_ms: u64,
    pub memory_mb: u32,
    pub resident_memory_mb: u32,
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<Failure>,
    pub tasks: Vec<TaskSpan>,
    pub calls: Vec<CallRecord>,
}

impl ExecutionRecord {
    pub fn is_root(&self) -> bool {
        self.parent_execution.is_none()
    }

    pub fn busy(&self) -> SimTime {
        self.end_ms.saturating_sub(self.start_ms)
    }

    /// Arrival to return, including any cold start.
    pub fn response_time(&self) -> SimTime {
        self.end_ms.saturating_sub(self.arrival_ms)
    }
}

/// `(billed_ms / 1000) * (memory_mb / 1024) * price_per_gb_second + price_per_request`
pub fn billed_cost(record: &ExecutionRecord, platform: &PlatformConfig) -> f64 {
    (record.billed_ms as f64 / 1000.0) * (record.memory_mb as f64 / 1024.0) * platform.price_per_gb_second
        + platform.price_per_request
}

/// Sum of billed milliseconds of every execution triggered by one request.
pub fn invocation_billed_duration(trace: &TraceLog, invocation_id: u64) -> Result<u64, crate::trace::TraceError> {
    let mut found = false;
    let mut total = 0;
    for r in trace.records().iter().filter(|r| r.invocation_id == invocation_id) {
        found = true;
        total += r.billed_ms;
    }
    if found {
        Ok(total)
    } else {
        Err(crate::trace::TraceError::UnknownInvocation(invocation_id))
    }
}

/// Runs `workload` against a freshly deployed `setup`.
pub fn run_simulation(
    app: &ApplicationSpec,
    setup: &FusionSetup,
    workload: &Workload,
    platform: &PlatformConfig,
) -> Result<TraceLog, SimError> {
    let mut sim = Simulator::new(app.clone(), setup.clone(), platform.clone(), workload.seed)?;
    sim.run(workload)
}
