//! Application specifications, the two benchmark applications, and request
//! arrival generators.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CallMode, TaskId};
use crate::time::SimTime;

/// A duration distribution over milliseconds. Serialized as a plain number
/// for constants and `{"lognormal": [mu, sigma]}` otherwise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "DistRepr", into = "DistRepr")]
pub enum DurationDist {
    Constant(f64),
    /// `ln(ms) ~ Normal(mu, sigma)`.
    LogNormal {
        mu: f64,
        sigma: f64,
    },
}

#[derive(Clone, Copy, Serialize, Deserialize)]
#[serde(untagged, deny_unknown_fields)]
enum DistRepr {
    Constant(f64),
    LogNormal { lognormal: [f64; 2] },
}

impl From<DistRepr> for DurationDist {
    fn from(r: DistRepr) -> Self {
        match r {
            DistRepr::Constant(ms) => DurationDist::Constant(ms),
            DistRepr::LogNormal { lognormal: [mu, sigma] } => DurationDist::LogNormal { mu, sigma },
        }
    }
}

impl From<DurationDist> for DistRepr {
    fn from(d: DurationDist) -> Self {
        match d {
            DurationDist::Constant(ms) => DistRepr::Constant(ms),
            DurationDist::LogNormal { mu, sigma } => DistRepr::LogNormal { lognormal: [mu, sigma] },
        }
    }
}

impl DurationDist {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SimTime {
        match *self {
            DurationDist::Constant(ms) => SimTime::from_ms(ms),
            DurationDist::LogNormal { mu, sigma } => match LogNormal::new(mu, sigma) {
                Ok(d) => SimTime::from_ms(d.sample(rng)),
                Err(_) => SimTime::ZERO,
            },
        }
    }

    /// Mean in ms. The log-normal mean is `exp(mu + sigma^2/2)`.
    pub fn mean_ms(&self) -> f64 {
        match *self {
            DurationDist::Constant(ms) => ms,
            DurationDist::LogNormal { mu, sigma } => libm::exp(mu + sigma * sigma / 2.0),
        }
    }

    fn is_valid(&self) -> bool {
        match *self {
            DurationDist::Constant(ms) => ms.is_finite() && ms > 0.0,
            DurationDist::LogNormal { mu, sigma } => mu.is_finite() && sigma.is_finite() && sigma >= 0.0,
        }
    }

    pub fn scaled(&self, factor: f64) -> DurationDist {
        match *self {
            DurationDist::Constant(ms) => DurationDist::Constant(ms * factor),
            // ln(factor * X) = ln(factor) + ln(X)
            DurationDist::LogNormal { mu, sigma } => DurationDist::LogNormal { mu: mu + libm::log(factor), sigma },
        }
    }
}

/// Calls to an external service (database, queue) made by a task before it
/// issues its task calls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExternalCall {
    pub latency_ms: DurationDist,
    pub count: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallSpec {
    pub target: TaskId,
    pub mode: CallMode,
    pub probability: f64,
}

impl CallSpec {
    pub fn new(target: TaskId, mode: CallMode) -> Self {
        CallSpec { target, mode, probability: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub id: TaskId,
    pub compute_ms: DurationDist,
    pub memory_mb: u32,
    pub external_calls: Vec<ExternalCall>,
    pub calls: Vec<CallSpec>,
}

impl TaskSpec {
    pub fn new(id: TaskId, compute_ms: DurationDist) -> Self {
        TaskSpec { id, compute_ms, memory_mb: 64, external_calls: Vec::new(), calls: Vec::new() }
    }

    pub fn call(mut self, target: TaskId, mode: CallMode) -> Self {
        self.calls.push(CallSpec::new(target, mode));
        self
    }

    pub fn external(mut self, latency_ms: f64, count: u32) -> Self {
        self.external_calls.push(ExternalCall { latency_ms: DurationDist::Constant(latency_ms), count });
        self
    }

    /// Mean time spent in compute and external-service calls, in ms.
    pub fn mean_local_ms(&self) -> f64 {
        self.compute_ms.mean_ms()
            + self.external_calls.iter().map(|c| c.latency_ms.mean_ms() * c.count as f64).sum::<f64>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum AppError {
    #[error("unknown application {0:?} (expected \"tree\" or \"iot\")")]
    UnknownApp(String),
    #[error("application has no tasks")]
    NoTasks,
    #[error("task {0} is declared twice")]
    DuplicateTask(TaskId),
    #[error("entry task {0} is not declared")]
    MissingEntry(TaskId),
    #[error("task {from} calls undeclared task {to}")]
    DanglingCall { from: TaskId, to: TaskId },
    #[error("call cycle: {}", join_path(.0))]
    Cycle(Vec<TaskId>),
    #[error("task {0} is not reachable from the entry task")]
    Unreachable(TaskId),
    #[error("task {0}: compute_ms must be strictly positive")]
    BadCompute(TaskId),
    #[error("task {0}: memory_mb must be at least 1")]
    BadMemory(TaskId),
    #[error("task {0}: invalid external call latency")]
    BadExternal(TaskId),
    #[error("call {from} -> {to}: probability must be in (0, 1]")]
    BadProbability { from: TaskId, to: TaskId },
    #[error("task {0} is not part of this application")]
    UnknownTask(TaskId),
}

fn join_path(path: &[TaskId]) -> String {
    let parts: Vec<&str> = path.iter().map(TaskId::as_str).collect();
    parts.join(" -> ")
}

impl AppError {
    /// The task the error is about, when there is one.
    pub fn task(&self) -> Option<&TaskId> {
        match self {
            AppError::DuplicateTask(t)
            | AppError::MissingEntry(t)
            | AppError::Unreachable(t)
            | AppError::BadCompute(t)
            | AppError::BadMemory(t)
            | AppError::BadExternal(t)
            | AppError::UnknownTask(t) => Some(t),
            AppError::DanglingCall { from, .. } | AppError::BadProbability { from, .. } => Some(from),
            AppError::Cycle(path) => path.first(),
            AppError::UnknownApp(_) | AppError::NoTasks => None,
        }
    }
}

/// A validated application: acyclic, every task reachable from `entry`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApplicationSpec {
    name: String,
    entry: TaskId,
    tasks: BTreeMap<TaskId, TaskSpec>,
}

impl ApplicationSpec {
    pub fn new(name: impl Into<String>, entry: TaskId, tasks: Vec<TaskSpec>) -> Result<Self, AppError> {
        let mut map = BTreeMap::new();
        for t in tasks {
            let id = t.id.clone();
            if map.insert(id.clone(), t).is_some() {
                return Err(AppError::DuplicateTask(id));
            }
        }
        let app = ApplicationSpec { name: name.into(), entry, tasks: map };
        app.validate()?;
        Ok(app)
    }

    fn validate(&self) -> Result<(), AppError> {
        if self.tasks.is_empty() {
            return Err(AppError::NoTasks);
        }
        if !self.tasks.contains_key(&self.entry) {
            return Err(AppError::MissingEntry(self.entry.clone()));
        }
        for t in self.tasks.values() {
            if !t.compute_ms.is_valid() {
                return Err(AppError::BadCompute(t.id.clone()));
            }
            if t.memory_mb == 0 {
                return Err(AppError::BadMemory(t.id.clone()));
            }
            if t.external_calls.iter().any(|c| match c.latency_ms {
                DurationDist::Constant(ms) => !(ms >= 0.0 && ms.is_finite()),
                d => !d.is_valid(),
            }) {
                return Err(AppError::BadExternal(t.id.clone()));
            }
            for c in &t.calls {
                if !self.tasks.contains_key(&c.target) {
                    return Err(AppError::DanglingCall { from: t.id.clone(), to: c.target.clone() });
                }
                if !(c.probability > 0.0 && c.probability <= 1.0) {
                    return Err(AppError::BadProbability { from: t.id.clone(), to: c.target.clone() });
                }
            }
        }
        if let Some(cycle) = self.find_cycle() {
            return Err(AppError::Cycle(cycle));
        }
        let reachable = self.reachable_from_entry();
        if let Some(t) = self.tasks.keys().find(|t| !reachable.contains(*t)) {
            return Err(AppError::Unreachable(t.clone()));
        }
        Ok(())
    }

    fn find_cycle(&self) -> Option<Vec<TaskId>> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mark {
            Fresh,
            Active,
            Done,
        }
        let mut marks: BTreeMap<&TaskId, Mark> = self.tasks.keys().map(|k| (k, Mark::Fresh)).collect();
        let mut path: Vec<&TaskId> = Vec::new();

        fn visit<'a>(
            app: &'a ApplicationSpec,
            node: &'a TaskId,
            marks: &mut BTreeMap<&'a TaskId, Mark>,
            path: &mut Vec<&'a TaskId>,
        ) -> Option<Vec<TaskId>> {
            marks.insert(node, Mark::Active);
            path.push(node);
            for c in &app.tasks[node].calls {
                match marks[&c.target] {
                    Mark::Active => {
                        let start = path.iter().position(|t| **t == c.target).unwrap_or(0);
                        let mut cycle: Vec<TaskId> = path[start..].iter().map(|t| (*t).clone()).collect();
                        cycle.push(c.target.clone());
                        return Some(cycle);
                    }
                    Mark::Fresh => {
                        let target = app.tasks.get_key_value(&c.target).map(|(k, _)| k).expect("validated");
                        if let Some(cycle) = visit(app, target, marks, path) {
                            return Some(cycle);
                        }
                    }
                    Mark::Done => {}
                }
            }
            path.pop();
            marks.insert(node, Mark::Done);
            None
        }

        for k in self.tasks.keys() {
            if marks[k] == Mark::Fresh {
                if let Some(c) = visit(self, k, &mut marks, &mut path) {
                    return Some(c);
                }
            }
        }
        None
    }

    fn reachable_from_entry(&self) -> BTreeSet<&TaskId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![&self.entry];
        while let Some(t) = stack.pop() {
            if seen.insert(t) {
                for c in &self.tasks[t].calls {
                    stack.push(&c.target);
                }
            }
        }
        seen
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entry(&self) -> &TaskId {
        &self.entry
    }

    pub fn task(&self, id: &TaskId) -> Option<&TaskSpec> {
        self.tasks.get(id)
    }

    /// Tasks in lexicographic order of their ids.
    pub fn tasks(&self) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.values()
    }

    pub fn task_ids(&self) -> impl Iterator<Item = &TaskId> {
        self.tasks.keys()
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Static `(caller, callee, mode, probability)` edges in task order.
    pub fn edges(&self) -> impl Iterator<Item = (&TaskId, &CallSpec)> {
        self.tasks.values().flat_map(|t| t.calls.iter().map(move |c| (&t.id, c)))
    }

    /// Multiplies the compute time of `task` (or of every task when `None`).
    pub fn scale_compute(&mut self, task: Option<&TaskId>, factor: f64) -> Result<(), AppError> {
        match task {
            Some(id) => {
                let t = self.tasks.get_mut(id).ok_or_else(|| AppError::UnknownTask(id.clone()))?;
                t.compute_ms = t.compute_ms.scaled(factor);
            }
            None => {
                for t in self.tasks.values_mut() {
                    t.compute_ms = t.compute_ms.scaled(factor);
                }
            }
        }
        Ok(())
    }
}

fn tid(s: &str) -> TaskId {
    TaskId::new(s).expect("builtin task names are valid")
}

/// Compute constants of the tree benchmark.
pub mod tree {
    /// A and B only dispatch to their children.
    pub const DISPATCH_MS: f64 = 50.0;
    /// D and E, the synchronously called leaves.
    pub const SYNC_LEAF_MS: f64 = 700.0;
    /// C, F and G, reached asynchronously.
    pub const ASYNC_MS: f64 = 300.0;
}

/// Compute constants of the IoT benchmark.
pub mod iot {
    pub const ASYNC_MS: f64 = 500.0;
    pub const SYNC_MS: f64 = 20.0;
    pub const DB_MS: f64 = 20.0;
}

fn tree_app() -> ApplicationSpec {
    use CallMode::*;
    let c = DurationDist::Constant;
    let tasks = vec![
        TaskSpec::new(tid("A"), c(tree::DISPATCH_MS)).call(tid("B"), Sync).call(tid("C"), Async),
        TaskSpec::new(tid("B"), c(tree::DISPATCH_MS)).call(tid("D"), Sync).call(tid("E"), Sync),
        TaskSpec::new(tid("C"), c(tree::ASYNC_MS)).call(tid("F"), Async).call(tid("G"), Async),
        TaskSpec::new(tid("D"), c(tree::SYNC_LEAF_MS)),
        TaskSpec::new(tid("E"), c(tree::SYNC_LEAF_MS)),
        TaskSpec::new(tid("F"), c(tree::ASYNC_MS)),
        TaskSpec::new(tid("G"), c(tree::ASYNC_MS)),
    ];
    ApplicationSpec::new("tree", tid("A"), tasks).expect("tree app is valid")
}

fn iot_app() -> ApplicationSpec {
    use CallMode::*;
    let c = DurationDist::Constant;
    let slow = c(iot::ASYNC_MS);
    let fast = c(iot::SYNC_MS);
    let tasks = vec![
        TaskSpec::new(tid("I"), fast)
            .call(tid("CW"), Sync)
            .call(tid("SE"), Sync)
            .call(tid("CA"), Async)
            .call(tid("CT"), Async)
            .call(tid("CS"), Async),
        TaskSpec::new(tid("CW"), fast),
        TaskSpec::new(tid("SE"), fast).external(iot::DB_MS, 1),
        TaskSpec::new(tid("CA"), slow).call(tid("DJ"), Sync).call(tid("AS"), Async),
        TaskSpec::new(tid("DJ"), fast).external(iot::DB_MS, 1),
        TaskSpec::new(tid("CT"), slow).call(tid("AS"), Async),
        TaskSpec::new(tid("AS"), slow).external(iot::DB_MS, 1),
        TaskSpec::new(tid("CS"), slow).call(tid("CSA"), Sync),
        TaskSpec::new(tid("CSA"), fast).external(iot::DB_MS, 1).call(tid("CSL"), Sync),
        // two reads, then one write
        TaskSpec::new(tid("CSL"), fast).external(iot::DB_MS, 2).external(iot::DB_MS, 1),
    ];
    ApplicationSpec::new("iot", tid("I"), tasks).expect("iot app is valid")
}

/// `"tree"` or `"iot"`.
pub fn builtin_app(name: &str) -> Result<ApplicationSpec, AppError> {
    match name {
        "tree" => Ok(tree_app()),
        "iot" => Ok(iot_app()),
        other => Err(AppError::UnknownApp(other.to_string())),
    }
}

/// Gap between cold-storm requests. Long enough that one request's whole
/// call tree finishes before the next request arrives.
pub const COLD_STORM_SPACING_MS: f64 = 60_000.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WorkloadKind {
    SteadyRate {
        rate_rps: f64,
        total_requests: u64,
    },
    /// Every request hits a platform with no warm instances.
    ColdStorm {
        total_requests: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub kind: WorkloadKind,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum WorkloadError {
    #[error("invalid workload {0:?}: expected steady:<rate>,<n> or coldstorm:<n>")]
    Syntax(String),
    #[error("total_requests must be at least 1")]
    NoRequests,
    #[error("rate_rps must be positive and finite")]
    BadRate,
}

impl Workload {
    pub fn steady(rate_rps: f64, total_requests: u64, seed: u64) -> Self {
        Workload { kind: WorkloadKind::SteadyRate { rate_rps, total_requests }, seed }
    }

    pub fn cold_storm(total_requests: u64, seed: u64) -> Self {
        Workload { kind: WorkloadKind::ColdStorm { total_requests }, seed }
    }

    pub fn total_requests(&self) -> u64 {
        match self.kind {
            WorkloadKind::SteadyRate { total_requests, .. } | WorkloadKind::ColdStorm { total_requests } => {
                total_requests
            }
        }
    }

    /// Same arrival pattern with a different request count.
    pub fn with_total(&self, n: u64) -> Self {
        let kind = match self.kind {
            WorkloadKind::SteadyRate { rate_rps, .. } => WorkloadKind::SteadyRate { rate_rps, total_requests: n },
            WorkloadKind::ColdStorm { .. } => WorkloadKind::ColdStorm { total_requests: n },
        };
        Workload { kind, seed: self.seed }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        if self.total_requests() == 0 {
            return Err(WorkloadError::NoRequests);
        }
        if let WorkloadKind::SteadyRate { rate_rps, .. } = self.kind {
            if !(rate_rps > 0.0 && rate_rps.is_finite()) {
                return Err(WorkloadError::BadRate);
            }
        }
        Ok(())
    }

    /// Virtual time between consecutive arrivals.
    pub fn interval(&self) -> SimTime {
        match self.kind {
            WorkloadKind::SteadyRate { rate_rps, .. } => SimTime::from_ms(1000.0 / rate_rps),
            WorkloadKind::ColdStorm { .. } => SimTime::from_ms(COLD_STORM_SPACING_MS),
        }
    }

    /// Parses the CLI form (`steady:1,1000`, `coldstorm:300`).
    pub fn parse(text: &str, seed: u64) -> Result<Self, WorkloadError> {
        let err = || WorkloadError::Syntax(text.to_string());
        let (kind, args) = text.split_once(':').ok_or_else(err)?;
        let w = match kind.trim() {
            "steady" => {
                let (rate, n) = args.split_once(',').ok_or_else(err)?;
                let rate: f64 = rate.trim().parse().map_err(|_| err())?;
                let n: u64 = n.trim().parse().map_err(|_| err())?;
                Workload::steady(rate, n, seed)
            }
            "coldstorm" => Workload::cold_storm(args.trim().parse().map_err(|_| err())?, seed),
            _ => return Err(err()),
        };
        w.validate()?;
        Ok(w)
    }
}

/// The CLI form without the seed.
impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            WorkloadKind::SteadyRate { rate_rps, total_requests } => write!(f, "steady:{rate_rps},{total_requests}"),
            WorkloadKind::ColdStorm { total_requests } => write!(f, "coldstorm:{total_requests}"),
        }
    }
}

impl FromStr for Workload {
    type Err = WorkloadError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Workload::parse(s, 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrivalEvent {
    pub time: SimTime,
    pub request_id: u64,
    /// Reset every instance before this request.
    pub force_cold: bool,
}

impl ArrivalEvent {
    pub fn time_ms(&self) -> f64 {
        self.time.as_ms()
    }
}

/// Arrival times start at 0. The i-th steady arrival is at `i * 1000 / rate`
/// ms, rounded to the microsecond without accumulating error.
pub fn generate_arrivals(workload: &Workload) -> Vec<ArrivalEvent> {
    match workload.kind {
        WorkloadKind::SteadyRate { rate_rps, total_requests } => (0..total_requests)
            .map(|i| ArrivalEvent {
                time: SimTime::from_ms(i as f64 * 1000.0 / rate_rps),
                request_id: i,
                force_cold: false,
            })
            .collect(),
        WorkloadKind::ColdStorm { total_requests } => (0..total_requests)
            .map(|i| ArrivalEvent {
                time: SimTime::from_ms(i as f64 * COLD_STORM_SPACING_MS),
                request_id: i,
                force_cold: true,
            })
            .collect(),
    }
}

/// Human-readable one-liner for error messages.
pub fn describe_app(app: &ApplicationSpec) -> String {
    format!("{} ({} tasks, entry {})", app.name(), app.len(), app.entry())
}
