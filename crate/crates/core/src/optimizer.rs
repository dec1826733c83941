//! The re-partitioning heuristic: pick the best setup seen so far, list the
//! rule violations it still has, and deploy the first untested fix.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::CallGraph;
use crate::model::{CallMode, FusionGroup, FusionSetup, SetupMutation, TaskId};
use crate::simkernel::{MemoryModel, PlatformConfig};
use crate::trace::MetricsSummary;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    MedianRR,
    AvgRR,
    P99RR,
    AvgBilled,
    Weighted { w_latency: f64, w_cost: f64 },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ObjectiveError {
    #[error(
        "unknown objective {0:?}; expected one of median_rr, avg_rr, p99_rr, avg_billed, weighted:<w_latency>,<w_cost>"
    )]
    Unknown(String),
    #[error("weights must be finite, non-negative and not both zero")]
    BadWeights,
}

impl Objective {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if let Objective::Weighted { w_latency, w_cost } = *self {
            let ok = |w: f64| w.is_finite() && w >= 0.0;
            if !ok(w_latency) || !ok(w_cost) || (w_latency == 0.0 && w_cost == 0.0) {
                return Err(ObjectiveError::BadWeights);
            }
        }
        Ok(())
    }

    /// Score of `metrics`, lower is better. `baseline` is the first tested
    /// setup and is only used by the weighted objective.
    pub fn score(&self, metrics: &MetricsSummary, baseline: &MetricsSummary) -> f64 {
        match *self {
            Objective::MedianRR => metrics.rr_med,
            Objective::AvgRR => metrics.rr_avg,
            Objective::P99RR => metrics.rr_p99,
            Objective::AvgBilled => metrics.billed_avg,
            Objective::Weighted { w_latency, w_cost } => {
                w_latency * normalized(metrics.rr_med, baseline.rr_med)
                    + w_cost * normalized(metrics.billed_avg, baseline.billed_avg)
            }
        }
    }
}

fn normalized(value: f64, base: f64) -> f64 {
    if base > 0.0 {
        value / base
    } else {
        value
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Objective::MedianRR => f.write_str("median_rr"),
            Objective::AvgRR => f.write_str("avg_rr"),
            Objective::P99RR => f.write_str("p99_rr"),
            Objective::AvgBilled => f.write_str("avg_billed"),
            Objective::Weighted { w_latency, w_cost } => write!(f, "weighted:{w_latency},{w_cost}"),
        }
    }
}

impl FromStr for Objective {
    type Err = ObjectiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let objective = match s.trim() {
            "median_rr" => Objective::MedianRR,
            "avg_rr" => Objective::AvgRR,
            "p99_rr" => Objective::P99RR,
            "avg_billed" => Objective::AvgBilled,
            other => {
                let weights = other.strip_prefix("weighted:").ok_or_else(|| ObjectiveError::Unknown(s.into()))?;
                let (l, c) = weights.split_once(',').ok_or(ObjectiveError::BadWeights)?;
                let parse = |w: &str| w.trim().parse::<f64>().map_err(|_| ObjectiveError::BadWeights);
                Objective::Weighted { w_latency: parse(l)?, w_cost: parse(c)? }
            }
        };
        objective.validate()?;
        Ok(objective)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum OptimizerError {
    #[error("setup history is empty")]
    EmptyHistory,
    #[error("setup {0} is already in the history")]
    Duplicate(String),
    #[error("setup {setup} has {n} samples, at least {min} required")]
    TooFewSamples { setup: String, n: usize, min: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub setup: FusionSetup,
    pub metrics: MetricsSummary,
}

/// Setups in order of first testing, each with the metrics it was judged on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetupHistory {
    min_samples: usize,
    entries: Vec<HistoryEntry>,
}

impl SetupHistory {
    pub fn new(min_samples: usize) -> Self {
        SetupHistory { min_samples, entries: Vec::new() }
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples
    }

    pub fn insert(&mut self, setup: FusionSetup, metrics: MetricsSummary) -> Result<(), OptimizerError> {
        if self.contains(&setup) {
            return Err(OptimizerError::Duplicate(setup.to_string()));
        }
        if metrics.n_invocations < self.min_samples {
            return Err(OptimizerError::TooFewSamples {
                setup: setup.to_string(),
                n: metrics.n_invocations,
                min: self.min_samples,
            });
        }
        self.entries.push(HistoryEntry { setup, metrics });
        Ok(())
    }

    pub fn contains(&self, setup: &FusionSetup) -> bool {
        self.entries.iter().any(|e| &e.setup == setup)
    }

    pub fn get(&self, setup: &FusionSetup) -> Option<&MetricsSummary> {
        self.entries.iter().find(|e| &e.setup == setup).map(|e| &e.metrics)
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Objective score of every entry, in test order.
    pub fn scores(&self, objective: &Objective) -> Vec<f64> {
        match self.entries.first() {
            None => Vec::new(),
            Some(base) => self.entries.iter().map(|e| objective.score(&e.metrics, &base.metrics)).collect(),
        }
    }
}

/// Lowest objective score. Equal scores fall back to average billed
/// duration, then median latency, then test order.
pub fn best_setup<'h>(history: &'h SetupHistory, objective: &Objective) -> Result<&'h FusionSetup, OptimizerError> {
    let scores = history.scores(objective);
    let key = |i: usize| {
        let m = &history.entries[i].metrics;
        (scores[i], m.billed_avg, m.rr_med)
    };
    let best = (0..history.len())
        .min_by(|&a, &b| {
            let (ka, kb) = (key(a), key(b));
            ka.0.total_cmp(&kb.0).then(ka.1.total_cmp(&kb.1)).then(ka.2.total_cmp(&kb.2)).then(a.cmp(&b))
        })
        .ok_or(OptimizerError::EmptyHistory)?;
    Ok(&history.entries[best].setup)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    /// `task` shares `group` with others but has no sync edge to any of them.
    SplitCandidate { group: FusionGroup, task: TaskId },
    /// A sync edge crosses from `group_a` to `group_b`.
    MergeCandidate { group_a: FusionGroup, group_b: FusionGroup, via: (TaskId, TaskId) },
}

impl Violation {
    pub fn mutation(&self) -> SetupMutation {
        match self {
            Violation::SplitCandidate { task, .. } => SetupMutation::SplitOut { task: task.clone() },
            Violation::MergeCandidate { via: (a, b), .. } => SetupMutation::Merge { a: a.clone(), b: b.clone() },
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SplitCandidate { group, task } => write!(f, "split {task} out of {group}"),
            Violation::MergeCandidate { group_a, group_b, via: (a, b) } => {
                write!(f, "merge {group_a} with {group_b} via {a}->{b}")
            }
        }
    }
}

fn split_task(v: &Violation) -> Option<&TaskId> {
    match v {
        Violation::SplitCandidate { task, .. } => Some(task),
        Violation::MergeCandidate { .. } => None,
    }
}

/// Split candidates ordered by task, then merge candidates ordered by the
/// first sync edge joining each pair of groups.
pub fn find_violations(setup: &FusionSetup, graph: &CallGraph) -> Vec<Violation> {
    let mut splits = Vec::new();
    for group in setup.groups().iter().filter(|g| g.len() > 1) {
        for task in group.tasks() {
            let sync_inside = graph.edges().any(|e| {
                e.mode == CallMode::Sync
                    && ((&e.caller == task && group.contains(&e.callee) && &e.callee != task)
                        || (&e.callee == task && group.contains(&e.caller) && &e.caller != task))
            });
            if !sync_inside {
                splits.push(Violation::SplitCandidate { group: group.clone(), task: task.clone() });
            }
        }
    }
    splits.sort_by(|a, b| split_task(a).cmp(&split_task(b)));

    let mut merges = Vec::new();
    let mut seen = BTreeSet::new();
    for e in graph.edges().filter(|e| e.mode == CallMode::Sync) {
        let (Some(ia), Some(ib)) = (setup.group_index_of(&e.caller), setup.group_index_of(&e.callee)) else {
            continue;
        };
        if ia == ib || !seen.insert((ia.min(ib), ia.max(ib))) {
            continue;
        }
        merges.push(Violation::MergeCandidate {
            group_a: setup.groups()[ia].clone(),
            group_b: setup.groups()[ib].clone(),
            via: (e.caller.clone(), e.callee.clone()),
        });
    }
    splits.extend(merges);
    splits
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Limit {
    Duration { predicted_ms: f64, limit_ms: f64 },
    Memory { predicted_mb: f64, limit_mb: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitViolation {
    pub group: FusionGroup,
    pub limit: Limit,
}

/// Groups whose predicted duration or memory exceeds the platform limits.
pub fn check_limits(setup: &FusionSetup, graph: &CallGraph, platform: &PlatformConfig) -> Vec<LimitViolation> {
    let mut out = Vec::new();
    for group in setup.groups() {
        let nodes: Vec<_> = group.tasks().filter_map(|t| graph.node(t)).collect();
        if let Some(limit_ms) = platform.limit_max_duration_ms {
            let predicted_ms: f64 = nodes.iter().map(|n| n.mean_duration_ms).sum();
            if predicted_ms > limit_ms {
                out.push(LimitViolation { group: group.clone(), limit: Limit::Duration { predicted_ms, limit_ms } });
            }
        }
        if let Some(limit_mb) = platform.limit_max_memory_mb {
            let memory = nodes.iter().map(|n| n.mean_memory_mb);
            let predicted_mb = match platform.memory_model {
                MemoryModel::Max => memory.fold(0.0, f64::max),
                MemoryModel::Sum => memory.sum(),
            };
            if predicted_mb > limit_mb as f64 {
                out.push(LimitViolation { group: group.clone(), limit: Limit::Memory { predicted_mb, limit_mb } });
            }
        }
    }
    out
}

/// The member that contributes most to the violated limit; ties go to the
/// alphabetically first task.
fn heaviest(group: &FusionGroup, graph: &CallGraph, limit: &Limit) -> TaskId {
    let weight = |t: &TaskId| {
        graph.node(t).map_or(0.0, |n| match limit {
            Limit::Duration { .. } => n.mean_duration_ms,
            Limit::Memory { .. } => n.mean_memory_mb,
        })
    };
    let mut best = group.first();
    for t in group.tasks() {
        if weight(t) > weight(best) {
            best = t;
        }
    }
    best.clone()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Invocations a setup needs before its metrics enter the history.
    pub min_samples: usize,
    /// Split the heaviest task out of groups that break a platform limit
    /// before looking at the regular violations.
    pub force_split_on_limit: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig { min_samples: 50, force_split_on_limit: false }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", content = "setup", rename_all = "snake_case")]
pub enum NextAction {
    Deploy(FusionSetup),
    Converged(FusionSetup),
}

/// The violations `propose_next_with` walks through, in order.
pub fn candidate_violations(
    best: &FusionSetup,
    graph: &CallGraph,
    config: &OptimizerConfig,
    platform: &PlatformConfig,
) -> Vec<Violation> {
    let mut out = Vec::new();
    if config.force_split_on_limit {
        for v in check_limits(best, graph, platform) {
            if v.group.len() > 1 {
                let task = heaviest(&v.group, graph, &v.limit);
                let split = Violation::SplitCandidate { group: v.group, task };
                if !out.contains(&split) {
                    out.push(split);
                }
            }
        }
    }
    out.extend(find_violations(best, graph));
    out
}

pub fn propose_next(
    history: &SetupHistory,
    graph: &CallGraph,
    objective: &Objective,
) -> Result<NextAction, OptimizerError> {
    propose_next_with(history, graph, objective, &OptimizerConfig::default(), &PlatformConfig::default())
}

pub fn propose_next_with(
    history: &SetupHistory,
    graph: &CallGraph,
    objective: &Objective,
    config: &OptimizerConfig,
    platform: &PlatformConfig,
) -> Result<NextAction, OptimizerError> {
    next_step(history, graph, objective, config, platform).map(|(action, _)| action)
}

/// Like [`propose_next_with`], also returning the violation behind a deploy.
pub fn next_step(
    history: &SetupHistory,
    graph: &CallGraph,
    objective: &Objective,
    config: &OptimizerConfig,
    platform: &PlatformConfig,
) -> Result<(NextAction, Option<Violation>), OptimizerError> {
    let best = best_setup(history, objective)?;
    for violation in candidate_violations(best, graph, config, platform) {
        let Ok(next) = best.apply(&violation.mutation()) else {
            continue;
        };
        if !history.contains(&next) {
            return Ok((NextAction::Deploy(next), Some(violation)));
        }
    }
    Ok((NextAction::Converged(best.clone()), None))
}

/// Human-readable summary of a violation list.
pub fn describe_violations(violations: &[Violation]) -> String {
    if violations.is_empty() {
        return String::from("none");
    }
    let parts: Vec<String> = violations.iter().map(|v| format!("{v}")).collect();
    parts.join("; ")
}
