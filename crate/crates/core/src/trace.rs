//! Execution traces and the metrics computed from them.
//!
//! A [`TraceLog`] holds the execution records of one application under one
//! fusion setup. It is the only input to call-graph inference and metric
//! computation.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::FusionSetup;
use crate::simkernel::{billed_cost, ExecutionRecord, PlatformConfig};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum TraceError {
    #[error("record for function {function} does not belong to setup {setup}")]
    SetupMismatch { setup: String, function: String },
    #[error("cannot combine traces of {0} and {1}")]
    Inconsistent(String, String),
    #[error("trace contains no successful invocation ({failed} failed)")]
    NoSuccessfulInvocations { failed: usize },
    #[error("unknown invocation id {0}")]
    UnknownInvocation(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLog {
    pub app_name: String,
    pub setup: FusionSetup,
    /// Workload descriptor, e.g. `steady:1,1000`.
    pub workload: String,
    records: Vec<ExecutionRecord>,
}

impl TraceLog {
    pub fn new(app_name: &str, setup: &FusionSetup, workload: &str) -> Self {
        TraceLog {
            app_name: app_name.to_string(),
            setup: setup.clone(),
            workload: workload.to_string(),
            records: Vec::new(),
        }
    }

    pub(crate) fn from_records(
        app_name: &str,
        setup: &FusionSetup,
        workload: &str,
        records: Vec<ExecutionRecord>,
    ) -> Self {
        TraceLog { records, ..TraceLog::new(app_name, setup, workload) }
    }

    pub fn setup_label(&self) -> String {
        self.setup.to_string()
    }

    pub fn records(&self) -> &[ExecutionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends a record whose function belongs to this log's setup.
    pub fn append(&mut self, record: ExecutionRecord) -> Result<(), TraceError> {
        if !self.setup.groups().iter().any(|g| g.label() == record.function_id) {
            return Err(TraceError::SetupMismatch { setup: self.setup_label(), function: record.function_id });
        }
        self.records.push(record);
        Ok(())
    }

    /// Concatenates another log of the same application and setup.
    pub fn extend(&mut self, other: &TraceLog) -> Result<(), TraceError> {
        if other.app_name != self.app_name {
            return Err(TraceError::Inconsistent(self.app_name.clone(), other.app_name.clone()));
        }
        if other.setup != self.setup {
            return Err(TraceError::SetupMismatch { setup: self.setup_label(), function: other.setup_label() });
        }
        self.records.extend(other.records.iter().cloned());
        Ok(())
    }

    pub fn root_records(&self) -> impl Iterator<Item = &ExecutionRecord> {
        self.records.iter().filter(|r| r.is_root())
    }

    /// Per-invocation outcomes, ordered by invocation id.
    pub fn invocations(&self, platform: &PlatformConfig) -> Vec<InvocationOutcome> {
        let mut by_id: BTreeMap<u64, InvocationOutcome> = BTreeMap::new();
        for r in &self.records {
            let e = by_id.entry(r.invocation_id).or_insert(InvocationOutcome {
                invocation_id: r.invocation_id,
                rr_ms: None,
                failed: false,
                billed_ms: 0,
                cost: 0.0,
                cold_starts: 0,
            });
            e.billed_ms += r.billed_ms;
            e.cost += billed_cost(r, platform);
            e.cold_starts += r.cold_start as usize;
            if r.is_root() {
                e.rr_ms = Some(r.response_time().as_ms());
                e.failed = r.failed;
            }
        }
        by_id.into_values().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvocationOutcome {
    pub invocation_id: u64,
    /// `None` if the root record is missing from the log.
    pub rr_ms: Option<f64>,
    pub failed: bool,
    pub billed_ms: u64,
    pub cost: f64,
    pub cold_starts: usize,
}

impl InvocationOutcome {
    pub fn succeeded(&self) -> bool {
        self.rr_ms.is_some() && !self.failed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub setup: String,
    pub n_invocations: usize,
    pub rr_med: f64,
    pub rr_avg: f64,
    pub rr_p99: f64,
    pub billed_avg: f64,
    pub billed_med: f64,
    pub cost_avg: f64,
    pub cold_start_count: usize,
    pub failed_count: usize,
}

/// Nearest-rank percentile of sorted data: the element at 1-indexed rank
/// `ceil(p * n)`, at least 1.
pub fn nearest_rank(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let exact = p * sorted.len() as f64;
    let mut rank = exact as usize;
    if (rank as f64) < exact {
        rank += 1;
    }
    let rank = rank.clamp(1, sorted.len());
    Some(sorted[rank - 1])
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

/// Metrics over the successful root invocations of `log`. Failed
/// invocations are only counted.
pub fn summarize(log: &TraceLog, platform: &PlatformConfig) -> Result<MetricsSummary, TraceError> {
    summarize_outcomes(
        &log.setup_label(),
        &log.invocations(platform),
        log.records().iter().filter(|r| r.cold_start).count(),
    )
}

pub fn summarize_outcomes(
    setup: &str,
    outcomes: &[InvocationOutcome],
    cold_start_count: usize,
) -> Result<MetricsSummary, TraceError> {
    let failed_count = outcomes.iter().filter(|o| o.failed).count();
    let ok: Vec<&InvocationOutcome> = outcomes.iter().filter(|o| o.succeeded()).collect();
    if ok.is_empty() {
        return Err(TraceError::NoSuccessfulInvocations { failed: failed_count });
    }
    let rr = sorted(ok.iter().filter_map(|o| o.rr_ms).collect());
    let billed = sorted(ok.iter().map(|o| o.billed_ms as f64).collect());
    let costs: Vec<f64> = ok.iter().map(|o| o.cost).collect();
    Ok(MetricsSummary {
        setup: setup.to_string(),
        n_invocations: ok.len(),
        rr_med: nearest_rank(&rr, 0.5).unwrap_or_default(),
        rr_avg: mean(&rr),
        rr_p99: nearest_rank(&rr, 0.99).unwrap_or_default(),
        billed_avg: mean(&billed),
        billed_med: nearest_rank(&billed, 0.5).unwrap_or_default(),
        cost_avg: mean(&costs),
        cold_start_count,
        failed_count,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EcdfMetric {
    /// Request-response latency.
    Rr,
    /// Billed duration per invocation.
    Billed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EcdfRow {
    pub value_ms: f64,
    pub fraction: f64,
}

/// Empirical CDF: one row per distinct value with the fraction of samples
/// `<=` that value. The last fraction is exactly 1.
pub fn ecdf(values: &[f64]) -> Vec<EcdfRow> {
    let v = sorted(values.to_vec());
    let n = v.len();
    let mut rows: Vec<EcdfRow> = Vec::new();
    for (i, x) in v.iter().enumerate() {
        let fraction = if i + 1 == n { 1.0 } else { (i + 1) as f64 / n as f64 };
        match rows.last_mut() {
            Some(last) if last.value_ms == *x => last.fraction = fraction,
            _ => rows.push(EcdfRow { value_ms: *x, fraction }),
        }
    }
    rows
}

pub fn ecdf_export(log: &TraceLog, metric: EcdfMetric, platform: &PlatformConfig) -> Result<Vec<EcdfRow>, TraceError> {
    let outcomes = log.invocations(platform);
    let values: Vec<f64> = outcomes
        .iter()
        .filter(|o| o.succeeded())
        .map(|o| match metric {
            EcdfMetric::Rr => o.rr_ms.unwrap_or_default(),
            EcdfMetric::Billed => o.billed_ms as f64,
        })
        .collect();
    if values.is_empty() {
        return Err(TraceError::NoSuccessfulInvocations { failed: outcomes.len() });
    }
    Ok(ecdf(&values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::TaskId;
    use crate::time::SimTime;
    use alloc::vec;

    fn root(inv: u64, arrival: f64, end: f64, billed: u64) -> ExecutionRecord {
        ExecutionRecord {
            execution_id: inv * 10,
            invocation_id: inv,
            parent_execution: None,
            function_id: "(A)".into(),
            entry_task: TaskId::new("A").unwrap(),
            cold_start: false,
            arrival_ms: SimTime::from_ms(arrival),
            start_ms: SimTime::from_ms(arrival),
            end_ms: SimTime::from_ms(end),
            billed_ms: billed,
            memory_mb: 128,
            resident_memory_mb: 64,
            failed: false,
            failure: None,
            tasks: vec![],
            calls: vec![],
        }
    }

    fn log_with(records: Vec<ExecutionRecord>) -> TraceLog {
        let setup: FusionSetup = "(A)".parse().unwrap();
        let mut log = TraceLog::new("t", &setup, "steady:1,1");
        for r in records {
            log.append(r).unwrap();
        }
        log
    }

    #[test]
    fn append_checks_setup() {
        let mut log = log_with(vec![]);
        assert!(log.is_empty());
        log.append(root(0, 0.0, 1.0, 1)).unwrap();
        assert_eq!(log.len(), 1);
        let mut bad = root(1, 0.0, 1.0, 1);
        bad.function_id = "(B)".into();
        assert!(matches!(log.append(bad), Err(TraceError::SetupMismatch { .. })));
    }

    #[test]
    fn extend_matches_append() {
        let a = log_with(vec![root(0, 0.0, 1.0, 1)]);
        let b = log_with(vec![root(1, 0.0, 2.0, 2), root(2, 0.0, 3.0, 3)]);
        let mut joined = a.clone();
        joined.extend(&b).unwrap();
        assert_eq!(joined, log_with(vec![root(0, 0.0, 1.0, 1), root(1, 0.0, 2.0, 2), root(2, 0.0, 3.0, 3)]));
        let mut other = TraceLog::new("u", &"(A)".parse().unwrap(), "x");
        assert!(other.extend(&a).is_err());
    }

    #[test]
    fn summary_arithmetic() {
        let log = log_with(vec![root(0, 0.0, 100.0, 100), root(1, 0.0, 200.0, 200), root(2, 0.0, 300.0, 300)]);
        let s = summarize(&log, &PlatformConfig::default()).unwrap();
        assert_eq!(s.rr_med, 200.0);
        assert_eq!(s.rr_avg, 200.0);
        assert_eq!(s.rr_p99, 300.0);
        assert_eq!(s.billed_avg, 200.0);
        assert_eq!(s.n_invocations, 3);

        let log = log_with(vec![root(0, 0.0, 100.0, 1), root(1, 0.0, 200.0, 1)]);
        assert_eq!(summarize(&log, &PlatformConfig::default()).unwrap().rr_med, 100.0);

        let log = log_with(vec![root(0, 5.0, 47.5, 43)]);
        let s = summarize(&log, &PlatformConfig::default()).unwrap();
        assert_eq!((s.rr_med, s.rr_avg, s.rr_p99), (42.5, 42.5, 42.5));
    }

    #[test]
    fn summary_excludes_failures() {
        let mut failed = root(1, 0.0, 999.0, 999);
        failed.failed = true;
        let log = log_with(vec![root(0, 0.0, 10.0, 10), failed]);
        let s = summarize(&log, &PlatformConfig::default()).unwrap();
        assert_eq!(s.n_invocations, 1);
        assert_eq!(s.failed_count, 1);
        assert_eq!(s.rr_avg, 10.0);

        let mut only = root(0, 0.0, 1.0, 1);
        only.failed = true;
        assert_eq!(
            summarize(&log_with(vec![only]), &PlatformConfig::default()),
            Err(TraceError::NoSuccessfulInvocations { failed: 1 })
        );
        assert!(summarize(&log_with(vec![]), &PlatformConfig::default()).is_err());
    }

    #[test]
    fn nearest_rank_definition() {
        assert_eq!(nearest_rank(&[1.0, 2.0], 0.5), Some(1.0));
        assert_eq!(nearest_rank(&[1.0, 2.0, 3.0], 0.5), Some(2.0));
        assert_eq!(nearest_rank(&[5.0], 0.99), Some(5.0));
        assert_eq!(nearest_rank(&[], 0.5), None);
        let hundred: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(nearest_rank(&hundred, 0.99), Some(99.0));
    }

    #[test]
    fn ecdf_definition() {
        let rows = ecdf(&[1.0, 2.0, 2.0, 4.0]);
        let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.value_ms, r.fraction)).collect();
        assert_eq!(pairs, [(1.0, 0.25), (2.0, 0.75), (4.0, 1.0)]);
        let one = ecdf(&[7.0]);
        assert_eq!(one, [EcdfRow { value_ms: 7.0, fraction: 1.0 }]);
        let rows = ecdf(&[0.1, 0.2, 0.3, 0.3, 0.3, 0.7, 0.9]);
        assert!(rows.len() <= 7);
        assert_eq!(rows.last().unwrap().fraction, 1.0);
    }

    #[test]
    fn ecdf_from_log() {
        let log = log_with(vec![root(0, 0.0, 100.0, 101), root(1, 0.0, 100.0, 101)]);
        let rr = ecdf_export(&log, EcdfMetric::Rr, &PlatformConfig::default()).unwrap();
        assert_eq!(rr, [EcdfRow { value_ms: 100.0, fraction: 1.0 }]);
        let billed = ecdf_export(&log, EcdfMetric::Billed, &PlatformConfig::default()).unwrap();
        assert_eq!(billed[0].value_ms, 101.0);
        assert!(ecdf_export(&log_with(vec![]), EcdfMetric::Rr, &PlatformConfig::default()).is_err());
    }
}
