//! The feedback loop: run windows of traffic against the active setup, decide
//! with an adapted continuous sampling plan (CSP-1) when to consult the
//! optimizer, and redeploy whatever it proposes.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::callgraph::{GraphBuilder, GraphError};
use crate::model::{FusionSetup, SetupError, TaskId};
use crate::optimizer::{next_step, NextAction, Objective, OptimizerConfig, OptimizerError, SetupHistory};
use crate::simkernel::{PlatformConfig, SimError, Simulator};
use crate::trace::{summarize_outcomes, InvocationOutcome, MetricsSummary, TraceError};
use crate::workloads::{AppError, ApplicationSpec, Workload};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Csp1Config {
    /// Consecutive stable windows needed to leave full inspection.
    pub clearance_i: u32,
    /// Probability of running the optimizer on a stable window while sampling.
    pub sampling_fraction_f: f64,
    /// Relative metric change above which a window counts as a defect.
    pub degradation_delta: f64,
    /// Invocations per window.
    pub window_invocations: u64,
}

impl Default for Csp1Config {
    fn default() -> Self {
        Csp1Config { clearance_i: 5, sampling_fraction_f: 0.2, degradation_delta: 0.10, window_invocations: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid CSP-1 configuration: {0}")]
    Config(&'static str),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    App(#[from] AppError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("window {window}: {source}")]
    Window { window: usize, source: TraceError },
}

impl Csp1Config {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.clearance_i < 1 {
            return Err(ControllerError::Config("clearance_i must be at least 1"));
        }
        if !(self.sampling_fraction_f > 0.0 && self.sampling_fraction_f <= 1.0) {
            return Err(ControllerError::Config("sampling_fraction_f must be in (0, 1]"));
        }
        if !(self.degradation_delta >= 0.0 && self.degradation_delta.is_finite()) {
            return Err(ControllerError::Config("degradation_delta must be a finite value >= 0"));
        }
        if self.window_invocations < 1 {
            return Err(ControllerError::Config("window_invocations must be at least 1"));
        }
        Ok(())
    }

    /// Parses `i,f,delta,window`.
    pub fn parse(text: &str) -> Result<Self, ControllerError> {
        let parts: Vec<&str> = text.split(',').map(str::trim).collect();
        let [i, f, delta, window] = parts[..] else {
            return Err(ControllerError::Config("expected i,f,delta,window"));
        };
        let config = Csp1Config {
            clearance_i: i.parse().map_err(|_| ControllerError::Config("clearance_i must be an integer"))?,
            sampling_fraction_f: f
                .parse()
                .map_err(|_| ControllerError::Config("sampling_fraction_f must be a number"))?,
            degradation_delta: delta
                .parse()
                .map_err(|_| ControllerError::Config("degradation_delta must be a number"))?,
            window_invocations: window
                .parse()
                .map_err(|_| ControllerError::Config("window_invocations must be an integer"))?,
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Csp1Mode {
    Inspect100,
    Sampling,
}

impl fmt::Display for Csp1Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Csp1Mode::Inspect100 => "inspect100",
            Csp1Mode::Sampling => "sampling",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Csp1State {
    pub mode: Csp1Mode,
    pub consecutive_stable: u32,
    pub last_metric: Option<f64>,
}

impl Default for Csp1State {
    fn default() -> Self {
        Csp1State { mode: Csp1Mode::Inspect100, consecutive_stable: 0, last_metric: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    RunOptimizer,
    Skip,
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Decision::RunOptimizer => "run_optimizer",
            Decision::Skip => "skip",
        })
    }
}

/// `|m - last| / last`, infinite without a previous value. Two zero
/// metrics count as unchanged.
pub fn relative_change(last: Option<f64>, metric: f64) -> f64 {
    match last {
        None => f64::INFINITY,
        Some(0.0) => {
            if metric == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        }
        Some(last) => libm::fabs(metric - last) / last,
    }
}

/// One CSP-1 step on the latest window's objective metric. `rand` is a
/// uniform draw in `[0, 1)`.
pub fn csp1_step(state: Csp1State, metric: f64, config: &Csp1Config, rand: f64) -> (Csp1State, Decision) {
    let r = relative_change(state.last_metric, metric);
    let stable = r <= config.degradation_delta;
    let mut next = Csp1State { last_metric: Some(metric), ..state };
    let decision = match state.mode {
        Csp1Mode::Inspect100 => {
            if stable {
                next.consecutive_stable += 1;
                if next.consecutive_stable >= config.clearance_i {
                    next.mode = Csp1Mode::Sampling;
                    next.consecutive_stable = 0;
                }
            } else {
                next.consecutive_stable = 0;
            }
            Decision::RunOptimizer
        }
        Csp1Mode::Sampling => {
            if !stable {
                next.mode = Csp1Mode::Inspect100;
                next.consecutive_stable = 0;
                Decision::RunOptimizer
            } else if rand < config.sampling_fraction_f {
                Decision::RunOptimizer
            } else {
                Decision::Skip
            }
        }
    };
    (next, decision)
}

/// Multiplies compute time from window `window` (0-based) onwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Degradation {
    pub window: usize,
    /// A single task, or every task when absent.
    pub task: Option<TaskId>,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoopOptions {
    /// Safety cap on the number of windows.
    pub max_windows: usize,
    pub degradation: Option<Degradation>,
    pub optimizer: OptimizerConfig,
}

impl Default for LoopOptions {
    fn default() -> Self {
        LoopOptions { max_windows: 500, degradation: None, optimizer: OptimizerConfig::default() }
    }
}

/// What happened to the active setup after a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WindowAction {
    /// The optimizer was not consulted.
    None,
    /// The active setup has not collected enough samples yet.
    Wait,
    Deploy {
        setup: FusionSetup,
        reason: String,
    },
    /// Converged on a best setup other than the active one and switched to it.
    Settle {
        setup: FusionSetup,
    },
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowLog {
    /// 1-based window number.
    pub window: usize,
    pub setup: FusionSetup,
    pub invocations: usize,
    pub failed: usize,
    pub rr_med: f64,
    pub billed_avg: f64,
    /// Objective score fed to CSP-1.
    pub metric: f64,
    /// Relative change against the previous window; absent when infinite.
    pub relative_change: Option<f64>,
    pub mode: Csp1Mode,
    pub decision: Decision,
    pub action: WindowAction,
    pub degraded: bool,
}

impl fmt::Display for WindowLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[window {}] setup={} rr_med={:.1} decision={} mode={}",
            self.window, self.setup, self.rr_med, self.decision, self.mode
        )?;
        match &self.action {
            WindowAction::None => Ok(()),
            WindowAction::Wait => f.write_str(" action=wait"),
            WindowAction::Deploy { setup, .. } => write!(f, " action=deploy {setup}"),
            WindowAction::Settle { setup } => write!(f, " action=settle {setup}"),
            WindowAction::Converged => f.write_str(" action=converged"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub setup: FusionSetup,
    pub metrics: MetricsSummary,
    pub score: f64,
    /// `initial` or the violation whose fix produced this setup.
    pub action: String,
    /// The invocations behind `metrics`; not serialized.
    #[serde(skip)]
    pub outcomes: Vec<InvocationOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub app: String,
    pub objective: String,
    pub workload: String,
    pub seed: u64,
    /// Tested setups in test order.
    pub entries: Vec<ReportEntry>,
    pub windows: Vec<WindowLog>,
    pub final_setup: FusionSetup,
    pub converged: bool,
}

impl OptimizationReport {
    pub fn entry(&self, setup: &FusionSetup) -> Option<&ReportEntry> {
        self.entries.iter().find(|e| &e.setup == setup)
    }
}

pub fn run_loop(
    app: &ApplicationSpec,
    platform: &PlatformConfig,
    workload_template: &Workload,
    objective: &Objective,
    csp1: &Csp1Config,
    seed: u64,
) -> Result<OptimizationReport, ControllerError> {
    run_loop_with(app, platform, workload_template, objective, csp1, seed, &LoopOptions::default(), &mut |_| {})
}

/// Outcomes gathered for the active setup until it has enough samples to
/// enter the history.
struct Pending {
    outcomes: Vec<InvocationOutcome>,
    cold_starts: usize,
}

impl Pending {
    fn new() -> Self {
        Pending { outcomes: Vec::new(), cold_starts: 0 }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn run_loop_with(
    app: &ApplicationSpec,
    platform: &PlatformConfig,
    workload_template: &Workload,
    objective: &Objective,
    csp1: &Csp1Config,
    seed: u64,
    options: &LoopOptions,
    observer: &mut dyn FnMut(&WindowLog),
) -> Result<OptimizationReport, ControllerError> {
    csp1.validate()?;
    objective.validate().map_err(|_| ControllerError::Config("invalid objective"))?;
    workload_template.validate().map_err(SimError::Workload)?;

    let initial = FusionSetup::singleton(app.task_ids().cloned())?;
    let mut sim = Simulator::new(app.clone(), initial, platform.clone(), seed)?;
    let mut draws = ChaCha8Rng::seed_from_u64(seed);
    draws.set_stream(1);
    let window_workload = workload_template.with_total(csp1.window_invocations);

    let mut history = SetupHistory::new(options.optimizer.min_samples);
    let mut reasons: Vec<String> = Vec::new();
    let mut samples: Vec<Vec<InvocationOutcome>> = Vec::new();
    let mut active_reason = String::from("initial");
    let mut pending = Pending::new();
    let mut graph = GraphBuilder::new();
    let mut state = Csp1State::default();
    let mut windows = Vec::new();
    let mut converged = false;
    let mut degraded = false;

    for w in 0..options.max_windows {
        if let Some(d) = options.degradation.as_ref().filter(|d| d.window == w) {
            let mut changed = sim.app().clone();
            changed.scale_compute(d.task.as_ref(), d.factor)?;
            sim.update_app(changed)?;
            degraded = true;
        }
        let active = sim.setup().clone();
        let log = sim.run(&window_workload)?;
        graph.add(&log)?;
        let outcomes = log.invocations(platform);
        let cold = log.records().iter().filter(|r| r.cold_start).count();
        let window_metrics = summarize_outcomes(&active.to_string(), &outcomes, cold)
            .map_err(|source| ControllerError::Window { window: w + 1, source })?;

        if !history.contains(&active) {
            pending.outcomes.extend(outcomes);
            pending.cold_starts += cold;
            let ok = pending.outcomes.iter().filter(|o| o.succeeded()).count();
            if ok >= history.min_samples() {
                let metrics = summarize_outcomes(&active.to_string(), &pending.outcomes, pending.cold_starts)
                    .map_err(|source| ControllerError::Window { window: w + 1, source })?;
                history.insert(active.clone(), metrics)?;
                reasons.push(core::mem::take(&mut active_reason));
                samples.push(core::mem::take(&mut pending.outcomes));
                pending = Pending::new();
            }
        }

        let metric = match history.entries().first() {
            Some(base) => objective.score(&window_metrics, &base.metrics),
            None => objective.score(&window_metrics, &window_metrics),
        };
        let r = relative_change(state.last_metric, metric);
        let (next_state, decision) = csp1_step(state, metric, csp1, draws.random::<f64>());
        state = next_state;

        let mut action = WindowAction::None;
        if decision == Decision::RunOptimizer {
            action = if !history.contains(&active) {
                WindowAction::Wait
            } else {
                let (next, violation) = next_step(&history, &graph.build()?, objective, &options.optimizer, platform)?;
                match next {
                    NextAction::Deploy(setup) => {
                        converged = false;
                        sim.redeploy(setup.clone())?;
                        pending = Pending::new();
                        let reason = violation.map(|v| v.to_string()).unwrap_or_default();
                        active_reason = reason.clone();
                        WindowAction::Deploy { setup, reason }
                    }
                    NextAction::Converged(best) => {
                        converged = true;
                        if best != active {
                            sim.redeploy(best.clone())?;
                            WindowAction::Settle { setup: best }
                        } else {
                            WindowAction::Converged
                        }
                    }
                }
            };
        }

        let entry = WindowLog {
            window: w + 1,
            setup: active,
            invocations: window_metrics.n_invocations,
            failed: window_metrics.failed_count,
            rr_med: window_metrics.rr_med,
            billed_avg: window_metrics.billed_avg,
            metric,
            relative_change: r.is_finite().then_some(r),
            mode: state.mode,
            decision,
            action,
            degraded,
        };
        observer(&entry);
        windows.push(entry);

        let degradation_pending = options.degradation.as_ref().is_some_and(|d| d.window > w);
        if converged && state.mode == Csp1Mode::Sampling && !degradation_pending {
            break;
        }
    }

    let scores = history.scores(objective);
    let entries = history
        .entries()
        .iter()
        .zip(scores)
        .zip(reasons)
        .zip(samples)
        .map(|(((e, score), action), outcomes)| ReportEntry {
            setup: e.setup.clone(),
            metrics: e.metrics.clone(),
            score,
            action,
            outcomes,
        })
        .collect();
    let final_setup = if converged {
        sim.setup().clone()
    } else {
        crate::optimizer::best_setup(&history, objective).cloned().unwrap_or_else(|_| sim.setup().clone())
    };
    Ok(OptimizationReport {
        app: app.name().to_string(),
        objective: objective.to_string(),
        workload: window_workload.to_string(),
        seed,
        entries,
        windows,
        final_setup,
        converged,
    })
}
