use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::{Ordering, Reverse};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CallRecord, ExecutionRecord, Failure, Locality, PlatformConfig, SimError, TaskSpan};
use crate::model::{CallMode, FusionSetup, TaskId};
use crate::time::SimTime;
use crate::trace::TraceLog;
use crate::workloads::{generate_arrivals, ApplicationSpec, DurationDist, ExternalCall, Workload};

struct CompiledTask {
    id: TaskId,
    compute: DurationDist,
    memory_mb: u32,
    external: Vec<ExternalCall>,
    calls: Vec<(usize, CallMode, f64)>,
}

/// Index-based view of the application under the active setup.
struct Layout {
    tasks: Vec<CompiledTask>,
    group_of: Vec<usize>,
    labels: Vec<String>,
    entry: usize,
}

impl Layout {
    fn new(app: &ApplicationSpec, setup: &FusionSetup) -> Result<Self, SimError> {
        setup.check_covers(app.task_ids())?;
        let ids: Vec<&TaskId> = app.task_ids().collect();
        let index = |t: &TaskId| ids.binary_search(&t).expect("validated app");
        let tasks = app
            .tasks()
            .map(|t| CompiledTask {
                id: t.id.clone(),
                compute: t.compute_ms,
                memory_mb: t.memory_mb,
                external: t.external_calls.clone(),
                calls: t.calls.iter().map(|c| (index(&c.target), c.mode, c.probability)).collect(),
            })
            .collect();
        let group_of = ids.iter().map(|t| setup.group_index_of(t).expect("covered")).collect();
        let labels = setup.groups().iter().map(|g| g.label()).collect();
        Ok(Layout { tasks, group_of, labels, entry: index(app.entry()) })
    }
}

struct Instance {
    group: usize,
    busy: bool,
    last_used: SimTime,
    resolved_remote: bool,
    generation: u64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Running,
    Blocked { call: usize },
    Finishing,
}

struct Cursor {
    task: usize,
    next_call: usize,
    span: usize,
    origin_call: Option<usize>,
}

struct Exec {
    id: u64,
    invocation: u64,
    parent: Option<u64>,
    /// Caller blocked on this execution: (execution, index of its call record).
    waiter: Option<(u64, usize)>,
    group: usize,
    entry_task: usize,
    instance: usize,
    cold: bool,
    arrival: SimTime,
    start: SimTime,
    now: SimTime,
    deadline: Option<SimTime>,
    run_queue: VecDeque<(usize, Option<usize>)>,
    cursor: Option<Cursor>,
    resident: Vec<usize>,
    resident_mb: u32,
    spans: Vec<TaskSpan>,
    calls: Vec<CallRecord>,
    failure: Option<Failure>,
    state: State,
    timeout_armed: bool,
}

enum EventKind {
    Arrival { force_cold: bool },
    Dispatch { exec: u64, group: usize, task: usize, invocation: u64, parent: u64, waiter: Option<(u64, usize)> },
    Finish { exec: u64 },
    Timeout { exec: u64 },
}

struct Event {
    time: SimTime,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

/// A FaaS platform with one deployed fusion setup.
///
/// State (warm instances, the clock, id counters, the RNG) persists across
/// [`Simulator::run`] calls, so a controller can feed consecutive windows of
/// traffic through the same deployment.
pub struct Simulator {
    app: ApplicationSpec,
    platform: PlatformConfig,
    setup: FusionSetup,
    layout: Layout,
    rng: ChaCha8Rng,
    clock: SimTime,
    seq: u64,
    events: BinaryHeap<Reverse<Event>>,
    instances: Vec<Instance>,
    idle: Vec<Vec<usize>>,
    execs: BTreeMap<u64, Exec>,
    next_exec: u64,
    next_invocation: u64,
    generation: u64,
    finished: Vec<ExecutionRecord>,
}

impl core::fmt::Debug for Simulator {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Simulator")
            .field("app", &self.app.name())
            .field("setup", &self.setup)
            .field("clock", &self.clock)
            .field("instances", &self.instances.len())
            .finish()
    }
}

impl Simulator {
    pub fn new(
        app: ApplicationSpec,
        setup: FusionSetup,
        platform: PlatformConfig,
        seed: u64,
    ) -> Result<Self, SimError> {
        platform.validate()?;
        let layout = Layout::new(&app, &setup)?;
        let groups = layout.labels.len();
        Ok(Simulator {
            app,
            platform,
            setup,
            layout,
            rng: ChaCha8Rng::seed_from_u64(seed),
            clock: SimTime::ZERO,
            seq: 0,
            events: BinaryHeap::new(),
            instances: Vec::new(),
            idle: vec![Vec::new(); groups],
            execs: BTreeMap::new(),
            next_exec: 0,
            next_invocation: 0,
            generation: 0,
            finished: Vec::new(),
        })
    }

    pub fn app(&self) -> &ApplicationSpec {
        &self.app
    }

    pub fn setup(&self) -> &FusionSetup {
        &self.setup
    }

    pub fn platform(&self) -> &PlatformConfig {
        &self.platform
    }

    pub fn clock(&self) -> SimTime {
        self.clock
    }

    /// Switches to a new setup. Every existing instance is discarded.
    pub fn redeploy(&mut self, setup: FusionSetup) -> Result<(), SimError> {
        debug_assert!(self.execs.is_empty(), "redeploy between runs only");
        self.layout = Layout::new(&self.app, &setup)?;
        self.setup = setup;
        self.instances.clear();
        self.idle = vec![Vec::new(); self.layout.labels.len()];
        Ok(())
    }

    /// Replaces the application (same task set), e.g. to inject a slowdown.
    /// Warm instances are kept.
    pub fn update_app(&mut self, app: ApplicationSpec) -> Result<(), SimError> {
        self.layout = Layout::new(&app, &self.setup)?;
        self.app = app;
        Ok(())
    }

    /// Adds `count` idle warm instances for the function hosting `task`.
    pub fn prewarm(&mut self, task: &TaskId, count: usize, resolved_remote: bool) -> Result<(), SimError> {
        let group = self
            .setup
            .group_index_of(task)
            .ok_or_else(|| SimError::Setup(crate::model::SetupError::UnknownTask(task.clone())))?;
        for _ in 0..count {
            let id = self.instances.len();
            self.instances.push(Instance {
                group,
                busy: false,
                last_used: self.clock,
                resolved_remote,
                generation: self.generation,
            });
            self.idle[group].push(id);
        }
        Ok(())
    }

    /// Feeds `workload` through the platform, starting at the current clock,
    /// and runs until every triggered execution has finished.
    pub fn run(&mut self, workload: &Workload) -> Result<TraceLog, SimError> {
        workload.validate()?;
        let offset = self.clock;
        for a in generate_arrivals(workload) {
            self.schedule(offset + a.time, EventKind::Arrival { force_cold: a.force_cold });
        }
        while let Some(Reverse(ev)) = self.events.pop() {
            self.handle(ev);
        }
        let records = core::mem::take(&mut self.finished);
        Ok(TraceLog::from_records(self.app.name(), &self.setup, &workload.to_string(), records))
    }

    fn schedule(&mut self, time: SimTime, kind: EventKind) {
        debug_assert!(time >= self.clock, "events never go back in time");
        let seq = self.seq;
        self.seq += 1;
        self.events.push(Reverse(Event { time, seq, kind }));
    }

    fn handle(&mut self, ev: Event) {
        match ev.kind {
            EventKind::Arrival { force_cold } => {
                self.clock = ev.time;
                if force_cold {
                    self.reset_instances();
                }
                let invocation = self.next_invocation;
                self.next_invocation += 1;
                let exec = self.next_exec;
                self.next_exec += 1;
                let entry = self.layout.entry;
                let group = self.layout.group_of[entry];
                self.start_execution(exec, group, entry, invocation, None, None, ev.time);
            }
            EventKind::Dispatch { exec, group, task, invocation, parent, waiter } => {
                self.clock = ev.time;
                self.start_execution(exec, group, task, invocation, Some(parent), waiter, ev.time);
            }
            EventKind::Finish { exec } => {
                self.clock = ev.time;
                self.finish(exec);
            }
            EventKind::Timeout { exec } => {
                let Some(e) = self.execs.get_mut(&exec) else { return };
                if !matches!(e.state, State::Blocked { .. }) {
                    return;
                }
                self.clock = ev.time;
                e.now = ev.time;
                e.failure = Some(Failure::Timeout);
                e.state = State::Running;
                self.advance(exec);
            }
        }
    }

    /// Drops idle instances; busy ones are retired when they finish.
    fn reset_instances(&mut self) {
        self.generation += 1;
        for list in &mut self.idle {
            list.clear();
        }
    }

    fn acquire(&mut self, group: usize, at: SimTime) -> (usize, bool) {
        let timeout = SimTime::from_ms(self.platform.instance_idle_timeout_ms);
        while let Some(id) = self.idle[group].pop() {
            let inst = &mut self.instances[id];
            if inst.last_used + timeout < at {
                continue;
            }
            inst.busy = true;
            return (id, false);
        }
        let id = self.instances.len();
        self.instances.push(Instance {
            group,
            busy: true,
            last_used: at,
            resolved_remote: false,
            generation: self.generation,
        });
        (id, true)
    }

    #[allow(clippy::too_many_arguments)]
    fn start_execution(
        &mut self,
        id: u64,
        group: usize,
        task: usize,
        invocation: u64,
        parent: Option<u64>,
        waiter: Option<(u64, usize)>,
        arrival: SimTime,
    ) {
        let (instance, cold) = self.acquire(group, arrival);
        let (init, handler) = if cold {
            (self.platform.cold_start_ms.sample(&mut self.rng), self.platform.handler_overhead_cold_ms)
        } else {
            (SimTime::ZERO, self.platform.handler_overhead_warm_ms)
        };
        let start = arrival + init;
        let deadline = self.platform.limit_max_duration_ms.map(|ms| start + SimTime::from_ms(ms));
        let mut exec = Exec {
            id,
            invocation,
            parent,
            waiter,
            group,
            entry_task: task,
            instance,
            cold,
            arrival,
            start,
            now: start + SimTime::from_ms(handler),
            deadline,
            run_queue: VecDeque::from([(task, None)]),
            cursor: None,
            resident: Vec::new(),
            resident_mb: 0,
            spans: Vec::new(),
            calls: Vec::new(),
            failure: None,
            state: State::Running,
            timeout_armed: false,
        };
        check_deadline(&mut exec);
        self.execs.insert(id, exec);
        self.advance(id);
    }

    /// Runs an execution forward until it blocks on a remote sync call or
    /// finishes.
    fn advance(&mut self, id: u64) {
        let mut exec = self.execs.remove(&id).expect("advancing a live execution");
        loop {
            if exec.failure.is_some() {
                break;
            }
            let Some(cursor) = exec.cursor.as_mut() else {
                let Some((task, origin_call)) = exec.run_queue.pop_front() else { break };
                self.begin_task(&mut exec, task, origin_call);
                continue;
            };
            let task = &self.layout.tasks[cursor.task];
            if cursor.next_call >= task.calls.len() {
                let span = cursor.span;
                let origin = cursor.origin_call;
                exec.cursor = None;
                exec.spans[span].end_ms = exec.now;
                if let Some(ci) = origin {
                    exec.calls[ci].completed_at_ms = Some(exec.now);
                }
                continue;
            }
            let (target, mode, probability) = task.calls[cursor.next_call];
            cursor.next_call += 1;
            if probability < 1.0 && self.rng.random::<f64>() >= probability {
                continue;
            }
            let caller = task.id.clone();
            let callee = self.layout.tasks[target].id.clone();
            let target_group = self.layout.group_of[target];
            let call_idx = exec.calls.len();
            let mut record = CallRecord {
                caller,
                callee,
                mode,
                locality: Locality::Local,
                issued_at_ms: exec.now,
                completed_at_ms: None,
                dispatched: false,
                callee_execution: None,
                failed: false,
            };
            if target_group == exec.group {
                exec.calls.push(record);
                exec.run_queue.push_back((target, Some(call_idx)));
                continue;
            }

            record.locality = Locality::Remote;
            let inst = &mut self.instances[exec.instance];
            if !inst.resolved_remote {
                inst.resolved_remote = true;
                exec.now += SimTime::from_ms(self.platform.first_remote_call_penalty_ms);
                if check_deadline(&mut exec) {
                    exec.calls.push(record);
                    break;
                }
            }
            let child = self.next_exec;
            self.next_exec += 1;
            record.callee_execution = Some(child);
            let arrives = exec.now + SimTime::from_ms(self.platform.remote_call_overhead_ms);
            let dispatch = |waiter| EventKind::Dispatch {
                exec: child,
                group: target_group,
                task: target,
                invocation: exec.invocation,
                parent: exec.id,
                waiter,
            };
            match mode {
                CallMode::Sync => {
                    let ev = dispatch(Some((exec.id, call_idx)));
                    exec.calls.push(record);
                    self.schedule(arrives, ev);
                    exec.state = State::Blocked { call: call_idx };
                    if let (Some(deadline), false) = (exec.deadline, exec.timeout_armed) {
                        exec.timeout_armed = true;
                        self.schedule(deadline, EventKind::Timeout { exec: exec.id });
                    }
                    self.execs.insert(id, exec);
                    return;
                }
                CallMode::Async => {
                    let ev = dispatch(None);
                    record.dispatched = true;
                    exec.calls.push(record);
                    self.schedule(arrives, ev);
                    exec.now += SimTime::from_ms(self.platform.async_dispatch_overhead_ms);
                    check_deadline(&mut exec);
                }
            }
        }

        if let Some(c) = exec.cursor.take() {
            exec.spans[c.span].end_ms = exec.now;
        }
        exec.run_queue.clear();
        exec.state = State::Finishing;
        let end = exec.now;
        self.execs.insert(id, exec);
        self.schedule(end, EventKind::Finish { exec: id });
    }

    fn begin_task(&mut self, exec: &mut Exec, task: usize, origin_call: Option<usize>) {
        let spec = &self.layout.tasks[task];
        if !exec.resident.contains(&task) {
            exec.resident.push(task);
            let tasks = &self.layout.tasks;
            exec.resident_mb = self.platform.memory_model.combine(exec.resident.iter().map(|&t| tasks[t].memory_mb));
        }
        let span = exec.spans.len();
        exec.spans.push(TaskSpan {
            task: spec.id.clone(),
            start_ms: exec.now,
            end_ms: exec.now,
            memory_mb: spec.memory_mb,
        });
        exec.cursor = Some(Cursor { task, next_call: 0, span, origin_call });
        if let Some(limit) = self.platform.limit_max_memory_mb {
            if exec.resident_mb > limit {
                exec.failure = Some(Failure::OutOfMemory);
                return;
            }
        }
        let mut local = spec.compute.sample(&mut self.rng);
        for ext in &spec.external {
            for _ in 0..ext.count {
                local += ext.latency_ms.sample(&mut self.rng);
            }
        }
        exec.now += local;
        check_deadline(exec);
    }

    fn finish(&mut self, id: u64) {
        let exec = self.execs.remove(&id).expect("finishing a live execution");
        let inst = &mut self.instances[exec.instance];
        inst.busy = false;
        inst.last_used = exec.now;
        if inst.generation == self.generation {
            self.idle[inst.group].push(exec.instance);
        }

        let failed = exec.failure.is_some();
        let end = exec.now;
        let record = ExecutionRecord {
            execution_id: exec.id,
            invocation_id: exec.invocation,
            parent_execution: exec.parent,
            function_id: self.layout.labels[exec.group].clone(),
            entry_task: self.layout.tasks[exec.entry_task].id.clone(),
            cold_start: exec.cold,
            arrival_ms: exec.arrival,
            start_ms: exec.start,
            end_ms: end,
            billed_ms: self.platform.billed_ms(end - exec.start),
            memory_mb: self.platform.function_memory_mb,
            resident_memory_mb: exec.resident_mb,
            failed,
            failure: exec.failure,
            tasks: exec.spans,
            calls: exec.calls,
        };
        self.finished.push(record);

        if let Some((parent, call)) = exec.waiter {
            let Some(p) = self.execs.get_mut(&parent) else { return };
            if p.state != (State::Blocked { call }) {
                return;
            }
            p.now = end;
            p.state = State::Running;
            p.calls[call].completed_at_ms = Some(end);
            if failed {
                p.calls[call].failed = true;
                p.failure = Some(Failure::CalleeFailed);
            }
            self.advance(parent);
        }
    }
}

/// Caps the execution at its deadline. Returns true if it timed out.
fn check_deadline(exec: &mut Exec) -> bool {
    match exec.deadline {
        Some(d) if exec.now > d => {
            exec.now = d;
            exec.failure = Some(Failure::Timeout);
            true
        }
        _ => false,
    }
}
