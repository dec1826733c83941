//! Call-graph inference from traces.
//!
//! The optimizer never looks at the application definition; it works on the
//! graph observed here.

use alloc::collections::BTreeMap;
use alloc::string::String;
use core::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CallMode, TaskId};
use crate::trace::TraceLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeStats {
    pub task: TaskId,
    pub invocations: u64,
    pub mean_duration_ms: f64,
    pub mean_memory_mb: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CallEdge {
    pub caller: TaskId,
    pub callee: TaskId,
    pub mode: CallMode,
    pub count: u64,
    pub sync_count: u64,
    pub async_count: u64,
    /// Mean issue-to-completion time over calls whose completion was observed.
    pub mean_callee_latency_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CallGraph {
    nodes: BTreeMap<TaskId, NodeStats>,
    edges: BTreeMap<(TaskId, TaskId), CallEdge>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("no traces given")]
    Empty,
    #[error("inconsistent application: traces of {0} and {1}")]
    InconsistentApplication(String, String),
}

/// Any observed synchronous call makes the edge synchronous.
pub fn classify_edge(sync_count: u64, async_count: u64) -> CallMode {
    debug_assert!(sync_count + async_count >= 1);
    if sync_count >= 1 {
        CallMode::Sync
    } else {
        CallMode::Async
    }
}

#[derive(Clone, Debug, Default)]
struct Acc {
    n: u64,
    sum: f64,
}

impl Acc {
    fn add(&mut self, v: f64) {
        self.n += 1;
        self.sum += v;
    }
    fn mean(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.sum / self.n as f64
        }
    }
}

/// Accumulates trace statistics one log at a time.
#[derive(Clone, Debug, Default)]
pub struct GraphBuilder {
    app: Option<String>,
    durations: BTreeMap<TaskId, (Acc, Acc)>,
    calls: BTreeMap<(TaskId, TaskId), (u64, u64, Acc)>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, log: &TraceLog) -> Result<(), GraphError> {
        match &self.app {
            None => self.app = Some(log.app_name.clone()),
            Some(a) if *a != log.app_name => {
                return Err(GraphError::InconsistentApplication(a.clone(), log.app_name.clone()));
            }
            Some(_) => {}
        }
        for r in log.records() {
            for span in &r.tasks {
                let (d, m) = self.durations.entry(span.task.clone()).or_default();
                d.add(span.duration().as_ms());
                m.add(span.memory_mb as f64);
            }
            for c in &r.calls {
                let e = self.calls.entry((c.caller.clone(), c.callee.clone())).or_default();
                match c.mode {
                    CallMode::Sync => e.0 += 1,
                    CallMode::Async => e.1 += 1,
                }
                if let Some(done) = c.completed_at_ms {
                    e.2.add(done.saturating_sub(c.issued_at_ms).as_ms());
                }
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<CallGraph, GraphError> {
        if self.app.is_none() {
            return Err(GraphError::Empty);
        }
        let nodes = self.durations.iter().map(|(task, (d, m))| NodeStats {
            task: task.clone(),
            invocations: d.n,
            mean_duration_ms: d.mean(),
            mean_memory_mb: m.mean(),
        });
        let edges = self.calls.iter().map(|((caller, callee), (sync_count, async_count, latency))| CallEdge {
            caller: caller.clone(),
            callee: callee.clone(),
            mode: classify_edge(*sync_count, *async_count),
            count: sync_count + async_count,
            sync_count: *sync_count,
            async_count: *async_count,
            mean_callee_latency_ms: latency.mean(),
        });
        Ok(CallGraph::from_parts(nodes, edges))
    }
}

pub fn infer_graph<'a>(logs: impl IntoIterator<Item = &'a TraceLog>) -> Result<CallGraph, GraphError> {
    let mut builder = GraphBuilder::new();
    for log in logs {
        builder.add(log)?;
    }
    builder.build()
}

impl CallGraph {
    /// Builds a graph directly from nodes and edges; node stats default to zero.
    pub fn from_parts(nodes: impl IntoIterator<Item = NodeStats>, edges: impl IntoIterator<Item = CallEdge>) -> Self {
        let mut g = CallGraph::default();
        for n in nodes {
            g.nodes.insert(n.task.clone(), n);
        }
        for e in edges {
            for t in [&e.caller, &e.callee] {
                g.nodes.entry(t.clone()).or_insert_with(|| NodeStats {
                    task: t.clone(),
                    invocations: 0,
                    mean_duration_ms: 0.0,
                    mean_memory_mb: 0.0,
                });
            }
            g.edges.insert((e.caller.clone(), e.callee.clone()), e);
        }
        g
    }

    pub fn node(&self, task: &TaskId) -> Option<&NodeStats> {
        self.nodes.get(task)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeStats> {
        self.nodes.values()
    }

    /// Edges ordered by `(caller, callee)`.
    pub fn edges(&self) -> impl Iterator<Item = &CallEdge> {
        self.edges.values()
    }

    pub fn edge(&self, caller: &TaskId, callee: &TaskId) -> Option<&CallEdge> {
        self.edges.get(&(caller.clone(), callee.clone()))
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
}

/// Graphviz text. Sync edges solid, async dashed; nodes carry their mean
/// duration. Output order is alphabetical.
pub fn to_dot(graph: &CallGraph) -> String {
    let mut out = String::from("digraph callgraph {\n    node [shape=box];\n");
    for n in graph.nodes() {
        let _ = writeln!(out, "    {} [label=\"{}\\n{:.1} ms\"];", n.task, n.task, n.mean_duration_ms);
    }
    for e in graph.edges() {
        let style = match e.mode {
            CallMode::Sync => "solid",
            CallMode::Async => "dashed",
        };
        let _ = writeln!(out, "    {} -> {} [style={}, label=\"{}\"];", e.caller, e.callee, style, e.count);
    }
    out.push_str("}\n");
    out
}

/// Tasks adjacent to `task` through any edge, with the edge mode.
pub fn incident<'g>(graph: &'g CallGraph, task: &'g TaskId) -> impl Iterator<Item = (&'g TaskId, CallMode)> + 'g {
    graph.edges().filter_map(move |e| {
        if &e.caller == task {
            Some((&e.callee, e.mode))
        } else if &e.callee == task {
            Some((&e.caller, e.mode))
        } else {
            None
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionSetup;
    use crate::simkernel::{run_simulation, PlatformConfig};
    use crate::workloads::{builtin_app, ApplicationSpec, DurationDist, TaskSpec, Workload};
    use alloc::vec;

    fn t(s: &str) -> TaskId {
        TaskId::new(s).unwrap()
    }

    fn tree_trace(setup: &str) -> TraceLog {
        let app = builtin_app("tree").unwrap();
        run_simulation(&app, &setup.parse().unwrap(), &Workload::steady(1.0, 20, 0), &PlatformConfig::default())
            .unwrap()
    }

    #[test]
    fn tree_topology_from_any_setup() {
        let app = builtin_app("tree").unwrap();
        for s in ["(A)-(B)-(C)-(D)-(E)-(F)-(G)", "(A,B,D,E)-(C)-(F)-(G)", "(A,B,C,D,E,F,G)", "(A,C)-(B,G)-(D)-(E,F)"] {
            let g = infer_graph([&tree_trace(s)]).unwrap();
            assert_eq!(g.node_count(), 7, "{s}");
            assert_eq!(g.edge_count(), 6, "{s}");
            for (caller, c) in app.edges() {
                let e = g.edge(caller, &c.target).unwrap();
                assert_eq!(e.mode, c.mode);
                assert_eq!(e.count, 20);
            }
        }
    }

    #[test]
    fn node_durations_are_task_spans() {
        let g = infer_graph([&tree_trace("(A,B,C,D,E,F,G)")]).unwrap();
        assert_eq!(g.node(&t("D")).unwrap().mean_duration_ms, 700.0);
        assert_eq!(g.node(&t("A")).unwrap().mean_duration_ms, 50.0);
        assert_eq!(g.node(&t("A")).unwrap().mean_memory_mb, 64.0);
        assert_eq!(g.node(&t("A")).unwrap().invocations, 20);
    }

    #[test]
    fn observed_only() {
        let mut a = TaskSpec::new(t("A"), DurationDist::Constant(1.0)).call(t("B"), CallMode::Sync);
        a.calls[0].probability = 1e-9;
        let app =
            ApplicationSpec::new("p", t("A"), vec![a, TaskSpec::new(t("B"), DurationDist::Constant(1.0))]).unwrap();
        let s: FusionSetup = "(A)-(B)".parse().unwrap();
        let log = run_simulation(&app, &s, &Workload::steady(1.0, 5, 0), &PlatformConfig::default()).unwrap();
        let g = infer_graph([&log]).unwrap();
        assert!(g.node(&t("B")).is_none());
        assert_eq!(g.edge_count(), 0);
    }

    #[test]
    fn single_sync_call() {
        let app = ApplicationSpec::new(
            "p",
            t("A"),
            vec![
                TaskSpec::new(t("A"), DurationDist::Constant(1.0)).call(t("B"), CallMode::Sync),
                TaskSpec::new(t("B"), DurationDist::Constant(1.0)),
            ],
        )
        .unwrap();
        let log =
            run_simulation(&app, &"(A)-(B)".parse().unwrap(), &Workload::steady(1.0, 1, 0), &PlatformConfig::default())
                .unwrap();
        let g = infer_graph([&log]).unwrap();
        let e = g.edge(&t("A"), &t("B")).unwrap();
        assert_eq!((e.sync_count, e.async_count, e.mode), (1, 0, CallMode::Sync));
        // first remote call 1100 ms, network 50 ms, cold B init 1000 ms, handler 36.6 ms, compute 1 ms
        assert!((e.mean_callee_latency_ms - 2187.6).abs() < 1e-9, "{}", e.mean_callee_latency_ms);
    }

    #[test]
    fn duplicated_logs_double_counts() {
        let log = tree_trace("(A)-(B)-(C)-(D)-(E)-(F)-(G)");
        let once = infer_graph([&log]).unwrap();
        let twice = infer_graph([&log, &log]).unwrap();
        for (a, b) in once.edges().zip(twice.edges()) {
            assert_eq!(b.count, 2 * a.count);
            assert_eq!(a.mode, b.mode);
        }
    }

    #[test]
    fn errors() {
        assert_eq!(infer_graph(core::iter::empty::<&TraceLog>()), Err(GraphError::Empty));
        let tree = tree_trace("(A,B,C,D,E,F,G)");
        let iot = run_simulation(
            &builtin_app("iot").unwrap(),
            &"(AS,CA,CS,CSA,CSL,CT,CW,DJ,I,SE)".parse().unwrap(),
            &Workload::steady(1.0, 1, 0),
            &PlatformConfig::default(),
        )
        .unwrap();
        assert!(matches!(infer_graph([&tree, &iot]), Err(GraphError::InconsistentApplication(..))));
    }

    #[test]
    fn classification() {
        assert_eq!(classify_edge(3, 0), CallMode::Sync);
        assert_eq!(classify_edge(0, 5), CallMode::Async);
        assert_eq!(classify_edge(1, 99), CallMode::Sync);
    }

    #[test]
    fn dot_output() {
        let g = CallGraph::from_parts(
            [],
            [CallEdge {
                caller: t("A"),
                callee: t("B"),
                mode: CallMode::Sync,
                count: 1,
                sync_count: 1,
                async_count: 0,
                mean_callee_latency_ms: 0.0,
            }],
        );
        let dot = to_dot(&g);
        assert!(dot.contains("A -> B [style=solid"));
        assert_eq!(dot, to_dot(&g));

        let nodes_only = CallGraph::from_parts(
            [NodeStats { task: t("X"), invocations: 1, mean_duration_ms: 2.5, mean_memory_mb: 64.0 }],
            [],
        );
        let dot = to_dot(&nodes_only);
        assert!(dot.contains("X [label=\"X\\n2.5 ms\"]"));
        assert!(!dot.contains("->"));

        let g = infer_graph([&tree_trace("(A)-(B)-(C)-(D)-(E)-(F)-(G)")]).unwrap();
        let dot = to_dot(&g);
        assert!(dot.contains("A -> C [style=dashed"));
        let a = dot.find("    A [").unwrap();
        let g_pos = dot.find("    G [").unwrap();
        assert!(a < g_pos);
    }
}
