//! TOML application and platform files.
//!
//! ```toml
//! name = "tree"
//! entry = "A"
//!
//! [task.A]
//! compute_ms = 50                      # or { lognormal = [mu, sigma] }
//! memory_mb = 64                       # optional, default 64
//! external_calls = [{ latency_ms = 20, count = 1 }]
//! calls = [
//!     { target = "B", mode = "sync" },
//!     { target = "C", mode = "async", probability = 0.5 },
//! ]
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;
use std::path::Path;

use fusionsim_core::model::{CallMode, TaskId};
use fusionsim_core::simkernel::PlatformConfig;
use fusionsim_core::workloads::{builtin_app, ApplicationSpec, CallSpec, DurationDist, ExternalCall, TaskSpec};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::error::CliError;

#[derive(Debug, Error, PartialEq)]
pub enum AppFileError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {message}")]
    Invalid { line: usize, message: String },
}

impl AppFileError {
    pub fn line(&self) -> usize {
        match self {
            AppFileError::Parse { line, .. } | AppFileError::Invalid { line, .. } => *line,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AppFile {
    name: Spanned<String>,
    entry: Spanned<String>,
    #[serde(default)]
    task: BTreeMap<Spanned<String>, Spanned<TaskFile>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    compute_ms: DurationDist,
    #[serde(default = "default_memory")]
    memory_mb: u32,
    #[serde(default)]
    external_calls: Vec<ExternalCall>,
    #[serde(default)]
    calls: Vec<CallFile>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CallFile {
    target: String,
    mode: CallMode,
    #[serde(default = "default_probability")]
    probability: f64,
}

fn default_memory() -> u32 {
    64
}

fn default_probability() -> f64 {
    1.0
}

fn line_of(text: &str, span: Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

pub fn parse_app_spec(text: &str) -> Result<ApplicationSpec, AppFileError> {
    let file: AppFile = toml::from_str(text).map_err(|e| AppFileError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s)),
        message: e.message().trim().to_string(),
    })?;

    let mut lines: BTreeMap<TaskId, usize> = BTreeMap::new();
    let mut tasks = Vec::new();
    for (key, spanned) in file.task {
        let line = line_of(text, key.span());
        let id =
            TaskId::new(key.get_ref().as_str()).map_err(|e| AppFileError::Invalid { line, message: e.to_string() })?;
        let t = spanned.into_inner();
        let mut calls = Vec::with_capacity(t.calls.len());
        for c in t.calls {
            let target = TaskId::new(c.target.as_str())
                .map_err(|e| AppFileError::Invalid { line, message: format!("task {id}: {e}") })?;
            calls.push(CallSpec { target, mode: c.mode, probability: c.probability });
        }
        lines.insert(id.clone(), line);
        tasks.push(TaskSpec {
            id,
            compute_ms: t.compute_ms,
            memory_mb: t.memory_mb,
            external_calls: t.external_calls,
            calls,
        });
    }

    let entry_line = line_of(text, file.entry.span());
    let entry = TaskId::new(file.entry.get_ref().as_str())
        .map_err(|e| AppFileError::Invalid { line: entry_line, message: format!("entry: {e}") })?;
    ApplicationSpec::new(file.name.into_inner(), entry, tasks).map_err(|e| {
        let line = match &e {
            fusionsim_core::workloads::AppError::MissingEntry(_) | fusionsim_core::workloads::AppError::NoTasks => {
                entry_line
            }
            other => other.task().and_then(|t| lines.get(t).copied()).unwrap_or(entry_line),
        };
        AppFileError::Invalid { line, message: e.to_string() }
    })
}

fn fmt_dist(d: &DurationDist) -> String {
    match d {
        DurationDist::Constant(ms) => format!("{ms}"),
        DurationDist::LogNormal { mu, sigma } => format!("{{ lognormal = [{mu}, {sigma}] }}"),
    }
}

/// Writes `app` in the file format read by [`parse_app_spec`].
pub fn render_app_spec(app: &ApplicationSpec) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "name = {:?}", app.name());
    let _ = writeln!(out, "entry = {:?}", app.entry().as_str());
    for t in app.tasks() {
        let _ = writeln!(out, "\n[task.{}]", t.id);
        let _ = writeln!(out, "compute_ms = {}", fmt_dist(&t.compute_ms));
        let _ = writeln!(out, "memory_mb = {}", t.memory_mb);
        if !t.external_calls.is_empty() {
            let items: Vec<String> = t
                .external_calls
                .iter()
                .map(|e| format!("{{ latency_ms = {}, count = {} }}", fmt_dist(&e.latency_ms), e.count))
                .collect();
            let _ = writeln!(out, "external_calls = [{}]", items.join(", "));
        }
        if !t.calls.is_empty() {
            out.push_str("calls = [\n");
            for c in &t.calls {
                let mode = match c.mode {
                    CallMode::Sync => "sync",
                    CallMode::Async => "async",
                };
                if c.probability == 1.0 {
                    let _ = writeln!(out, "    {{ target = {:?}, mode = \"{mode}\" }},", c.target.as_str());
                } else {
                    let _ = writeln!(
                        out,
                        "    {{ target = {:?}, mode = \"{mode}\", probability = {} }},",
                        c.target.as_str(),
                        c.probability
                    );
                }
            }
            out.push_str("]\n");
        }
    }
    out
}

/// A built-in application name or a path to an application file.
pub fn resolve_app(name_or_path: &str) -> Result<ApplicationSpec, CliError> {
    let path = Path::new(name_or_path);
    if path.extension().is_some_and(|e| e == "toml") || path.exists() {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        return parse_app_spec(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())));
    }
    builtin_app(name_or_path).map_err(|e| CliError::Validation(e.to_string()))
}

pub fn parse_platform(text: &str) -> Result<PlatformConfig, AppFileError> {
    let platform: PlatformConfig = toml::from_str(text).map_err(|e| AppFileError::Parse {
        line: e.span().map_or(1, |s| line_of(text, s)),
        message: e.message().trim().to_string(),
    })?;
    platform.validate().map_err(|e| AppFileError::Invalid { line: 1, message: e.to_string() })?;
    Ok(platform)
}

pub fn load_platform(path: Option<&Path>) -> Result<PlatformConfig, CliError> {
    match path {
        None => Ok(PlatformConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_platform(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_round_trip() {
        for name in ["tree", "iot"] {
            let app = builtin_app(name).unwrap();
            assert_eq!(parse_app_spec(&render_app_spec(&app)).unwrap(), app);
        }
    }

    #[test]
    fn shipped_files_equal_builtins() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("apps");
        for name in ["tree", "iot"] {
            let text = std::fs::read_to_string(dir.join(format!("{name}.toml"))).unwrap();
            assert_eq!(parse_app_spec(&text).unwrap(), builtin_app(name).unwrap(), "{name}");
        }
    }

    #[test]
    fn dangling_target_is_named_with_line() {
        let text =
            "name = \"x\"\nentry = \"A\"\n\n[task.A]\ncompute_ms = 1\ncalls = [{ target = \"Z\", mode = \"sync\" }]\n";
        let err = parse_app_spec(text).unwrap_err();
        assert_eq!(err.line(), 4);
        assert!(err.to_string().contains('Z'), "{err}");
    }

    #[test]
    fn cycle_rejected() {
        let text = "name = \"x\"\nentry = \"A\"\n[task.A]\ncompute_ms = 1\ncalls = [{ target = \"B\", mode = \"sync\" }]\n[task.B]\ncompute_ms = 1\ncalls = [{ target = \"A\", mode = \"async\" }]\n";
        let err = parse_app_spec(text).unwrap_err();
        assert!(err.to_string().contains("cycle"), "{err}");
    }

    #[test]
    fn syntax_errors_cite_lines() {
        let text = "name = \"x\"\nentry = \"A\"\n[task.A]\ncompute_ms = = 1\n";
        let err = parse_app_spec(text).unwrap_err();
        assert!(matches!(err, AppFileError::Parse { line: 4, .. }), "{err:?}");

        let text = "name = \"x\"\nentry = \"A\"\n[task.A]\ncompute_ms = 1\nspeed = 3\n";
        let err = parse_app_spec(text).unwrap_err();
        assert_eq!(err.line(), 5, "{err}");
    }

    #[test]
    fn missing_entry_points_at_entry() {
        let text = "name = \"x\"\nentry = \"Q\"\n[task.A]\ncompute_ms = 1\n";
        let err = parse_app_spec(text).unwrap_err();
        assert_eq!(err.line(), 2);
        assert!(err.to_string().contains('Q'));
    }

    #[test]
    fn lognormal_and_defaults() {
        let text = "name = \"x\"\nentry = \"A\"\n[task.A]\ncompute_ms = { lognormal = [3.0, 0.5] }\n";
        let app = parse_app_spec(text).unwrap();
        let a = app.task(app.entry()).unwrap();
        assert_eq!(a.compute_ms, DurationDist::LogNormal { mu: 3.0, sigma: 0.5 });
        assert_eq!(a.memory_mb, 64);
    }

    #[test]
    fn platform_files() {
        let p = parse_platform("cold_start_ms = 500\nbilling_granularity_ms = 100\n").unwrap();
        assert_eq!(p.cold_start_ms, DurationDist::Constant(500.0));
        assert_eq!(p.billing_granularity_ms, 100);
        assert_eq!(p.handler_overhead_warm_ms, 1.3);
        assert!(parse_platform("turbo = true\n").is_err());
        assert!(parse_platform("billing_granularity_ms = 0\n").is_err());
    }
}
