//! Line-delimited JSON traces: one header object, then one execution record
//! per line.
//!
//! ```text
//! {"schema":"fusionsim-trace","version":1,"app":"tree","setup":"(A)-(B)","workload":"steady:1,10"}
//! {"execution_id":0,"invocation_id":0,...}
//! ```

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use fusionsim_core::model::FusionSetup;
use fusionsim_core::simkernel::ExecutionRecord;
use fusionsim_core::trace::TraceLog;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::CliError;

pub const TRACE_SCHEMA: &str = "fusionsim-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    schema: String,
    version: u32,
    app: String,
    setup: FusionSetup,
    workload: String,
}

#[derive(Debug, Error)]
pub enum TraceFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("not a trace file (schema {0:?})")]
    Schema(String),
    #[error("trace format version {found} is not supported (expected {TRACE_VERSION})")]
    Version { found: u32 },
}

pub fn write_trace<W: Write>(log: &TraceLog, mut w: W) -> io::Result<()> {
    let header = Header {
        schema: TRACE_SCHEMA.into(),
        version: TRACE_VERSION,
        app: log.app_name.clone(),
        setup: log.setup.clone(),
        workload: log.workload.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for r in log.records() {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

/// Reads a trace. An empty input yields `None`.
pub fn read_trace<R: BufRead>(r: R) -> Result<Option<TraceLog>, TraceFileError> {
    let mut log: Option<TraceLog> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let n = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: &dyn std::fmt::Display| TraceFileError::Line { line: n, message: e.to_string() };
        match &mut log {
            None => {
                let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| bad(&e))?;
                let schema = value.get("schema").and_then(|s| s.as_str()).unwrap_or_default();
                if schema != TRACE_SCHEMA {
                    return Err(TraceFileError::Schema(schema.into()));
                }
                let found = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
                if found != TRACE_VERSION {
                    return Err(TraceFileError::Version { found });
                }
                let h: Header = serde_json::from_value(value).map_err(|e| bad(&e))?;
                log = Some(TraceLog::new(&h.app, &h.setup, &h.workload));
            }
            Some(log) => {
                let record: ExecutionRecord = serde_json::from_str(&line).map_err(|e| bad(&e))?;
                log.append(record).map_err(|e| bad(&e))?;
            }
        }
    }
    Ok(log)
}

pub fn save_trace(log: &TraceLog, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    write_trace(log, BufWriter::new(file)).map_err(|e| CliError::io(path, e))
}

/// Loads a trace file; an empty file is reported and yields `None`.
pub fn load_trace(path: &Path) -> Result<Option<TraceLog>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    match read_trace(BufReader::new(file)) {
        Ok(None) => {
            log::warn!("{}: empty trace file", path.display());
            Ok(None)
        }
        Ok(log) => Ok(log),
        Err(TraceFileError::Io(e)) => Err(CliError::io(path, e)),
        Err(e) => Err(CliError::Validation(format!("{}: {e}", path.display()))),
    }
}
