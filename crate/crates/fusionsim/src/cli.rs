//! Command-line interface.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fusionsim_core::callgraph::{to_dot, GraphBuilder};
use fusionsim_core::controller::{run_loop_with, Csp1Config, LoopOptions, OptimizationReport};
use fusionsim_core::model::FusionSetup;
use fusionsim_core::optimizer::{Objective, OptimizerConfig};
use fusionsim_core::simkernel::run_simulation;
use fusionsim_core::trace::{ecdf, ecdf_export, summarize, EcdfMetric, EcdfRow};
use fusionsim_core::workloads::Workload;

use crate::appfile::{load_platform, resolve_app};
use crate::error::CliError;
use crate::export::{
    report_table, setup_file_stem, to_json_pretty, write_ecdf_csv, write_report_csv, write_summary_csv,
};
use crate::tracefile::{load_trace, save_trace};

pub const OUT_ENV: &str = "FUSIONSIM_OUT";

#[derive(Debug, Parser)]
#[command(name = "fusionsim", version, about = "Simulate and optimize fused serverless deployments")]
pub struct Cli {
    /// Seed for workloads, simulation and sampling decisions.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Output directory (overridden by FUSIONSIM_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Format of summary and report files.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Suppress progress lines on standard error.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one workload against one fusion setup.
    Simulate {
        /// Built-in application (tree, iot) or path to an application file.
        #[arg(long)]
        app: String,
        /// Fusion setup, e.g. "(A,B)-(C)".
        #[arg(long)]
        setup: String,
        /// steady:<rate>,<n> or coldstorm:<n>.
        #[arg(long)]
        workload: String,
        /// Platform configuration file.
        #[arg(long)]
        platform: Option<PathBuf>,
    },
    /// Run the feedback loop from the singleton setup until it converges.
    Optimize {
        /// Built-in application (tree, iot) or path to an application file.
        #[arg(long)]
        app: String,
        /// median_rr, avg_rr, p99_rr, avg_billed or weighted:<w_latency>,<w_cost>.
        #[arg(long, default_value = "median_rr")]
        objective: String,
        /// Arrival pattern; its request count is the window size unless --csp1 is given.
        #[arg(long)]
        workload: String,
        /// CSP-1 parameters as i,f,delta,window.
        #[arg(long)]
        csp1: Option<String>,
        /// Platform configuration file.
        #[arg(long)]
        platform: Option<PathBuf>,
        /// Upper bound on observation windows.
        #[arg(long, default_value_t = 500)]
        max_windows: usize,
        /// Invocations a setup needs before it is judged.
        #[arg(long, default_value_t = 50)]
        min_samples: usize,
        /// Split the heaviest task out of groups that break a platform limit.
        #[arg(long)]
        force_split_on_limit: bool,
    },
    /// Infer the call graph from trace files and write it as DOT.
    Graph {
        #[arg(long, num_args = 0..)]
        traces: Vec<PathBuf>,
        /// Output path; defaults to callgraph.dot in the output directory.
        #[arg(long)]
        dot: Option<PathBuf>,
    },
    /// Print the setups of an optimization report.
    Report {
        #[arg(long)]
        report: PathBuf,
    },
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).format_timestamp(None).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn out_dir(cli: &Cli) -> PathBuf {
    std::env::var_os(OUT_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .or_else(|| cli.out.clone())
        .unwrap_or_else(|| PathBuf::from("fusionsim-out"))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn ecdf_bytes(rows: &[EcdfRow]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_ecdf_csv(rows, &mut buf).expect("in-memory csv");
    buf
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Simulate { app, setup, workload, platform } => {
            simulate(cli, app, setup, workload, platform.as_deref())
        }
        Command::Optimize {
            app,
            objective,
            workload,
            csp1,
            platform,
            max_windows,
            min_samples,
            force_split_on_limit,
        } => {
            let options = LoopOptions {
                max_windows: *max_windows,
                degradation: None,
                optimizer: OptimizerConfig { min_samples: *min_samples, force_split_on_limit: *force_split_on_limit },
            };
            optimize(cli, app, objective, workload, csp1.as_deref(), platform.as_deref(), &options)
        }
        Command::Graph { traces, dot } => graph(cli, traces, dot.as_deref()),
        Command::Report { report } => report_cmd(cli, report),
    }
}

fn simulate(cli: &Cli, app: &str, setup: &str, workload: &str, platform: Option<&Path>) -> Result<(), CliError> {
    let app = resolve_app(app)?;
    let setup: FusionSetup = setup.parse().map_err(|e| CliError::Validation(format!("setup {setup:?}: {e}")))?;
    setup.check_covers(app.task_ids()).map_err(CliError::validation)?;
    let workload = Workload::parse(workload, cli.seed).map_err(CliError::validation)?;
    let platform = load_platform(platform)?;
    let log = run_simulation(&app, &setup, &workload, &platform).map_err(CliError::validation)?;

    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    save_trace(&log, &dir.join("trace.jsonl"))?;
    let summary = summarize(&log, &platform).map_err(CliError::validation)?;
    match cli.format.unwrap_or(Format::Json) {
        Format::Json => write_file(&dir.join("summary.json"), to_json_pretty(&summary).as_bytes())?,
        Format::Csv => {
            let mut buf = Vec::new();
            write_summary_csv(&summary, &mut buf).expect("in-memory csv");
            write_file(&dir.join("summary.csv"), &buf)?;
        }
    }
    for (metric, name) in [(EcdfMetric::Rr, "ecdf_rr.csv"), (EcdfMetric::Billed, "ecdf_billed.csv")] {
        let rows = ecdf_export(&log, metric, &platform).map_err(CliError::validation)?;
        write_file(&dir.join(name), &ecdf_bytes(&rows))?;
    }
    println!(
        "{}: {} invocations, rr_med {:.1} ms, rr_avg {:.1} ms, billed_avg {:.1} ms, {} cold starts, {} failed",
        summary.setup,
        summary.n_invocations,
        summary.rr_med,
        summary.rr_avg,
        summary.billed_avg,
        summary.cold_start_count,
        summary.failed_count
    );
    Ok(())
}

fn optimize(
    cli: &Cli,
    app: &str,
    objective: &str,
    workload: &str,
    csp1: Option<&str>,
    platform: Option<&Path>,
    options: &LoopOptions,
) -> Result<(), CliError> {
    let app = resolve_app(app)?;
    let objective: Objective = objective.parse().map_err(CliError::validation)?;
    let workload = Workload::parse(workload, cli.seed).map_err(CliError::validation)?;
    let csp1 = match csp1 {
        Some(text) => Csp1Config::parse(text).map_err(CliError::validation)?,
        None => Csp1Config { window_invocations: workload.total_requests(), ..Csp1Config::default() },
    };
    let platform = load_platform(platform)?;
    let quiet = cli.quiet;
    let report = run_loop_with(&app, &platform, &workload, &objective, &csp1, cli.seed, options, &mut |w| {
        if !quiet {
            eprintln!("{w}");
        }
    })
    .map_err(CliError::validation)?;

    let dir = out_dir(cli);
    ensure_dir(&dir)?;
    write_file(&dir.join("report.json"), to_json_pretty(&report).as_bytes())?;
    if cli.format == Some(Format::Csv) {
        let mut buf = Vec::new();
        write_report_csv(&report, &mut buf).expect("in-memory csv");
        write_file(&dir.join("report.csv"), &buf)?;
    }
    let ecdf_dir = dir.join("ecdf");
    ensure_dir(&ecdf_dir)?;
    for entry in &report.entries {
        let stem = setup_file_stem(&entry.setup.to_string());
        let ok: Vec<_> = entry.outcomes.iter().filter(|o| o.succeeded()).collect();
        let rr: Vec<f64> = ok.iter().filter_map(|o| o.rr_ms).collect();
        let billed: Vec<f64> = ok.iter().map(|o| o.billed_ms as f64).collect();
        write_file(&ecdf_dir.join(format!("{stem}_rr.csv")), &ecdf_bytes(&ecdf(&rr)))?;
        write_file(&ecdf_dir.join(format!("{stem}_billed.csv")), &ecdf_bytes(&ecdf(&billed)))?;
    }
    print!("{}", report_table(&report));
    Ok(())
}

fn graph(cli: &Cli, traces: &[PathBuf], dot: Option<&Path>) -> Result<(), CliError> {
    if traces.is_empty() {
        return Err(CliError::Validation("no trace files given (use --traces <path>...)".into()));
    }
    let mut builder = GraphBuilder::new();
    let mut loaded = 0;
    for path in traces {
        if let Some(log) = load_trace(path)? {
            builder.add(&log).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
            loaded += 1;
        }
    }
    if loaded == 0 {
        return Err(CliError::Validation("all trace files are empty".into()));
    }
    let graph = builder.build().map_err(CliError::validation)?;
    let path = match dot {
        Some(p) => p.to_path_buf(),
        None => {
            let dir = out_dir(cli);
            ensure_dir(&dir)?;
            dir.join("callgraph.dot")
        }
    };
    write_file(&path, to_dot(&graph).as_bytes())?;
    println!("{} nodes, {} edges -> {}", graph.node_count(), graph.edge_count(), path.display());
    Ok(())
}

fn report_cmd(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::Validation(format!("{}: empty report", path.display())));
    }
    let report: OptimizationReport =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let written = match cli.format {
        Some(Format::Csv) => write_report_csv(&report, &mut out).map_err(std::io::Error::from),
        Some(Format::Json) => out.write_all(to_json_pretty(&crate::export::report_rows(&report)).as_bytes()),
        None => out.write_all(report_table(&report).as_bytes()),
    };
    written.map_err(|e| CliError::io(Path::new("<stdout>"), e))
}
