use std::path::Path;
use std::process::{Command, Output};

use fusionsim::export::read_report_csv;
use serde_json::Value;
use tempfile::TempDir;

const TREE_FINAL: &str = "(A,B,D,E)-(C)-(F)-(G)";
const IOT_FINAL: &str = "(AS)-(CA,DJ)-(CS,CSA,CSL)-(CT)-(CW,I,SE)";

fn fusionsim(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fusionsim"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .arg("--quiet")
        .env_remove("FUSIONSIM_OUT")
        .output()
        .expect("spawn fusionsim")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_writes_artifacts() {
    let tmp = TempDir::new().unwrap();
    let o = fusionsim(tmp.path(), &["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "steady:2,50"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = read_json(&tmp.path().join("summary.json"));
    assert_eq!(summary["n_invocations"], 50);
    assert_eq!(summary["setup"], TREE_FINAL);
    let ecdf = std::fs::read_to_string(tmp.path().join("ecdf_rr.csv")).unwrap();
    assert_eq!(ecdf.lines().next(), Some("value_ms,fraction"));
    assert!(ecdf.trim_end().ends_with(",1") || ecdf.trim_end().ends_with(",1.0"), "{ecdf}");
    assert!(tmp.path().join("trace.jsonl").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("50 invocations"));
}

#[test]
fn simulate_csv_summary() {
    let tmp = TempDir::new().unwrap();
    let o = fusionsim(
        tmp.path(),
        &["simulate", "--app", "iot", "--setup", IOT_FINAL, "--workload", "coldstorm:20", "--format", "csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut rdr = csv::Reader::from_path(tmp.path().join("summary.csv")).unwrap();
    assert!(rdr.headers().unwrap().iter().any(|h| h == "rr_med"));
    assert_eq!(rdr.records().count(), 1);
    assert!(!tmp.path().join("summary.json").exists());
}

#[test]
fn validation_errors_exit_2() {
    let tmp = TempDir::new().unwrap();
    let cases: &[&[&str]] = &[
        &["simulate", "--app", "tree", "--setup", "(A,B)-(C)-(D)-(E)-(F)-(X)", "--workload", "steady:1,5"],
        &["simulate", "--app", "tree", "--setup", "(A,B)-(A)", "--workload", "steady:1,5"],
        &["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "burst:5"],
        &["simulate", "--app", "nosuchapp", "--setup", "(A)", "--workload", "steady:1,5"],
        &["optimize", "--app", "tree", "--objective", "fastest", "--workload", "steady:1,100"],
        &["optimize", "--app", "tree", "--workload", "steady:1,100", "--csp1", "5,2.0,0.1,100"],
        &["graph"],
        &["simulate", "--app", "tree"],
        &["frobnicate"],
    ];
    for args in cases {
        let o = fusionsim(tmp.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
        assert!(!stderr(&o).is_empty(), "{args:?}");
    }
    let o = fusionsim(tmp.path(), cases[0]);
    assert!(stderr(&o).contains('X'), "{}", stderr(&o));
}

#[test]
fn io_errors_exit_1() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope.toml");
    let missing = missing.to_str().unwrap();
    let o = fusionsim(
        tmp.path(),
        &["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "steady:1,5", "--platform", missing],
    );
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = fusionsim(tmp.path(), &["simulate", "--app", missing, "--setup", "(A)", "--workload", "steady:1,5"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let o = fusionsim(tmp.path(), &["graph", "--traces", missing]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
}

#[test]
fn invalid_app_file_cites_line() {
    let tmp = TempDir::new().unwrap();
    let app = tmp.path().join("bad.toml");
    std::fs::write(
        &app,
        "name = \"x\"\nentry = \"A\"\n\n[task.A]\ncompute_ms = 1\ncalls = [{ target = \"Z\", mode = \"sync\" }]\n",
    )
    .unwrap();
    let o = fusionsim(
        tmp.path(),
        &["simulate", "--app", app.to_str().unwrap(), "--setup", "(A)", "--workload", "steady:1,5"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));
}

#[test]
fn env_overrides_out() {
    let flag = TempDir::new().unwrap();
    let env = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_fusionsim"))
        .args(["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "steady:1,5", "--out"])
        .arg(flag.path())
        .env("FUSIONSIM_OUT", env.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(env.path().join("summary.json").exists());
    assert!(!flag.path().join("summary.json").exists());
}

#[test]
fn graph_from_traces() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        code(&fusionsim(&a, &["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "steady:1,20"])),
        0
    );
    let singleton = "(A)-(B)-(C)-(D)-(E)-(F)-(G)";
    assert_eq!(
        code(&fusionsim(&b, &["simulate", "--app", "tree", "--setup", singleton, "--workload", "steady:1,20"])),
        0
    );
    let dot = tmp.path().join("g.dot");
    let o = fusionsim(
        tmp.path(),
        &[
            "graph",
            "--traces",
            a.join("trace.jsonl").to_str().unwrap(),
            b.join("trace.jsonl").to_str().unwrap(),
            "--dot",
            dot.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = std::fs::read_to_string(&dot).unwrap();
    assert!(text.starts_with("digraph callgraph {"));
    assert_eq!(text.matches(" -> ").count(), 6);
    assert_eq!(text.matches("[label=\"").count(), 7);
    assert_eq!(text.matches("style=solid").count(), 3);
    assert_eq!(text.matches("style=dashed").count(), 3);

    let o = fusionsim(tmp.path(), &["graph", "--traces", a.join("trace.jsonl").to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(tmp.path().join("callgraph.dot").exists());
}

#[test]
fn graph_rejects_mixed_and_empty_traces() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(
        code(&fusionsim(&a, &["simulate", "--app", "tree", "--setup", TREE_FINAL, "--workload", "steady:1,5"])),
        0
    );
    assert_eq!(
        code(&fusionsim(&b, &["simulate", "--app", "iot", "--setup", IOT_FINAL, "--workload", "steady:1,5"])),
        0
    );
    let o = fusionsim(
        tmp.path(),
        &["graph", "--traces", a.join("trace.jsonl").to_str().unwrap(), b.join("trace.jsonl").to_str().unwrap()],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("inconsistent application"), "{}", stderr(&o));

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let o = fusionsim(tmp.path(), &["graph", "--traces", empty.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));

    let truncated = tmp.path().join("trunc.jsonl");
    let full = std::fs::read_to_string(a.join("trace.jsonl")).unwrap();
    std::fs::write(&truncated, &full[..full.len() - 10]).unwrap();
    let o = fusionsim(tmp.path(), &["graph", "--traces", truncated.to_str().unwrap()]);
    assert_ne!(code(&o), 0);
    assert!(stderr(&o).contains("line"), "{}", stderr(&o));
}

#[test]
fn optimize_tree_and_report() {
    let tmp = TempDir::new().unwrap();
    let o = fusionsim(
        tmp.path(),
        &["optimize", "--app", "tree", "--objective", "avg_billed", "--workload", "steady:1,1000", "--format", "csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.trim_end().ends_with(&format!("final: {TREE_FINAL}")), "{stdout}");

    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["final_setup"], TREE_FINAL);
    assert_eq!(report["converged"], true);
    let entries = report["entries"].as_array().unwrap();
    assert!(entries.len() >= 4, "{}", entries.len());
    assert_eq!(entries[0]["action"], "initial");

    let rows = read_report_csv(std::fs::File::open(tmp.path().join("report.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), entries.len());
    for (row, entry) in rows.iter().zip(entries) {
        assert_eq!(row.setup, entry["setup"].as_str().unwrap());
        assert_eq!(row.rr_med, entry["metrics"]["rr_med"].as_f64().unwrap());
        assert_eq!(row.billed_avg, entry["metrics"]["billed_avg"].as_f64().unwrap());
    }
    let ecdf = tmp.path().join("ecdf").join("A+B+D+E_C_F_G_billed.csv");
    assert!(ecdf.exists(), "{}", ecdf.display());

    let report_path = tmp.path().join("report.json");
    let o = fusionsim(tmp.path(), &["report", "--report", report_path.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains(TREE_FINAL));
    let o = fusionsim(tmp.path(), &["report", "--report", report_path.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let rows_again = read_report_csv(o.stdout.as_slice()).unwrap();
    assert_eq!(rows_again, rows);
}

#[test]
fn optimize_iot_coldstorm() {
    let tmp = TempDir::new().unwrap();
    let o = fusionsim(tmp.path(), &["optimize", "--app", "iot", "--workload", "coldstorm:300"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&tmp.path().join("report.json"));
    assert_eq!(report["final_setup"], IOT_FINAL);
    assert!(!tmp.path().join("report.csv").exists());
}

#[test]
fn report_rejects_bad_input() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.json");
    std::fs::write(&empty, "").unwrap();
    let garbage = tmp.path().join("garbage.json");
    std::fs::write(&garbage, "{\"entries\": 3}").unwrap();
    for path in [empty, garbage, tmp.path().join("missing.json")] {
        let o = fusionsim(tmp.path(), &["report", "--report", path.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{}: {}", path.display(), stderr(&o));
    }
}
