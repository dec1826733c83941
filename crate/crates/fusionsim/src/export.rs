//! CSV and JSON exports of metrics and optimization reports.

use std::io::{Read, Write};

use fusionsim_core::controller::OptimizationReport;
use fusionsim_core::trace::{EcdfRow, MetricsSummary};
use serde::{Deserialize, Serialize};

pub fn write_ecdf_csv<W: Write>(rows: &[EcdfRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(["value_ms", "fraction"])?;
    }
    for row in rows {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_ecdf_csv<R: Read>(r: R) -> csv::Result<Vec<EcdfRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory serialization");
    s.push('\n');
    s
}

pub fn write_summary_csv<W: Write>(summary: &MetricsSummary, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.serialize(summary)?;
    out.flush()?;
    Ok(())
}

/// One row of the machine-readable report table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub setup: String,
    pub n_invocations: usize,
    pub rr_med: f64,
    pub rr_avg: f64,
    pub rr_p99: f64,
    pub billed_avg: f64,
    pub billed_med: f64,
    pub cost_avg: f64,
    pub cold_starts: usize,
    pub failed: usize,
    pub score: f64,
    pub action: String,
}

pub fn report_rows(report: &OptimizationReport) -> Vec<ReportRow> {
    report
        .entries
        .iter()
        .map(|e| ReportRow {
            setup: e.setup.to_string(),
            n_invocations: e.metrics.n_invocations,
            rr_med: e.metrics.rr_med,
            rr_avg: e.metrics.rr_avg,
            rr_p99: e.metrics.rr_p99,
            billed_avg: e.metrics.billed_avg,
            billed_med: e.metrics.billed_med,
            cost_avg: e.metrics.cost_avg,
            cold_starts: e.metrics.cold_start_count,
            failed: e.metrics.failed_count,
            score: e.score,
            action: e.action.clone(),
        })
        .collect()
}

pub fn write_report_csv<W: Write>(report: &OptimizationReport, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in report_rows(report) {
        out.serialize(row)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_report_csv<R: Read>(r: R) -> csv::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(r).deserialize().collect()
}

/// Fixed-width table of the tested setups, in test order.
pub fn report_table(report: &OptimizationReport) -> String {
    let rows = report_rows(report);
    let width = rows.iter().map(|r| r.setup.len()).max().unwrap_or(0).max("setup".len());
    let mut out = format!(
        "{:<width$}  {:>10}  {:>10}  {:>10}  {:>12}  {:>11}\n",
        "setup", "rr_med", "rr_avg", "billed_avg", "cost_avg", "cold_starts"
    );
    for r in &rows {
        out.push_str(&format!(
            "{:<width$}  {:>10.1}  {:>10.1}  {:>10.1}  {:>12.4e}  {:>11}\n",
            r.setup, r.rr_med, r.rr_avg, r.billed_avg, r.cost_avg, r.cold_starts
        ));
    }
    out.push_str(&format!("final: {}{}\n", report.final_setup, if report.converged { "" } else { " (not converged)" }));
    out
}

/// File-name-safe form of a setup label: `(A,B)-(C)` becomes `A+B_C`.
pub fn setup_file_stem(label: &str) -> String {
    label.split('-').map(|g| g.trim_matches(|c| c == '(' || c == ')').replace(',', "+")).collect::<Vec<_>>().join("_")
}

#[cfg(test)]
mod tests {
    use super::*;
    use fusionsim_core::trace::ecdf;

    #[test]
    fn ecdf_csv_round_trip() {
        let rows = ecdf(&[1.0, 2.0, 2.0, 4.0]);
        let mut buf = Vec::new();
        write_ecdf_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text, "value_ms,fraction\n1.0,0.25\n2.0,0.75\n4.0,1.0\n");
        assert_eq!(read_ecdf_csv(&buf[..]).unwrap(), rows);
        let mut empty = Vec::new();
        write_ecdf_csv(&[], &mut empty).unwrap();
        assert_eq!(empty, b"value_ms,fraction\n");
    }

    #[test]
    fn file_stems() {
        assert_eq!(setup_file_stem("(A,B,D,E)-(C)-(F)-(G)"), "A+B+D+E_C_F_G");
        assert_eq!(setup_file_stem("(X)"), "X");
    }
}
