//! Result files: `results_runs.csv`, `results_summary.csv` and
//! `results.json`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::monte_carlo::{McOutcome, SummaryRow};
use crate::error::{Error, Result};

pub const RUNS_FILE: &str = "results_runs.csv";
pub const SUMMARY_FILE: &str = "results_summary.csv";
pub const JSON_FILE: &str = "results.json";
pub const HIERARCHY_FILE: &str = "hierarchy.json";

pub const RUNS_HEADER: [&str; 9] = [
    "run_id",
    "seed",
    "method",
    "node_id",
    "coverage",
    "sq_length",
    "total_sq_length",
    "volume",
    "status",
];

pub const SUMMARY_HEADER: [&str; 5] = ["method", "metric", "mean", "gamma", "n"];

// Empty cell for missing values; floats use the shortest round-trip form.
fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_nan() => String::new(),
        Some(x) => x.to_string(),
        None => String::new(),
    }
}

/// One row per (run, method, node) plus an `ALL` row per (run, method).
pub fn write_runs_csv<W: Write>(outcome: &McOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUNS_HEADER)?;
    for run in &outcome.runs {
        let id = run.run_id.to_string();
        let seed = run.seed.to_string();
        for res in &run.methods {
            let status = res.status.label();
            let name = res.method.as_str();
            for i in 0..res.coverage.len() {
                w.write_record([
                    id.as_str(),
                    &seed,
                    name,
                    &(i + 1).to_string(),
                    &cell(Some(res.coverage[i])),
                    &cell(Some(res.sq_length[i])),
                    "",
                    "",
                    &status,
                ])?;
            }
            w.write_record([
                id.as_str(),
                &seed,
                name,
                "ALL",
                &cell(Some(res.joint_coverage)),
                "",
                &cell(Some(res.total_sq_length)),
                "",
                &status,
            ])?;
        }
        for e in &run.ellipsoids {
            w.write_record([
                id.as_str(),
                &seed,
                &e.label(),
                "ALL",
                &cell(Some(e.coverage)),
                "",
                "",
                &cell(Some(e.volume)),
                &e.status_label(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            r.method.as_str(),
            &r.metric,
            &cell(Some(r.mean)),
            &cell(Some(r.gamma)),
            &r.n.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawSummaryRow {
    method: String,
    metric: String,
    mean: String,
    gamma: String,
    n: usize,
}

fn parse_float(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Validation(format!("not a number: '{s}'")))
}

/// Reads a summary CSV, checking the header exactly.
pub fn read_summary_csv<R: Read>(input: R) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != SUMMARY_HEADER {
        return Err(Error::Validation(format!(
            "summary header is {header:?}, expected {SUMMARY_HEADER:?}"
        )));
    }
    r.deserialize::<RawSummaryRow>()
        .map(|row| {
            let row = row?;
            Ok(SummaryRow {
                method: row.method,
                metric: row.metric,
                mean: parse_float(&row.mean)?,
                gamma: parse_float(&row.gamma)?,
                n: row.n,
            })
        })
        .collect()
}

/// Everything written by an experiment, for the JSON file.
#[derive(Debug, Serialize)]
struct JsonOut<'a> {
    config: &'a super::config::ExperimentConfig,
    m: usize,
    summary: &'a [SummaryRow],
    runs: &'a [super::run::RunResult],
}

/// Writes all result files into `dir` (created if missing).
pub fn write_outputs(dir: &Path, outcome: &McOutcome, hierarchy: &crate::hierarchy::Hierarchy) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let runs = std::fs::File::create(dir.join(RUNS_FILE))?;
    write_runs_csv(outcome, std::io::BufWriter::new(runs))?;
    let summary = std::fs::File::create(dir.join(SUMMARY_FILE))?;
    write_summary_csv(&outcome.summary.rows, summary)?;
    let json = JsonOut {
        config: &outcome.config,
        m: outcome.m,
        summary: &outcome.summary.rows,
        runs: &outcome.runs,
    };
    // serde_json writes non-finite floats as null.
    std::fs::write(dir.join(JSON_FILE), serde_json::to_string_pretty(&json)?)?;
    std::fs::write(dir.join(HIERARCHY_FILE), serde_json::to_string_pretty(hierarchy)?)?;
    Ok(())
}
