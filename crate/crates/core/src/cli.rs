//! Command-line interface: `generate`, `run` and `report`.
//!
//! Exit codes: 0 on success, 2 for invalid input or I/O failures, 3 when a
//! requested method failed in every run. Failures print one line
//! `error: kind=<kind> message=<text>` on stderr.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::datagen::{draw_spec, generate};
use crate::elliptical::SphericalKind;
use crate::error::{Error, Result};
use crate::experiment::output::{read_summary_csv, write_outputs, HIERARCHY_FILE, SUMMARY_FILE};
use crate::experiment::{monte_carlo, AChoice, ExperimentConfig, SummaryRow};
use crate::hierarchy::Hierarchy;
use crate::projection::ReconciliationMethod;

pub const DATASET_FILE: &str = "dataset.csv";
pub const SPEC_FILE: &str = "spec.json";
pub const PLOT_FILE: &str = "plot_nodes.csv";

#[derive(Debug, Parser)]
#[command(name = "hiercp", version, about = "Conformal prediction for hierarchical regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Overrides shared by `generate` and `run`; flags win over the config file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// JSON experiment config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observations per run.
    #[arg(long)]
    pub t: Option<usize>,
    /// a1, a2, a3, b1, b2, b3 or custom:PATH.
    #[arg(long)]
    pub hierarchy: Option<String>,
    /// gaussian, student_t[:dof], laplace or uniform_sphere.
    #[arg(long)]
    pub noise: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw one experiment specification and write a dataset.
    Generate {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte-Carlo experiment.
    Run {
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Comma-separated: direct,ols,wls,mint,combi.
        #[arg(long)]
        methods: Option<String>,
        /// Comma-separated: identity,diag,full.
        #[arg(long = "a-matrix")]
        a_matrix: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = default_jobs())]
        jobs: usize,
    },
    /// Print a summary table and write a plot-ready per-node CSV.
    Report {
        /// Results directory or summary CSV.
        results: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Where to write the per-node CSV (default: next to the summary).
        #[arg(long)]
        plot_csv: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Json,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn parse_list<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

impl Overrides {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(t) = self.t {
            cfg.t = t;
        }
        if let Some(h) = &self.hierarchy {
            cfg.hierarchy = h.parse()?;
        }
        if let Some(noise) = &self.noise {
            cfg.noise = noise.parse::<SphericalKind>().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(cfg)
    }
}

/// Failure carrying the process exit code.
struct Failure {
    code: i32,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: 2,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

/// Parses `args` and executes the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: kind={} message={}", f.kind, f.message.replace('\n', " "));
            f.code
        }
    }
}

fn execute(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Generate { overrides, out } => cmd_generate(&overrides.config()?, &out).map_err(Failure::from),
        Command::Run {
            overrides,
            runs,
            alpha,
            methods,
            a_matrix,
            out,
            jobs,
        } => {
            let mut cfg = overrides.config()?;
            if let Some(r) = runs {
                cfg.runs = r;
            }
            if let Some(a) = alpha {
                cfg.alpha = a;
            }
            if let Some(m) = methods {
                cfg.methods = parse_list::<ReconciliationMethod>(&m)?;
            }
            if let Some(a) = a_matrix {
                cfg.a_matrices = parse_list::<AChoice>(&a)?;
            }
            cmd_run(&cfg, &out, jobs)
        }
        Command::Report {
            results,
            format,
            plot_csv,
        } => cmd_report(&results, format, plot_csv.as_deref()).map_err(Failure::from),
    }
}

/// Writes `dataset.csv` and `spec.json` for one draw.
pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let h = cfg.hierarchy.load()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spec = draw_spec(&h, &mut rng).with_noise_kind(cfg.noise)?;
    let data = generate(&spec, cfg.t, &mut rng)?;
    std::fs::create_dir_all(out)?;
    data.save_csv(&out.join(DATASET_FILE))?;
    std::fs::write(out.join(SPEC_FILE), spec.to_json()?)?;
    println!("wrote {} rows x {} nodes to {}", cfg.t, h.m(), out.display());
    Ok(())
}

fn cmd_run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> std::result::Result<(), Failure> {
    let h = cfg.hierarchy.load()?;
    let outcome = monte_carlo(cfg, &h, jobs)?;
    write_outputs(out, &outcome, &h)?;
    println!(
        "{} runs on {} ({} nodes) written to {}",
        outcome.summary.n_runs,
        cfg.hierarchy,
        h.m(),
        out.display()
    );
    let absent = outcome.summary.absent();
    if absent.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            kind: "method_failed".into(),
            message: format!("failed in every run: {}", absent.join(",")),
        })
    }
}

fn summary_path(results: &Path) -> PathBuf {
    if results.is_dir() {
        results.join(SUMMARY_FILE)
    } else {
        results.to_path_buf()
    }
}

pub fn cmd_report(results: &Path, format: Format, plot_csv: Option<&Path>) -> Result<()> {
    let path = summary_path(results);
    let file = std::fs::File::open(&path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let rows = read_summary_csv(file)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let hierarchy = load_hierarchy(&dir.join(HIERARCHY_FILE));
    let plot_path = plot_csv.map(Path::to_path_buf).unwrap_or_else(|| dir.join(PLOT_FILE));
    write_plot_csv(&rows, hierarchy.as_ref(), &plot_path)?;
    match format {
        Format::Text => print!("{}", render_table(&rows)),
        Format::Json => {
            let report = JsonReport {
                rows: &rows,
                absent: absent_methods(&rows),
                plot_csv: plot_path.display().to_string(),
            };
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: &'a [SummaryRow],
    absent: Vec<String>,
    plot_csv: String,
}

fn load_hierarchy(path: &Path) -> Option<Hierarchy> {
    let text = std::fs::read_to_string(path).ok()?;
    serde_json::from_str(&text).ok()
}

fn absent_methods(rows: &[SummaryRow]) -> Vec<String> {
    rows.iter()
        .filter(|r| r.metric == "failures" && r.mean as usize == r.n && r.n > 0)
        .map(|r| r.method.clone())
        .collect()
}

fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        "-".into()
    } else if x.is_infinite() {
        "inf".into()
    } else if x != 0.0 && (x.abs() >= 1e5 || x.abs() < 1e-3) {
        format!("{x:.3e}")
    } else {
        format!("{x:.4}")
    }
}

/// Methods in table order: rectangles first in the canonical order, then
/// anything else in order of appearance.
fn method_order(rows: &[SummaryRow]) -> Vec<String> {
    let mut seen: Vec<String> = Vec::new();
    for r in rows {
        if !seen.contains(&r.method) {
            seen.push(r.method.clone());
        }
    }
    let mut ordered: Vec<String> = ReconciliationMethod::ALL
        .iter()
        .map(|m| m.as_str().to_string())
        .filter(|m| seen.contains(m))
        .collect();
    let rest: Vec<String> = seen.into_iter().filter(|m| !ordered.contains(m)).collect();
    ordered.extend(rest);
    ordered
}

fn metric_key(metric: &str) -> (u8, usize, String) {
    let rank = |name: &str| match name {
        "joint_coverage" => 0,
        "root_total_sq_length" => 1,
        "total_sq_length" => 2,
        "coverage" => 3,
        "radius" => 4,
        "volume" => 5,
        "sq_length" => 7,
        "failures" => 9,
        _ => 8,
    };
    match metric.split_once('@') {
        Some((name, node)) => (6, node.parse().unwrap_or(usize::MAX), format!("{}", rank(name))),
        None => (rank(metric), 0, metric.to_string()),
    }
}

/// Metric rows by method columns, cells `mean ± gamma`; component-wise
/// methods and ellipsoids get separate tables.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let (ellipsoids, rectangles): (Vec<SummaryRow>, Vec<SummaryRow>) =
        rows.iter().cloned().partition(|r| r.method.starts_with("ellipsoid_"));
    [rectangles, ellipsoids]
        .iter()
        .filter(|group| !group.is_empty())
        .map(|group| render_group(group))
        .collect::<Vec<_>>()
        .join("\n")
}

fn render_group(rows: &[SummaryRow]) -> String {
    let methods = method_order(rows);
    let mut metrics: Vec<&str> = Vec::new();
    let mut cells: BTreeMap<(&str, &str), &SummaryRow> = BTreeMap::new();
    for r in rows {
        if !metrics.contains(&r.metric.as_str()) {
            metrics.push(&r.metric);
        }
        cells.insert((r.metric.as_str(), r.method.as_str()), r);
    }
    metrics.sort_by_key(|m| metric_key(m));

    let failures: BTreeMap<&str, &SummaryRow> =
        rows.iter().filter(|r| r.metric == "failures").map(|r| (r.method.as_str(), r)).collect();
    let mut grid: Vec<Vec<String>> = Vec::new();
    let mut header = vec!["metric".to_string()];
    header.extend(methods.iter().cloned());
    grid.push(header);
    for metric in metrics.iter().filter(|m| **m != "failures") {
        let mut line = vec![metric.to_string()];
        for method in &methods {
            let text = match cells.get(&(*metric, method.as_str())) {
                Some(r) => format!("{} ± {}", fmt_num(r.mean), fmt_num(r.gamma)),
                None => match failures.get(method.as_str()) {
                    Some(f) if f.mean > 0.0 && f.mean as usize == f.n => format!("failed({})", f.n),
                    _ => String::new(),
                },
            };
            line.push(text);
        }
        if line[1..].iter().any(|c| !c.is_empty()) {
            grid.push(line);
        }
    }
    let mut line = vec!["failures".to_string()];
    for method in &methods {
        line.push(failures.get(method.as_str()).map(|f| format!("{}/{}", f.mean, f.n)).unwrap_or_default());
    }
    grid.push(line);

    let ncols = grid[0].len();
    let widths: Vec<usize> = (0..ncols)
        .map(|c| grid.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in grid.iter().enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", cells.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * (ncols - 1);
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

/// Per-node crosses: `method,node_id,level,coverage_mean,coverage_gamma,
/// sq_length_mean,sq_length_gamma`.
pub fn write_plot_csv(rows: &[SummaryRow], hierarchy: Option<&Hierarchy>, path: &Path) -> Result<()> {
    let mut nodes: BTreeMap<(String, usize), [Option<&SummaryRow>; 2]> = BTreeMap::new();
    for r in rows {
        if let Some((name, node)) = r.metric.split_once('@') {
            let Ok(node) = node.parse::<usize>() else { continue };
            let slot = match name {
                "coverage" => 0,
                "sq_length" => 1,
                _ => continue,
            };
            nodes.entry((r.method.clone(), node)).or_default()[slot] = Some(r);
        }
    }
    let order = method_order(rows);
    let mut keys: Vec<_> = nodes.keys().cloned().collect();
    keys.sort_by_key(|(m, n)| (order.iter().position(|x| x == m), *n));

    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "node_id",
        "level",
        "coverage_mean",
        "coverage_gamma",
        "sq_length_mean",
        "sq_length_gamma",
    ])?;
    let num = |r: Option<&SummaryRow>, f: fn(&SummaryRow) -> f64| r.map(|r| f(r).to_string()).unwrap_or_default();
    for key in keys {
        let [cov, len] = nodes[&key];
        let level = hierarchy
            .and_then(|h| h.level_of(key.1 - 1))
            .map(|l| (l + 1).to_string())
            .unwrap_or_default();
        w.write_record([
            key.0.clone(),
            key.1.to_string(),
            level,
            num(cov, |r| r.mean),
            num(cov, |r| r.gamma),
            num(len, |r| r.mean),
            num(len, |r| r.gamma),
        ])?;
    }
    w.flush()?;
    Ok(())
}
