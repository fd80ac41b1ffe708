use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::run::{ellipsoid_label, run_once, RunResult};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

/// Normal quantile used for the confidence half-widths.
pub const Z_95: f64 = 1.96;

/// Mean and half-width of a Monte-Carlo average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    /// `1.96 · std / √n` with the `1/n` standard deviation.
    pub gamma: f64,
    pub n: usize,
}

impl Estimate {
    /// `None` for an empty sample. Infinite entries give an infinite mean
    /// and half-width.
    pub fn from_samples(xs: &[f64]) -> Option<Self> {
        let n = xs.len();
        if n == 0 {
            return None;
        }
        if xs.iter().any(|x| x.is_infinite()) {
            return Some(Self {
                mean: f64::INFINITY,
                gamma: f64::INFINITY,
                n,
            });
        }
        let nf = n as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / nf;
        Some(Self {
            mean,
            gamma: Z_95 * var.sqrt() / nf.sqrt(),
            n,
        })
    }

    /// `√mean ± √γ`, the widened interval reported for root lengths.
    pub fn root(self) -> Self {
        Self {
            mean: self.mean.sqrt(),
            gamma: self.gamma.sqrt(),
            n: self.n,
        }
    }
}

/// One line of the summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub gamma: f64,
    pub n: usize,
}

/// Aggregated metrics over all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub n_runs: usize,
    pub rows: Vec<SummaryRow>,
}

impl McSummary {
    pub fn get(&self, method: &str, metric: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// Methods (rectangles or ellipsoids) that failed in every run.
    pub fn absent(&self) -> Vec<String> {
        self.rows
            .iter()
            .filter(|r| r.metric == "failures" && r.mean as usize == self.n_runs)
            .map(|r| r.method.clone())
            .collect()
    }
}

pub fn node_metric(name: &str, node: usize) -> String {
    format!("{name}@{}", node + 1)
}

fn push(rows: &mut Vec<SummaryRow>, method: &str, metric: String, est: Option<Estimate>) {
    if let Some(e) = est {
        rows.push(SummaryRow {
            method: method.to_string(),
            metric,
            mean: e.mean,
            gamma: e.gamma,
            n: e.n,
        });
    }
}

/// Reduces run results to means and 95% half-widths.
pub fn summarize(config: &ExperimentConfig, m: usize, runs: &[RunResult]) -> McSummary {
    let mut rows = Vec::new();
    for &method in &config.methods {
        let name = method.as_str();
        let ok: Vec<_> = runs
            .iter()
            .filter_map(|r| r.method(method))
            .filter(|c| c.status.is_ok())
            .collect();
        for i in 0..m {
            let cov: Vec<f64> = ok.iter().map(|c| c.coverage[i]).collect();
            push(&mut rows, name, node_metric("coverage", i), Estimate::from_samples(&cov));
            let len: Vec<f64> = ok.iter().map(|c| c.sq_length[i]).collect();
            push(&mut rows, name, node_metric("sq_length", i), Estimate::from_samples(&len));
        }
        let joint: Vec<f64> = ok.iter().map(|c| c.joint_coverage).collect();
        push(&mut rows, name, "joint_coverage".into(), Estimate::from_samples(&joint));
        let total: Vec<f64> = ok.iter().map(|c| c.total_sq_length).collect();
        let total = Estimate::from_samples(&total);
        push(&mut rows, name, "total_sq_length".into(), total);
        push(&mut rows, name, "root_total_sq_length".into(), total.map(Estimate::root));
        push_failures(&mut rows, name, runs.len() - ok.len(), runs.len());
    }
    for &a in &config.a_matrices {
        for reconciled in [false, true] {
            let name = ellipsoid_label(a, reconciled);
            let ok: Vec<_> = runs
                .iter()
                .filter_map(|r| r.ellipsoid(a, reconciled))
                .filter(|e| e.status.is_ok())
                .collect();
            let cov: Vec<f64> = ok.iter().map(|e| e.coverage).collect();
            push(&mut rows, &name, "coverage".into(), Estimate::from_samples(&cov));
            let radius: Vec<f64> = ok.iter().map(|e| e.radius).collect();
            push(&mut rows, &name, "radius".into(), Estimate::from_samples(&radius));
            let vol: Vec<f64> = ok.iter().map(|e| e.volume).filter(|v| !v.is_nan()).collect();
            push(&mut rows, &name, "volume".into(), Estimate::from_samples(&vol));
            push_failures(&mut rows, &name, runs.len() - ok.len(), runs.len());
        }
    }
    McSummary { n_runs: runs.len(), rows }
}

fn push_failures(rows: &mut Vec<SummaryRow>, method: &str, failures: usize, n: usize) {
    rows.push(SummaryRow {
        method: method.to_string(),
        metric: "failures".into(),
        mean: failures as f64,
        gamma: 0.0,
        n,
    });
}

/// Results of a full Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McOutcome {
    pub config: ExperimentConfig,
    pub m: usize,
    pub runs: Vec<RunResult>,
    pub summary: McSummary,
}

/// Runs `config.runs` independent runs on up to `jobs` threads.
///
/// Results are ordered by run index and do not depend on `jobs`.
pub fn monte_carlo(config: &ExperimentConfig, h: &Hierarchy, jobs: usize) -> Result<McOutcome> {
    config.validate()?;
    if config.runs < 2 {
        return Err(Error::Config(format!(
            "at least 2 runs are needed for confidence margins, got {}",
            config.runs
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let runs: Vec<RunResult> = pool.install(|| {
        (0..config.runs)
            .into_par_iter()
            .map(|r| run_once(config, h, r))
            .collect::<Result<_>>()
    })?;
    let summary = summarize(config, h.m(), &runs);
    Ok(McOutcome {
        config: config.clone(),
        m: h.m(),
        runs,
        summary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::AChoice;
    use crate::projection::ReconciliationMethod;

    #[test]
    fn estimate_basics() {
        let e = Estimate::from_samples(&[1.0, 3.0]).unwrap();
        assert_eq!(e.mean, 2.0);
        assert!((e.gamma - 1.96 / 2f64.sqrt()).abs() < 1e-15);
        let z = Estimate::from_samples(&[0.5, 0.5]).unwrap();
        assert_eq!(z.gamma, 0.0);
        assert!(Estimate::from_samples(&[]).is_none());
        let inf = Estimate::from_samples(&[1.0, f64::INFINITY]).unwrap();
        assert_eq!(inf.mean, f64::INFINITY);
        let r = Estimate { mean: 4.0, gamma: 9.0, n: 3 }.root();
        assert_eq!((r.mean, r.gamma), (2.0, 3.0));
    }

    fn cfg() -> ExperimentConfig {
        ExperimentConfig {
            t: 1000,
            runs: 4,
            methods: vec![ReconciliationMethod::Direct, ReconciliationMethod::Wls],
            a_matrices: vec![AChoice::Identity],
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn parallel_equals_serial() {
        let c = cfg();
        let h = c.hierarchy.load().unwrap();
        let a = monte_carlo(&c, &h, 1).unwrap();
        let b = monte_carlo(&c, &h, 4).unwrap();
        assert_eq!(a.summary, b.summary);
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert!(x.same_metrics(y));
        }
    }

    #[test]
    fn summary_is_the_mean_of_runs() {
        let c = cfg();
        let h = c.hierarchy.load().unwrap();
        let out = monte_carlo(&c, &h, 2).unwrap();
        let direct: Vec<f64> = out
            .runs
            .iter()
            .map(|r| r.method(ReconciliationMethod::Direct).unwrap().coverage[4])
            .collect();
        let row = out.summary.get("direct", "coverage@5").unwrap();
        assert!((row.mean - direct.iter().sum::<f64>() / 4.0).abs() < 1e-15);
        assert_eq!(row.n, 4);
        assert!(out.summary.get("wls", "root_total_sq_length").is_some());
        assert!(out.summary.get("ellipsoid_reconciled_identity", "volume").is_some());
        assert!(out.summary.absent().is_empty());
    }

    #[test]
    fn identical_runs_have_zero_margin() {
        let c = cfg();
        let h = c.hierarchy.load().unwrap();
        let r = run_once(&c, &h, 0).unwrap();
        let s = summarize(&c, h.m(), &[r.clone(), r]);
        assert!(s.rows.iter().all(|row| row.gamma == 0.0));
    }

    #[test]
    fn needs_two_runs() {
        let c = ExperimentConfig { runs: 1, ..cfg() };
        let h = c.hierarchy.load().unwrap();
        assert!(matches!(monte_carlo(&c, &h, 1), Err(Error::Config(_))));
    }

    #[test]
    fn failed_method_is_reported_absent() {
        let c = ExperimentConfig {
            methods: vec![ReconciliationMethod::Direct, ReconciliationMethod::MinT],
            mint_ridge: Some(-1.0),
            ..cfg()
        };
        let h = c.hierarchy.load().unwrap();
        let runs: Vec<_> = (0..2).map(|r| run_once(&c, &h, r).unwrap()).collect();
        let s = summarize(&c, h.m(), &runs);
        assert_eq!(s.absent(), vec!["mint".to_string()]);
        assert!(s.get("mint", "coverage@1").is_none());
        assert_eq!(s.get("mint", "failures").unwrap().mean, 2.0);
    }
}
