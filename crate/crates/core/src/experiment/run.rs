use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{AChoice, ExperimentConfig};
use super::split::split;
use crate::conformal::{ellipsoid_radius, ellipsoid_scores, normalized_volume, signed_offsets};
use crate::datagen::{draw_spec, generate};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::{pseudo_inverse, SymmetricMatrix, DEFAULT_PINV_TOL};
use crate::projection::{
    diag_inverse_weight, estimate_covariance, projection_from_weight, reconciliation_matrix, CovarianceEstimate,
    ReconciliationMethod,
};
use crate::regression::{fit, Regressor, RegressorSpec};

/// Outcome of one cell (method or ellipsoid) of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed { kind: String, message: String },
}

impl Status {
    pub fn failed(e: &Error) -> Self {
        Status::Failed {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }

    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }

    /// `ok` or `failed:<kind>`.
    pub fn label(&self) -> String {
        match self {
            Status::Ok => "ok".into(),
            Status::Failed { kind, .. } => format!("failed:{kind}"),
        }
    }
}

/// Component-wise regions of one reconciliation method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: ReconciliationMethod,
    pub status: Status,
    /// Per node test coverage.
    pub coverage: Vec<f64>,
    /// Per node squared interval length.
    pub sq_length: Vec<f64>,
    pub total_sq_length: f64,
    /// Fraction of test points covered on every node at once.
    pub joint_coverage: f64,
}

impl MethodResult {
    fn failed(method: ReconciliationMethod, e: &Error) -> Self {
        Self {
            method,
            status: Status::failed(e),
            coverage: Vec::new(),
            sq_length: Vec::new(),
            total_sq_length: f64::NAN,
            joint_coverage: f64::NAN,
        }
    }
}

/// One ellipsoidal region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidResult {
    pub a: AChoice,
    pub reconciled: bool,
    pub status: Status,
    pub coverage: f64,
    pub radius: f64,
    /// `r · det(A)^{−1/(2m)}`; `NaN` when `A` is singular.
    pub volume: f64,
}

impl EllipsoidResult {
    /// Row label used in the result files, e.g. `ellipsoid_reconciled_full`.
    pub fn label(&self) -> String {
        ellipsoid_label(self.a, self.reconciled)
    }

    /// Like [`Status::label`], with `ok:singular_a` when the volume is
    /// undefined because `A` is only semi-definite.
    pub fn status_label(&self) -> String {
        if self.status.is_ok() && self.volume.is_nan() {
            "ok:singular_a".into()
        } else {
            self.status.label()
        }
    }
}

pub fn ellipsoid_label(a: AChoice, reconciled: bool) -> String {
    format!("ellipsoid_{}_{}", if reconciled { "reconciled" } else { "plain" }, a)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub data_secs: f64,
    pub fit_secs: f64,
    pub conformal_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: usize,
    pub seed: u64,
    pub t_calib: usize,
    pub t_test: usize,
    pub methods: Vec<MethodResult>,
    pub ellipsoids: Vec<EllipsoidResult>,
    pub timings: Timings,
}

impl RunResult {
    /// Bit-level equality of everything except timings (`NaN` equals `NaN`).
    pub fn same_metrics(&self, other: &Self) -> bool {
        // Debug output of f64 is the shortest round-trip form, so equal
        // strings mean equal bits up to the NaN payload.
        self.run_id == other.run_id
            && self.seed == other.seed
            && self.t_calib == other.t_calib
            && self.t_test == other.t_test
            && format!("{:?}{:?}", self.methods, self.ellipsoids)
                == format!("{:?}{:?}", other.methods, other.ellipsoids)
    }

    pub fn method(&self, method: ReconciliationMethod) -> Option<&MethodResult> {
        self.methods.iter().find(|r| r.method == method)
    }

    pub fn ellipsoid(&self, a: AChoice, reconciled: bool) -> Option<&EllipsoidResult> {
        self.ellipsoids.iter().find(|e| e.a == a && e.reconciled == reconciled)
    }
}

/// Forecasts and targets on the calibration and test splits.
struct Evaluated {
    calib_forecast: DMatrix<f64>,
    calib_y: DMatrix<f64>,
    test_forecast: DMatrix<f64>,
    test_y: DMatrix<f64>,
}

/// One full run: draw a spec, generate data, split, fit, calibrate, evaluate.
pub fn run_once(config: &ExperimentConfig, h: &Hierarchy, run_id: usize) -> Result<RunResult> {
    let seed = config.run_seed(run_id);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut timings = Timings::default();

    let clock = Instant::now();
    let spec = draw_spec(h, &mut rng).with_noise_kind(config.noise)?;
    let data = generate(&spec, config.t, &mut rng)?;
    let plan = split(config.t, config.fractions, &mut rng)?;
    timings.data_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let train = data.select(&plan.train);
    let est = data.select(&plan.est);
    let calib = data.select(&plan.calib);
    let test = data.select(&plan.test);
    let reg_spec = RegressorSpec::new(config.ridge_lambda, spec.masks.clone());
    let model = fit(&reg_spec, &train.features, &train.targets)?;
    let residuals = est.targets - model.predict_rows(&est.features);
    let cov = estimate_covariance(&residuals)?;
    let ev = Evaluated {
        calib_forecast: model.predict_rows(&calib.features),
        calib_y: calib.targets,
        test_forecast: model.predict_rows(&test.features),
        test_y: test.targets,
    };
    timings.fit_secs = clock.elapsed().as_secs_f64();

    let clock = Instant::now();
    let methods = config
        .methods
        .iter()
        .map(|&method| {
            evaluate_method(method, h, &cov, config, &ev).unwrap_or_else(|e| MethodResult::failed(method, &e))
        })
        .collect();
    let mut ellipsoids = Vec::with_capacity(2 * config.a_matrices.len());
    for &a in &config.a_matrices {
        for reconciled in [false, true] {
            ellipsoids.push(evaluate_ellipsoid(a, reconciled, h, &cov, config.alpha, &ev));
        }
    }
    timings.conformal_secs = clock.elapsed().as_secs_f64();

    Ok(RunResult {
        run_id,
        seed,
        t_calib: plan.calib.len(),
        t_test: plan.test.len(),
        methods,
        ellipsoids,
        timings,
    })
}

fn evaluate_method(
    method: ReconciliationMethod,
    h: &Hierarchy,
    cov: &CovarianceEstimate,
    config: &ExperimentConfig,
    ev: &Evaluated,
) -> Result<MethodResult> {
    let p = reconciliation_matrix(method, h, Some(cov), config.mint_ridge)?;
    let offsets = signed_offsets(&(&ev.calib_y - p.apply_rows(&ev.calib_forecast)), config.alpha)?;
    let centers = p.apply_rows(&ev.test_forecast);
    let m = h.m();
    let t_test = ev.test_y.nrows();
    let mut hits = vec![0usize; m];
    let mut joint = 0usize;
    for t in 0..t_test {
        let mut all = true;
        for (i, hit) in hits.iter_mut().enumerate() {
            let d = ev.test_y[(t, i)] - centers[(t, i)];
            if d >= offsets.lo[i] && d <= offsets.hi[i] {
                *hit += 1;
            } else {
                all = false;
            }
        }
        joint += usize::from(all);
    }
    let sq_length: Vec<f64> = offsets.lengths().iter().map(|l| l * l).collect();
    Ok(MethodResult {
        method,
        status: Status::Ok,
        coverage: hits.iter().map(|&c| c as f64 / t_test as f64).collect(),
        total_sq_length: sq_length.iter().sum(),
        sq_length,
        joint_coverage: joint as f64 / t_test as f64,
    })
}

/// `A` for the ellipsoidal regions, from the estimation-split covariance.
pub fn weight_matrix(a: AChoice, cov: &CovarianceEstimate) -> SymmetricMatrix {
    match a {
        AChoice::Identity => SymmetricMatrix::identity(cov.sigma_hat.dim()),
        AChoice::Diag => diag_inverse_weight(cov),
        AChoice::Full => pseudo_inverse(&cov.sigma_hat, DEFAULT_PINV_TOL),
    }
}

fn evaluate_ellipsoid(
    a: AChoice,
    reconciled: bool,
    h: &Hierarchy,
    cov: &CovarianceEstimate,
    alpha: f64,
    ev: &Evaluated,
) -> EllipsoidResult {
    let w = weight_matrix(a, cov);
    let outcome = (|| -> Result<(f64, f64, f64)> {
        let (calib_c, test_c) = if reconciled {
            let p = projection_from_weight(h, &w)?;
            (p.reconcile_rows(h, &ev.calib_forecast), p.reconcile_rows(h, &ev.test_forecast))
        } else {
            (ev.calib_forecast.clone(), ev.test_forecast.clone())
        };
        let (radius, _) = ellipsoid_radius(&ellipsoid_scores(&w, &calib_c, &ev.calib_y)?, alpha)?;
        let test_scores = ellipsoid_scores(&w, &test_c, &ev.test_y)?;
        let covered = test_scores.iter().filter(|&&s| s <= radius).count();
        let volume = match normalized_volume(&w, radius) {
            Ok(v) => v,
            Err(Error::NotPositiveDefinite) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok((covered as f64 / test_scores.len() as f64, radius, volume))
    })();
    match outcome {
        Ok((coverage, radius, volume)) => EllipsoidResult {
            a,
            reconciled,
            status: Status::Ok,
            coverage,
            radius,
            volume,
        },
        Err(e) => EllipsoidResult {
            a,
            reconciled,
            status: Status::failed(&e),
            coverage: f64::NAN,
            radius: f64::NAN,
            volume: f64::NAN,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            t: 2000,
            runs: 2,
            seed: 42,
            ..Default::default()
        }
    }

    #[test]
    fn run_is_deterministic() {
        let cfg = small();
        let h = cfg.hierarchy.load().unwrap();
        let a = run_once(&cfg, &h, 3).unwrap();
        let b = run_once(&cfg, &h, 3).unwrap();
        assert!(a.same_metrics(&b));
        assert_eq!(a.seed, 45);
        assert_eq!((a.t_calib, a.t_test), (400, 400));
    }

    #[test]
    fn every_cell_is_filled() {
        let cfg = small();
        let h = cfg.hierarchy.load().unwrap();
        let r = run_once(&cfg, &h, 0).unwrap();
        assert_eq!(r.methods.len(), 5);
        assert_eq!(r.ellipsoids.len(), 6);
        for m in &r.methods {
            assert!(m.status.is_ok(), "{:?}", m.status);
            assert_eq!(m.coverage.len(), 16);
            assert!(m.coverage.iter().all(|c| (0.0..=1.0).contains(c)));
            assert!(m.sq_length.iter().all(|l| *l >= 0.0));
            assert!(m.joint_coverage <= m.coverage.iter().cloned().fold(1.0, f64::min));
        }
        for a in AChoice::ALL {
            let plain = r.ellipsoid(a, false).unwrap();
            let rec = r.ellipsoid(a, true).unwrap();
            assert!(rec.radius <= plain.radius * (1.0 + 1e-12), "{a}");
            assert!(rec.volume <= plain.volume * (1.0 + 1e-12), "{a}");
        }
    }

    #[test]
    fn direct_matches_ordinary_split_conformal() {
        let cfg = ExperimentConfig {
            methods: vec![ReconciliationMethod::Direct],
            a_matrices: vec![],
            ..small()
        };
        let h = cfg.hierarchy.load().unwrap();
        let r = run_once(&cfg, &h, 1).unwrap();
        let d = r.method(ReconciliationMethod::Direct).unwrap();
        assert!(d.coverage.iter().all(|&c| c > 0.8));
    }

    #[test]
    fn mint_failure_is_isolated() {
        // A negative ridge is rejected by MinT and therefore by Combi.
        let cfg = ExperimentConfig {
            mint_ridge: Some(-1.0),
            ..small()
        };
        let h = cfg.hierarchy.load().unwrap();
        let r = run_once(&cfg, &h, 0).unwrap();
        for m in &r.methods {
            let expect_fail = matches!(m.method, ReconciliationMethod::MinT | ReconciliationMethod::Combi);
            assert_eq!(!m.status.is_ok(), expect_fail, "{}", m.method);
        }
        assert!(r.method(ReconciliationMethod::MinT).unwrap().status.label().starts_with("failed:"));
    }
}
