//! Base forecasting algorithm: per-node ridge regression on a fixed basis.
//!
//! The conformal layer only needs something implementing [`Regressor`]; the
//! ridge-on-basis model below is the provided instance. Features are the
//! distinct univariate shapes appearing in the generator's effect basis
//! `g1..g11` (identity, square, sine, `log(|x|+1)`, cosine, `√max(x,0)`,
//! clamped exponential), applied to every available covariate, plus an
//! intercept.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of covariates.
pub const N_COVARIATES: usize = 3;

/// Exponent clamp for the exponential basis.
pub const EXP_CLAMP: f64 = 30.0;

/// Default ridge penalty (relative to standardised features).
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-6;

// Relative eigenvalue floor used when the ridge is zero.
const EIGEN_FLOOR: f64 = 1e-13;

/// Univariate shapes used by the effect basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Identity,
    Square,
    Sin,
    LogAbs1p,
    Cos,
    /// `√max(x, 0)`.
    SqrtPos,
    /// `exp(min(x, 30))`.
    ExpClamped,
}

impl Shape {
    pub const DISTINCT: [Shape; 7] = [
        Shape::Identity,
        Shape::Square,
        Shape::Sin,
        Shape::LogAbs1p,
        Shape::Cos,
        Shape::SqrtPos,
        Shape::ExpClamped,
    ];

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Shape::Identity => x,
            Shape::Square => x * x,
            Shape::Sin => x.sin(),
            Shape::LogAbs1p => (x.abs() + 1.0).ln(),
            Shape::Cos => x.cos(),
            Shape::SqrtPos => x.max(0.0).sqrt(),
            Shape::ExpClamped => x.min(EXP_CLAMP).exp(),
        }
    }
}

/// One of the eleven effect functions `g1..g11`, each acting on a single
/// covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct BasisFunction(u8);

impl BasisFunction {
    pub const ALL: [BasisFunction; 11] = [
        BasisFunction(1),
        BasisFunction(2),
        BasisFunction(3),
        BasisFunction(4),
        BasisFunction(5),
        BasisFunction(6),
        BasisFunction(7),
        BasisFunction(8),
        BasisFunction(9),
        BasisFunction(10),
        BasisFunction(11),
    ];

    /// 1-based index in `1..=11`.
    pub fn index(self) -> u8 {
        self.0
    }

    /// 0-based covariate the function reads.
    pub fn covariate(self) -> usize {
        match self.0 {
            1..=4 => 0,
            5..=8 => 1,
            _ => 2,
        }
    }

    pub fn shape(self) -> Shape {
        match self.0 {
            1 | 5 | 9 => Shape::Identity,
            2 | 6 | 10 => Shape::Square,
            3 => Shape::Sin,
            4 => Shape::LogAbs1p,
            7 => Shape::Cos,
            8 => Shape::SqrtPos,
            _ => Shape::ExpClamped,
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        self.shape().eval(x[self.covariate()])
    }
}

impl TryFrom<u8> for BasisFunction {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        if (1..=11).contains(&v) {
            Ok(BasisFunction(v))
        } else {
            Err(Error::Validation(format!("basis index {v} outside 1..=11")))
        }
    }
}

impl From<BasisFunction> for u8 {
    fn from(b: BasisFunction) -> u8 {
        b.0
    }
}

/// Number of basis functions `g1..g11`.
pub const N_BASIS: usize = BasisFunction::ALL.len();

/// Number of regression features excluding the intercept.
pub const N_FEATURES: usize = N_COVARIATES * Shape::DISTINCT.len();

// Features reading only x1 and x2.
const N_MASKED_FEATURES: usize = 2 * Shape::DISTINCT.len();

fn expand(x: &[f64], out: &mut [f64]) {
    let mut k = 0;
    for &xc in &x[..N_COVARIATES] {
        for shape in Shape::DISTINCT {
            out[k] = shape.eval(xc);
            k += 1;
        }
    }
}

/// A fitted point forecaster `x ↦ μ̂(x) ∈ R^m`.
pub trait Regressor {
    fn output_dim(&self) -> usize;

    fn predict(&self, x: &[f64]) -> DVector<f64>;

    /// Predicts every row of a `T × d` feature matrix into a `T × m` matrix.
    fn predict_rows(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(features.nrows(), self.output_dim());
        let mut x = vec![0.0; features.ncols()];
        for t in 0..features.nrows() {
            for (j, v) in x.iter_mut().enumerate() {
                *v = features[(t, j)];
            }
            out.set_row(t, &self.predict(&x).transpose());
        }
        out
    }
}

impl<R: Regressor + ?Sized> Regressor for &R {
    fn output_dim(&self) -> usize {
        (**self).output_dim()
    }
    fn predict(&self, x: &[f64]) -> DVector<f64> {
        (**self).predict(x)
    }
    fn predict_rows(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        (**self).predict_rows(features)
    }
}

/// A regression algorithm `𝒜` producing a [`Regressor`] from training data.
pub trait RegressionAlgorithm {
    type Model: Regressor;

    fn fit(&self, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Self::Model>;
}

/// Ridge-on-basis configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub ridge_lambda: f64,
    /// Per node: whether the third covariate may be used.
    pub feature_mask: Vec<bool>,
}

impl RegressorSpec {
    pub fn new(ridge_lambda: f64, feature_mask: Vec<bool>) -> Self {
        Self { ridge_lambda, feature_mask }
    }

    /// Every node sees all covariates.
    pub fn unmasked(m: usize) -> Self {
        Self::new(DEFAULT_RIDGE_LAMBDA, vec![true; m])
    }
}

impl RegressionAlgorithm for RegressorSpec {
    type Model = FittedRegressor;

    fn fit(&self, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<FittedRegressor> {
        fit(self, features, targets)
    }
}

/// Per-node coefficients over standardised basis features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedRegressor {
    feature_mean: Vec<f64>,
    feature_scale: Vec<f64>,
    /// `N_FEATURES × m`; masked nodes carry zeros on third-covariate rows.
    coefficients: DMatrix<f64>,
    intercepts: Vec<f64>,
}

impl FittedRegressor {
    /// Ignores `x` and returns `values`.
    pub fn constant(values: Vec<f64>) -> Self {
        let m = values.len();
        Self {
            feature_mean: vec![0.0; N_FEATURES],
            feature_scale: vec![1.0; N_FEATURES],
            coefficients: DMatrix::zeros(N_FEATURES, m),
            intercepts: values,
        }
    }

    pub fn intercepts(&self) -> &[f64] {
        &self.intercepts
    }

    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    fn standardized(&self, x: &[f64], buf: &mut [f64]) {
        expand(x, buf);
        for k in 0..N_FEATURES {
            buf[k] = (buf[k] - self.feature_mean[k]) / self.feature_scale[k];
        }
    }
}

impl Regressor for FittedRegressor {
    fn output_dim(&self) -> usize {
        self.intercepts.len()
    }

    fn predict(&self, x: &[f64]) -> DVector<f64> {
        assert!(x.len() >= N_COVARIATES, "expected {N_COVARIATES} covariates");
        let mut z = [0.0; N_FEATURES];
        self.standardized(x, &mut z);
        let z = DVector::from_column_slice(&z);
        self.coefficients.tr_mul(&z) + DVector::from_column_slice(&self.intercepts)
    }

    fn predict_rows(&self, features: &DMatrix<f64>) -> DMatrix<f64> {
        let z = standardized_design(features, &self.feature_mean, &self.feature_scale);
        let mut out = z * &self.coefficients;
        for mut row in out.row_iter_mut() {
            for (v, b) in row.iter_mut().zip(&self.intercepts) {
                *v += b;
            }
        }
        out
    }
}

fn raw_design(features: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(features.nrows(), N_FEATURES);
    let mut buf = [0.0; N_FEATURES];
    for t in 0..features.nrows() {
        let x = [features[(t, 0)], features[(t, 1)], features[(t, 2)]];
        expand(&x, &mut buf);
        for (k, v) in buf.iter().enumerate() {
            out[(t, k)] = *v;
        }
    }
    out
}

fn standardized_design(features: &DMatrix<f64>, mean: &[f64], scale: &[f64]) -> DMatrix<f64> {
    let mut z = raw_design(features);
    for (k, mut col) in z.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v = (*v - mean[k]) / scale[k];
        }
    }
    z
}

/// Fits one ridge regression per node (target column).
///
/// The penalty is `ridge_lambda · T · ‖β‖²` on standardised features; the
/// intercept is not penalised.
pub fn fit(spec: &RegressorSpec, features: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<FittedRegressor> {
    let t = features.nrows();
    let m = targets.ncols();
    if features.ncols() != N_COVARIATES {
        return Err(Error::Validation(format!(
            "expected {N_COVARIATES} feature columns, got {}",
            features.ncols()
        )));
    }
    if targets.nrows() != t {
        return Err(Error::Validation(format!("{t} feature rows but {} target rows", targets.nrows())));
    }
    if spec.feature_mask.len() != m {
        return Err(Error::Validation(format!(
            "feature mask has {} entries for {m} nodes",
            spec.feature_mask.len()
        )));
    }
    if !(spec.ridge_lambda >= 0.0) {
        return Err(Error::Config(format!("ridge_lambda must be >= 0, got {}", spec.ridge_lambda)));
    }
    let used = if spec.feature_mask.iter().all(|&b| !b) { N_MASKED_FEATURES } else { N_FEATURES };
    if t <= used + 1 {
        return Err(Error::InsufficientData(format!(
            "{t} training rows for {} parameters",
            used + 1
        )));
    }

    let raw = raw_design(features);
    let mut mean = vec![0.0; N_FEATURES];
    let mut scale = vec![1.0; N_FEATURES];
    for k in 0..N_FEATURES {
        let col = raw.column(k);
        let mu = col.mean();
        let var = col.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / t as f64;
        mean[k] = mu;
        // constant columns stay at zero after centring
        scale[k] = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
    }
    let z = standardized_design(features, &mean, &scale);

    let intercepts: Vec<f64> = (0..m).map(|i| targets.column(i).mean()).collect();
    let mut centered = targets.clone();
    for (i, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-intercepts[i]);
    }

    let mut coefficients = DMatrix::zeros(N_FEATURES, m);
    let penalty = spec.ridge_lambda * t as f64;
    for (full, width) in [(true, N_FEATURES), (false, N_MASKED_FEATURES)] {
        let nodes: Vec<usize> = (0..m).filter(|&i| spec.feature_mask[i] == full).collect();
        if nodes.is_empty() {
            continue;
        }
        let zg = z.columns(0, width);
        let gram = zg.tr_mul(&zg);
        let rhs = DMatrix::from_fn(width, nodes.len(), |k, j| zg.column(k).dot(&centered.column(nodes[j])));
        let beta = ridge_solve(gram, &rhs, penalty);
        for (j, &node) in nodes.iter().enumerate() {
            coefficients.view_mut((0, node), (width, 1)).copy_from(&beta.column(j));
        }
    }

    Ok(FittedRegressor {
        feature_mean: mean,
        feature_scale: scale,
        coefficients,
        intercepts,
    })
}

// (G + penalty·Id)⁻¹ rhs through an eigendecomposition; directions with
// eigenvalue below the relative floor are dropped.
fn ridge_solve(gram: DMatrix<f64>, rhs: &DMatrix<f64>, penalty: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax();
    let v = &eig.eigenvectors;
    let proj = v.tr_mul(rhs);
    let mut scaled = proj;
    for (k, mut row) in scaled.row_iter_mut().enumerate() {
        let e = eig.eigenvalues[k];
        let inv = if e > EIGEN_FLOOR * top { 1.0 / (e + penalty) } else { 0.0 };
        row *= inv;
    }
    v * scaled
}
