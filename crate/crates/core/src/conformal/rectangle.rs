use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quantile::{order_statistic, QuantileIndices};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::projection::{estimate_covariance, reconciliation_matrix, ProjectionMatrix, ReconciliationMethod};
use crate::regression::Regressor;

/// Calibrated signed-score offsets, one interval per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleOffsets {
    /// `q_{α/2}` per component (may be `−∞`).
    pub lo: Vec<f64>,
    /// `q_{1−α/2}` per component (may be `+∞`).
    pub hi: Vec<f64>,
    pub indices: QuantileIndices,
}

impl RectangleOffsets {
    /// Interval lengths `hi − lo`; they do not depend on `x`.
    pub fn lengths(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| h - l).collect()
    }

    /// Closed-interval membership of `y` around `center`, per component.
    pub fn contains(&self, center: &[f64], y: &[f64]) -> Vec<bool> {
        (0..self.lo.len())
            .map(|i| {
                let d = y[i] - center[i];
                d >= self.lo[i] && d <= self.hi[i]
            })
            .collect()
    }
}

/// Offsets from a `T × m` matrix of signed scores `y_t − center(x_t)`.
pub fn signed_offsets(scores: &DMatrix<f64>, alpha: f64) -> Result<RectangleOffsets> {
    let indices = QuantileIndices::new(scores.nrows(), alpha)?;
    let m = scores.ncols();
    let mut lo = Vec::with_capacity(m);
    let mut hi = Vec::with_capacity(m);
    let mut column = Vec::with_capacity(scores.nrows());
    for i in 0..m {
        column.clear();
        column.extend(scores.column(i).iter().copied());
        column.sort_by(f64::total_cmp);
        lo.push(order_statistic(&column, indices.comp_lo, f64::NEG_INFINITY));
        hi.push(order_statistic(&column, indices.comp_hi, f64::NEG_INFINITY));
    }
    Ok(RectangleOffsets { lo, hi, indices })
}

/// Hyper-rectangular prediction region `Π_i [μ̃_i(x) + lo_i, μ̃_i(x) + hi_i]`
/// with `μ̃ = P μ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectangleModel<R> {
    pub regressor: R,
    pub projection: ProjectionMatrix,
    pub offsets: RectangleOffsets,
}

impl<R: Regressor> RectangleModel<R> {
    pub fn center(&self, x: &[f64]) -> DVector<f64> {
        self.projection.apply(&self.regressor.predict(x))
    }

    /// Per-component membership of `y` in the region at `x`.
    pub fn contains(&self, x: &[f64], y: &[f64]) -> Vec<bool> {
        self.offsets.contains(self.center(x).as_slice(), y)
    }

    /// Joint membership (all components).
    pub fn contains_all(&self, x: &[f64], y: &[f64]) -> bool {
        self.contains(x, y).into_iter().all(|b| b)
    }

    pub fn lengths(&self) -> Vec<f64> {
        self.offsets.lengths()
    }
}

fn check_split(features: &DMatrix<f64>, targets: &DMatrix<f64>, m: usize) -> Result<()> {
    if features.nrows() == 0 {
        return Err(Error::InsufficientData("empty calibration set".into()));
    }
    if features.nrows() != targets.nrows() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} target rows",
            features.nrows(),
            targets.nrows()
        )));
    }
    if targets.ncols() != m {
        return Err(Error::Validation(format!("targets have {} columns, expected {m}", targets.ncols())));
    }
    Ok(())
}

/// Plain component-wise SCP: signed scores of the raw forecasts.
pub fn calibrate_plain_rectangles<R: Regressor>(
    regressor: R,
    calib_features: &DMatrix<f64>,
    calib_targets: &DMatrix<f64>,
    alpha: f64,
) -> Result<RectangleModel<R>> {
    let m = regressor.output_dim();
    check_split(calib_features, calib_targets, m)?;
    let forecasts = regressor.predict_rows(calib_features);
    let offsets = signed_offsets(&(calib_targets - forecasts), alpha)?;
    Ok(RectangleModel {
        regressor,
        projection: ProjectionMatrix::identity(m),
        offsets,
    })
}

/// Hierarchical component-wise SCP: signed scores of `P μ̂`.
///
/// With `p = Id` this reproduces [`calibrate_plain_rectangles`]; with `p`
/// estimated on a separate split (see [`data_based_projection`]) it is the
/// data-based variant.
pub fn calibrate_rectangles<R: Regressor>(
    regressor: R,
    p: ProjectionMatrix,
    calib_features: &DMatrix<f64>,
    calib_targets: &DMatrix<f64>,
    alpha: f64,
) -> Result<RectangleModel<R>> {
    let m = regressor.output_dim();
    if p.dim() != m {
        return Err(Error::Validation(format!("projection is {}x{0}, regressor outputs {m}", p.dim())));
    }
    check_split(calib_features, calib_targets, m)?;
    let forecasts = p.apply_rows(&regressor.predict_rows(calib_features));
    let offsets = signed_offsets(&(calib_targets - forecasts), alpha)?;
    Ok(RectangleModel {
        regressor,
        projection: p,
        offsets,
    })
}

/// Projection built from the covariance of the unprojected residuals
/// `y − μ̂(x)` on an estimation split.
pub fn data_based_projection<R: Regressor>(
    method: ReconciliationMethod,
    h: &Hierarchy,
    regressor: &R,
    est_features: &DMatrix<f64>,
    est_targets: &DMatrix<f64>,
    ridge: Option<f64>,
) -> Result<ProjectionMatrix> {
    if !method.needs_covariance() {
        return reconciliation_matrix(method, h, None, ridge);
    }
    check_split(est_features, est_targets, h.m())?;
    let residuals = est_targets - regressor.predict_rows(est_features);
    let cov = estimate_covariance(&residuals)?;
    reconciliation_matrix(method, h, Some(&cov), ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::FittedRegressor;

    #[test]
    fn four_point_sample() {
        let scores = DMatrix::from_column_slice(4, 1, &[1.0, -2.0, 2.0, -1.0]);
        let off = signed_offsets(&scores, 0.4).unwrap();
        assert_eq!((off.indices.comp_lo, off.indices.comp_hi), (1, 4));
        assert_eq!(off.lo, vec![-2.0]);
        assert_eq!(off.hi, vec![2.0]);
        assert_eq!(off.lengths(), vec![4.0]);
        let off = signed_offsets(&scores, 0.2).unwrap();
        assert_eq!(off.lo, vec![f64::NEG_INFINITY]);
        assert_eq!(off.hi, vec![f64::INFINITY]);
        assert_eq!(off.lengths(), vec![f64::INFINITY]);
    }

    #[test]
    fn lengths_and_closed_intervals() {
        let off = RectangleOffsets {
            lo: vec![-1.0, -1.0],
            hi: vec![2.0, 1.0],
            indices: QuantileIndices::new(10, 0.2).unwrap(),
        };
        assert_eq!(off.lengths(), vec![3.0, 2.0]);
        assert_eq!(off.contains(&[0.0, 0.0], &[2.0, 1.0]), vec![true, true]);
        assert_eq!(off.contains(&[0.0, 0.0], &[2.5, -1.0]), vec![false, true]);
    }

    #[test]
    fn perfect_regressor_gives_zero_offsets() {
        let h = Hierarchy::type_a(1).unwrap();
        let x = DMatrix::from_fn(30, 3, |t, j| (t * 3 + j) as f64);
        let truth: Vec<f64> = h.aggregate(&[1.0; 12]).unwrap().iter().copied().collect();
        let y = DMatrix::from_fn(30, 16, |_, i| truth[i]);
        let reg = FittedRegressor::constant(truth.clone());
        let model = calibrate_rectangles(&reg, ProjectionMatrix::identity(16), &x, &y, 0.2).unwrap();
        assert!(model.offsets.lo.iter().chain(&model.offsets.hi).all(|&v| v == 0.0));
        assert!(model.contains_all(&[0.0; 3], &truth));
        let ols = reconciliation_matrix(ReconciliationMethod::Ols, &h, None, None).unwrap();
        let model = calibrate_rectangles(&reg, ols, &x, &y, 0.2).unwrap();
        assert!(model.offsets.lo.iter().chain(&model.offsets.hi).all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn empty_calibration_is_an_error() {
        let reg = FittedRegressor::constant(vec![0.0; 3]);
        let err = calibrate_plain_rectangles(&reg, &DMatrix::zeros(0, 3), &DMatrix::zeros(0, 3), 0.1);
        assert!(matches!(err, Err(Error::InsufficientData(_))));
        let err = calibrate_rectangles(&reg, ProjectionMatrix::identity(4), &DMatrix::zeros(2, 3), &DMatrix::zeros(2, 3), 0.1);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn whole_line_when_alpha_is_tiny() {
        let reg = FittedRegressor::constant(vec![0.0; 2]);
        let x = DMatrix::zeros(9, 3);
        let y = DMatrix::from_fn(9, 2, |t, i| (t as f64) - (i as f64) * 3.0);
        let model = calibrate_plain_rectangles(&reg, &x, &y, 0.1).unwrap();
        assert!(model.offsets.indices.whole_line());
        assert!(model.contains_all(&[0.0; 3], &[1e300, -1e300]));
    }
}
