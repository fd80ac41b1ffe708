use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::quantile::{order_statistic, QuantileIndices};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::SymmetricMatrix;
use crate::projection::{projection_from_weight, ProjectionMatrix};
use crate::regression::Regressor;

/// Where the ellipsoid is centred.
#[derive(Debug, Clone, Copy)]
pub enum EllipsoidCenter<'a> {
    /// The raw forecast `μ̂(x)`.
    Plain,
    /// `P_A μ̂(x)`, the `A`-orthogonal projection onto the coherent subspace.
    Reconciled(&'a Hierarchy),
}

/// Ellipsoidal prediction region `{y : ‖y − c(x)‖_A ≤ r}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipsoidModel<R> {
    pub regressor: R,
    pub a: SymmetricMatrix,
    /// `P_A` and the hierarchy it reconciles onto.
    pub projection: Option<(Hierarchy, ProjectionMatrix)>,
    pub radius: f64,
    pub indices: QuantileIndices,
}

impl<R: Regressor> EllipsoidModel<R> {
    pub fn center(&self, x: &[f64]) -> DVector<f64> {
        let raw = self.regressor.predict(x);
        match &self.projection {
            Some((h, p)) => p.reconcile(h, &raw),
            None => raw,
        }
    }

    pub fn contains(&self, x: &[f64], y: &[f64]) -> bool {
        self.contains_forecast(self.center(x).as_slice(), y)
    }

    /// Membership test given an already computed center.
    pub fn contains_forecast(&self, center: &[f64], y: &[f64]) -> bool {
        let d: Vec<f64> = y.iter().zip(center).map(|(a, b)| a - b).collect();
        a_norm(&self.a, &d) <= self.radius
    }

    pub fn normalized_volume(&self) -> Result<f64> {
        normalized_volume(&self.a, self.radius)
    }
}

fn a_norm(a: &SymmetricMatrix, d: &[f64]) -> f64 {
    a.quadratic_form(d).max(0.0).sqrt()
}

/// `‖y_t − c_t‖_A` for each row.
pub fn ellipsoid_scores(a: &SymmetricMatrix, centers: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<Vec<f64>> {
    if centers.shape() != targets.shape() {
        return Err(Error::Validation(format!(
            "centers are {:?} but targets are {:?}",
            centers.shape(),
            targets.shape()
        )));
    }
    if a.dim() != targets.ncols() {
        return Err(Error::Validation(format!("A is {0}x{0}, targets have {1} columns", a.dim(), targets.ncols())));
    }
    let diff = targets - centers;
    // row-wise quadratic form: sum_j (D A)_{tj} D_{tj}
    let da = &diff * a.as_matrix();
    Ok(diff
        .row_iter()
        .zip(da.row_iter())
        .map(|(d, e)| d.dot(&e).max(0.0).sqrt())
        .collect())
}

/// Conformal radius: `s_(⌈(T+1)(1−α)⌉)` with `s_(0) = 0`.
pub fn ellipsoid_radius(scores: &[f64], alpha: f64) -> Result<(f64, QuantileIndices)> {
    let indices = QuantileIndices::new(scores.len(), alpha)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((order_statistic(&sorted, indices.joint_hi, 0.0), indices))
}

/// `r · det(A)^{−1/(2m)}`, proportional to the `m`-th root of the volume.
pub fn normalized_volume(a: &SymmetricMatrix, radius: f64) -> Result<f64> {
    if radius.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let m = a.dim() as f64;
    Ok(radius * (-a.log_det()? / (2.0 * m)).exp())
}

pub fn calibrate_ellipsoid<R: Regressor>(
    regressor: R,
    a: SymmetricMatrix,
    calib_features: &DMatrix<f64>,
    calib_targets: &DMatrix<f64>,
    alpha: f64,
    center: EllipsoidCenter<'_>,
) -> Result<EllipsoidModel<R>> {
    let m = regressor.output_dim();
    if a.dim() != m {
        return Err(Error::Validation(format!("A is {0}x{0}, regressor outputs {m}", a.dim())));
    }
    if calib_features.nrows() != calib_targets.nrows() {
        return Err(Error::Validation(format!(
            "{} feature rows but {} target rows",
            calib_features.nrows(),
            calib_targets.nrows()
        )));
    }
    let projection = match center {
        EllipsoidCenter::Plain => None,
        EllipsoidCenter::Reconciled(h) => {
            if h.m() != m {
                return Err(Error::Validation(format!("hierarchy has {} nodes, regressor outputs {m}", h.m())));
            }
            Some((h.clone(), projection_from_weight(h, &a)?))
        }
    };
    let mut centers = regressor.predict_rows(calib_features);
    if let Some((h, p)) = &projection {
        centers = p.reconcile_rows(h, &centers);
    }
    let scores = ellipsoid_scores(&a, &centers, calib_targets)?;
    let (radius, indices) = ellipsoid_radius(&scores, alpha)?;
    Ok(EllipsoidModel {
        regressor,
        a,
        projection,
        radius,
        indices,
    })
}
