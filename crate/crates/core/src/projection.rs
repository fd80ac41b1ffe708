//! Reconciliation projections onto the coherent subspace `Im(H)`.
//!
//! For a positive definite weight `W`, `P_W = H (Hᵀ W H)⁻¹ Hᵀ W` is the
//! orthogonal projection onto `Im(H)` for the `‖·‖_W` norm. The named
//! reconciliation methods differ only in the choice of `W`:
//!
//! | method | weight |
//! |--------|--------|
//! | Direct | none (`P = Id`) |
//! | OLS    | `Id` |
//! | WLS    | `Diag(Σ̂)⁺` |
//! | MinT   | `(Σ̂ + ridge·Id)⁺` |
//! | Combi  | average of the OLS, WLS and MinT matrices |

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::linalg::{pseudo_inverse, spd_solve, SymmetricMatrix, DEFAULT_PINV_TOL};

/// MinT ridge multiplier: the default ridge is this times `Tr(Σ̂)/m`.
pub const DEFAULT_MINT_RIDGE_SCALE: f64 = 1e-8;

/// Reconciliation method names.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconciliationMethod {
    Direct,
    Ols,
    Wls,
    #[serde(rename = "mint")]
    MinT,
    Combi,
}

impl ReconciliationMethod {
    pub const ALL: [ReconciliationMethod; 5] = [
        ReconciliationMethod::Direct,
        ReconciliationMethod::Ols,
        ReconciliationMethod::Wls,
        ReconciliationMethod::Combi,
        ReconciliationMethod::MinT,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReconciliationMethod::Direct => "direct",
            ReconciliationMethod::Ols => "ols",
            ReconciliationMethod::Wls => "wls",
            ReconciliationMethod::MinT => "mint",
            ReconciliationMethod::Combi => "combi",
        }
    }

    /// Whether the method needs a covariance estimate.
    pub fn needs_covariance(self) -> bool {
        matches!(
            self,
            ReconciliationMethod::Wls | ReconciliationMethod::MinT | ReconciliationMethod::Combi
        )
    }
}

impl fmt::Display for ReconciliationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ReconciliationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "direct" => Ok(ReconciliationMethod::Direct),
            "ols" => Ok(ReconciliationMethod::Ols),
            "wls" => Ok(ReconciliationMethod::Wls),
            "mint" => Ok(ReconciliationMethod::MinT),
            "combi" => Ok(ReconciliationMethod::Combi),
            other => Err(Error::Config(format!(
                "unknown reconciliation method '{other}' (expected direct|ols|wls|mint|combi)"
            ))),
        }
    }
}

/// How a projection matrix was built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Direct,
    Ols,
    Wls,
    #[serde(rename = "mint")]
    MinT,
    Combi,
    CustomW,
    BottomUp,
}

impl From<ReconciliationMethod> for ProjectionKind {
    fn from(m: ReconciliationMethod) -> Self {
        match m {
            ReconciliationMethod::Direct => ProjectionKind::Direct,
            ReconciliationMethod::Ols => ProjectionKind::Ols,
            ReconciliationMethod::Wls => ProjectionKind::Wls,
            ReconciliationMethod::MinT => ProjectionKind::MinT,
            ReconciliationMethod::Combi => ProjectionKind::Combi,
        }
    }
}

/// Provenance of the weight matrix `W`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightDescriptor {
    None,
    Identity,
    DiagSigmaInverse,
    SigmaInverse { ridge: f64 },
    FixedVector { weights: Vec<f64> },
    Custom,
    Average,
}

/// An `m × m` matrix `P` with `P H = H`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix {
    p: DMatrix<f64>,
    kind: ProjectionKind,
    weight: WeightDescriptor,
}

impl ProjectionMatrix {
    pub fn identity(m: usize) -> Self {
        Self {
            p: DMatrix::identity(m, m),
            kind: ProjectionKind::Direct,
            weight: WeightDescriptor::None,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn weight(&self) -> &WeightDescriptor {
        &self.weight
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    /// `P · v`.
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p * v
    }

    /// Projects every row of `rows` (a `T × m` matrix of forecasts).
    pub fn apply_rows(&self, rows: &DMatrix<f64>) -> DMatrix<f64> {
        rows * self.p.transpose()
    }

    /// `P μ` for each row, computed as `H μ[0..n] + P d` with the coherence
    /// defect `d = μ − H μ[0..n]`. Equal to [`Self::apply_rows`] for any
    /// projection onto the coherent subspace, but rounding scales with `d`
    /// rather than `μ`, so nearly coherent rows stay put under an
    /// ill-conditioned `P`.
    pub fn reconcile_rows(&self, h: &Hierarchy, rows: &DMatrix<f64>) -> DMatrix<f64> {
        let n = h.n();
        let coherent = rows.columns(0, n) * h.matrix().transpose();
        let defect = rows - &coherent;
        coherent + defect * self.p.transpose()
    }

    /// Single-vector form of [`Self::reconcile_rows`].
    pub fn reconcile(&self, h: &Hierarchy, v: &DVector<f64>) -> DVector<f64> {
        let coherent = h.matrix() * v.rows(0, h.n());
        let defect = v - &coherent;
        coherent + &self.p * defect
    }

    /// `‖P H − H‖∞ / (1 + ‖H‖∞)`.
    pub fn preservation_error(&self, h: &Hierarchy) -> f64 {
        let hm = h.matrix();
        (&self.p * hm - hm).amax() / (1.0 + hm.amax())
    }

    /// `‖P P − P‖∞ / (1 + ‖P‖∞)`.
    pub fn idempotence_error(&self) -> f64 {
        (&self.p * &self.p - &self.p).amax() / (1.0 + self.p.amax())
    }
}

/// `P_W = H (Hᵀ W H)⁻¹ Hᵀ W` for a positive definite `W`.
pub fn projection_from_weight(h: &Hierarchy, w: &SymmetricMatrix) -> Result<ProjectionMatrix> {
    let mut p = weighted_projection(h, w)?;
    p.kind = ProjectionKind::CustomW;
    p.weight = WeightDescriptor::Custom;
    Ok(p)
}

/// Bottom-up reconciliation `H [Id_n 0]`: keeps the leaf forecasts and
/// re-aggregates them. A projection onto the coherent subspace, but not
/// of the `P_W` family.
pub fn bottom_up(h: &Hierarchy) -> ProjectionMatrix {
    let (m, n) = (h.m(), h.n());
    let mut p = DMatrix::zeros(m, m);
    p.columns_mut(0, n).copy_from(h.matrix());
    ProjectionMatrix {
        p,
        kind: ProjectionKind::BottomUp,
        weight: WeightDescriptor::None,
    }
}

/// `P_w` for a diagonal weight vector `w` with positive entries.
pub fn projection_from_weight_vector(h: &Hierarchy, w: &[f64]) -> Result<ProjectionMatrix> {
    if w.len() != h.m() {
        return Err(Error::Validation(format!("weight vector has length {}, expected {}", w.len(), h.m())));
    }
    if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Validation("weights must be positive and finite".into()));
    }
    let mut p = weighted_projection(h, &SymmetricMatrix::from_diagonal(w))?;
    p.kind = ProjectionKind::CustomW;
    p.weight = WeightDescriptor::FixedVector { weights: w.to_vec() };
    Ok(p)
}

fn weighted_projection(h: &Hierarchy, w: &SymmetricMatrix) -> Result<ProjectionMatrix> {
    let m = h.m();
    if w.dim() != m {
        return Err(Error::Validation(format!("weight matrix is {}x{0}, expected {m}x{m}", w.dim())));
    }
    let hm = h.matrix();
    let ht_w = hm.transpose() * w.as_matrix();
    let gram = SymmetricMatrix::symmetrized(&ht_w * hm);
    let coef = spd_solve(&gram, &ht_w)?;
    Ok(ProjectionMatrix {
        p: hm * coef,
        kind: ProjectionKind::CustomW,
        weight: WeightDescriptor::Custom,
    })
}

/// Empirical residual covariance with `1/T` normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub sigma_hat: SymmetricMatrix,
    pub sample_count: usize,
    pub mean_residual: Vec<f64>,
}

/// `s̄ = mean(s_t)`, `Σ̂ = (1/T) Σ (s_t − s̄)(s_t − s̄)ᵀ` over the rows of
/// `residuals` (a `T × m` matrix).
pub fn estimate_covariance(residuals: &DMatrix<f64>) -> Result<CovarianceEstimate> {
    let t = residuals.nrows();
    if t < 2 {
        return Err(Error::InsufficientData(format!(
            "covariance estimation needs at least 2 residuals, got {t}"
        )));
    }
    let mean = residuals.row_mean();
    let mut centered = residuals.clone();
    for mut row in centered.row_iter_mut() {
        row -= &mean;
    }
    let sigma = centered.tr_mul(&centered) / t as f64;
    Ok(CovarianceEstimate {
        sigma_hat: SymmetricMatrix::symmetrized(sigma),
        sample_count: t,
        mean_residual: mean.iter().copied().collect(),
    })
}

/// Builds the projection for a named reconciliation method.
///
/// `ridge` only affects MinT; `None` uses `1e−8 · Tr(Σ̂)/m`.
pub fn reconciliation_matrix(
    method: ReconciliationMethod,
    h: &Hierarchy,
    cov: Option<&CovarianceEstimate>,
    ridge: Option<f64>,
) -> Result<ProjectionMatrix> {
    let m = h.m();
    let need_cov = || -> Result<&CovarianceEstimate> {
        let cov = cov.ok_or_else(|| {
            Error::Config(format!("method {method} needs a covariance estimate"))
        })?;
        if cov.sigma_hat.dim() != m {
            return Err(Error::Validation(format!(
                "covariance is {}x{0}, hierarchy has {m} nodes",
                cov.sigma_hat.dim()
            )));
        }
        Ok(cov)
    };
    match method {
        ReconciliationMethod::Direct => Ok(ProjectionMatrix::identity(m)),
        ReconciliationMethod::Ols => ols(h),
        ReconciliationMethod::Wls => wls(h, need_cov()?),
        ReconciliationMethod::MinT => mint(h, need_cov()?, ridge),
        ReconciliationMethod::Combi => {
            let cov = need_cov()?;
            let parts = [ols(h)?, wls(h, cov)?, mint(h, cov, ridge)?];
            let sum = parts.iter().fold(DMatrix::zeros(m, m), |acc, p| acc + &p.p);
            Ok(ProjectionMatrix {
                p: sum / 3.0,
                kind: ProjectionKind::Combi,
                weight: WeightDescriptor::Average,
            })
        }
    }
}

fn ols(h: &Hierarchy) -> Result<ProjectionMatrix> {
    let mut p = weighted_projection(h, &SymmetricMatrix::identity(h.m()))?;
    p.kind = ProjectionKind::Ols;
    p.weight = WeightDescriptor::Identity;
    Ok(p)
}

/// Pseudo-inverse of `Diag(Σ̂)`: zero-variance nodes get weight zero.
pub fn diag_inverse_weight(cov: &CovarianceEstimate) -> SymmetricMatrix {
    let diag = SymmetricMatrix::from_diagonal(&cov.sigma_hat.diagonal());
    pseudo_inverse(&diag, DEFAULT_PINV_TOL)
}

fn wls(h: &Hierarchy, cov: &CovarianceEstimate) -> Result<ProjectionMatrix> {
    let mut p = weighted_projection(h, &diag_inverse_weight(cov))?;
    p.kind = ProjectionKind::Wls;
    p.weight = WeightDescriptor::DiagSigmaInverse;
    Ok(p)
}

fn mint(h: &Hierarchy, cov: &CovarianceEstimate, ridge: Option<f64>) -> Result<ProjectionMatrix> {
    let m = h.m() as f64;
    let ridge = ridge.unwrap_or(DEFAULT_MINT_RIDGE_SCALE * cov.sigma_hat.trace() / m);
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("MinT ridge must be >= 0, got {ridge}")));
    }
    let w = pseudo_inverse(&cov.sigma_hat.shifted(ridge), DEFAULT_PINV_TOL);
    let mut p = weighted_projection(h, &w).map_err(|e| match e {
        Error::NotPositiveDefinite => Error::NearSingularCovariance(format!(
            "Hᵀ Σ̂⁺ H is not positive definite after a ridge of {ridge:e}"
        )),
        other => other,
    })?;
    p.kind = ProjectionKind::MinT;
    p.weight = WeightDescriptor::SigmaInverse { ridge };
    Ok(p)
}
