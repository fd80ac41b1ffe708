//! Spherical and elliptical samplers.
//!
//! An elliptical vector is `c + M z` with `z` spherically symmetric in `R^k`.
//! Every sampler draws row by row, `k` standard normals first and then (for
//! the scale mixtures) one mixing variable, so a seeded RNG replays exactly.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default Student-t degrees of freedom (finite covariance).
pub const DEFAULT_DOF: f64 = 4.0;

/// Spherical generator family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SphericalKind {
    Gaussian,
    StudentT {
        #[serde(default = "default_dof")]
        dof: f64,
    },
    /// Symmetric multivariate Laplace: `√E · g` with `E ~ Exp(1)`.
    Laplace,
    /// Uniform on the unit sphere (the boundary, not the ball).
    UniformSphere,
}

fn default_dof() -> f64 {
    DEFAULT_DOF
}

impl SphericalKind {
    pub fn validate(self) -> Result<()> {
        if let SphericalKind::StudentT { dof } = self {
            if !(dof > 0.0) || !dof.is_finite() {
                return Err(Error::Config(format!("student_t needs dof > 0, got {dof}")));
            }
        }
        Ok(())
    }

    /// `Cov(z) = factor · Id_k`, or `None` when the covariance is infinite.
    pub fn covariance_factor(self, k: usize) -> Option<f64> {
        match self {
            SphericalKind::Gaussian | SphericalKind::Laplace => Some(1.0),
            SphericalKind::StudentT { dof } if dof > 2.0 => Some(dof / (dof - 2.0)),
            SphericalKind::StudentT { .. } => None,
            SphericalKind::UniformSphere => Some(1.0 / k as f64),
        }
    }
}

impl fmt::Display for SphericalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SphericalKind::Gaussian => f.write_str("gaussian"),
            SphericalKind::StudentT { dof } => write!(f, "student_t(dof={dof})"),
            SphericalKind::Laplace => f.write_str("laplace"),
            SphericalKind::UniformSphere => f.write_str("uniform_sphere"),
        }
    }
}

impl FromStr for SphericalKind {
    type Err = Error;

    /// Accepts `gaussian`, `laplace`, `uniform_sphere`, `student_t` and
    /// `student_t:<dof>`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, dof) = match s.split_once(':') {
            Some((name, dof)) => {
                let dof = dof
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad dof '{dof}'")))?;
                (name.to_string(), Some(dof))
            }
            None => (s, None),
        };
        let kind = match (name.as_str(), dof) {
            ("gaussian", None) => SphericalKind::Gaussian,
            ("laplace", None) => SphericalKind::Laplace,
            ("uniform_sphere", None) => SphericalKind::UniformSphere,
            ("student_t", dof) => SphericalKind::StudentT { dof: dof.unwrap_or(DEFAULT_DOF) },
            _ => {
                return Err(Error::Config(format!(
                    "unknown spherical kind '{name}' (expected gaussian|student_t|laplace|uniform_sphere)"
                )))
            }
        };
        kind.validate()?;
        Ok(kind)
    }
}

/// Law of `center + mixing · z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipticalSpec {
    pub kind: SphericalKind,
    pub center: DVector<f64>,
    pub mixing: DMatrix<f64>,
}

impl EllipticalSpec {
    pub fn new(kind: SphericalKind, center: DVector<f64>, mixing: DMatrix<f64>) -> Result<Self> {
        kind.validate()?;
        if mixing.ncols() == 0 {
            return Err(Error::Validation("mixing matrix needs at least one column".into()));
        }
        if center.len() != mixing.nrows() {
            return Err(Error::Validation(format!(
                "center has length {}, mixing has {} rows",
                center.len(),
                mixing.nrows()
            )));
        }
        Ok(Self { kind, center, mixing })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `M Mᵀ`, the covariance up to the generator's scalar factor.
    pub fn scale_matrix(&self) -> DMatrix<f64> {
        &self.mixing * self.mixing.transpose()
    }

    /// Covariance of the elliptical law when it exists.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        self.kind
            .covariance_factor(self.mixing.ncols())
            .map(|f| self.scale_matrix() * f)
    }
}

/// Fills `out` with one spherical draw of the given kind.
pub fn draw_spherical_into<R: Rng + ?Sized>(kind: SphericalKind, out: &mut [f64], rng: &mut R) {
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    let scale = match kind {
        SphericalKind::Gaussian => 1.0,
        SphericalKind::StudentT { dof } => {
            let chi2: f64 = ChiSquared::new(dof)
                .expect("dof validated before sampling")
                .sample(rng);
            (dof / chi2).sqrt()
        }
        SphericalKind::Laplace => {
            let e: f64 = Exp1.sample(rng);
            e.sqrt()
        }
        SphericalKind::UniformSphere => {
            let norm = out.iter().map(|v| v * v).sum::<f64>().sqrt();
            1.0 / norm
        }
    };
    if scale != 1.0 {
        for v in out.iter_mut() {
            *v *= scale;
        }
    }
}

/// `count × k` matrix of i.i.d. spherical rows.
pub fn sample_spherical<R: Rng + ?Sized>(
    kind: SphericalKind,
    k: usize,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    kind.validate()?;
    if k == 0 || count == 0 {
        return Err(Error::Validation(format!("need k >= 1 and count >= 1, got k={k}, count={count}")));
    }
    let mut out = DMatrix::zeros(count, k);
    let mut row = vec![0.0; k];
    for i in 0..count {
        draw_spherical_into(kind, &mut row, rng);
        for (j, v) in row.iter().enumerate() {
            out[(i, j)] = *v;
        }
    }
    Ok(out)
}

/// `count × m` matrix with rows `c + M z_i`.
pub fn sample_elliptical<R: Rng + ?Sized>(
    spec: &EllipticalSpec,
    count: usize,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let z = sample_spherical(spec.kind, spec.mixing.ncols(), count, rng)?;
    let mut out = z * spec.mixing.transpose();
    for mut row in out.row_iter_mut() {
        row += spec.center.transpose();
    }
    Ok(out)
}
