//! Synthetic hierarchical regression data.
//!
//! Leaves follow `y_i = f_i(x) + ε_i` where each `f_i` is a signed sum of
//! basis functions, `x ~ N((10, −5, 5), diag(2, 2, 1))` and
//! `ε ~ N(10·𝟙, R)`; aggregates are obtained through the structural matrix.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::elliptical::{draw_spherical_into, EllipticalSpec, SphericalKind};
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::regression::{BasisFunction, N_BASIS};

pub const FEATURE_MEAN: [f64; 3] = [10.0, -5.0, 5.0];
pub const FEATURE_VAR: [f64; 3] = [2.0, 2.0, 1.0];
pub const NOISE_MEAN: f64 = 10.0;
pub const NOISE_VARIANCE: f64 = 100.0;
pub const MASK_PROBABILITY: f64 = 0.8;

/// One signed term of a leaf's effect function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Effect {
    pub basis: BasisFunction,
    pub sign: i8,
}

/// A drawn experiment: effect functions, noise law and covariate masks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub hierarchy: Hierarchy,
    /// Per leaf, the terms of `f_i`.
    pub effects: Vec<Vec<Effect>>,
    /// Leaf noise covariance `R` (Gaussian case).
    pub correlation: DMatrix<f64>,
    /// `F` with `F Fᵀ = R`.
    pub noise_factor: DMatrix<f64>,
    /// Per node: whether the third covariate is available to the forecaster.
    pub masks: Vec<bool>,
    pub noise_mean: f64,
    pub feature_mean: [f64; 3],
    pub feature_var: [f64; 3],
    /// Law of the leaf noise. Anything but Gaussian is an extension of the
    /// benchmark design.
    #[serde(default = "gaussian")]
    pub noise_kind: SphericalKind,
}

fn gaussian() -> SphericalKind {
    SphericalKind::Gaussian
}

impl ExperimentSpec {
    pub fn n(&self) -> usize {
        self.hierarchy.n()
    }

    pub fn m(&self) -> usize {
        self.hierarchy.m()
    }

    /// `f(x)` for every leaf.
    pub fn leaf_means(&self, x: &[f64]) -> Vec<f64> {
        self.effects
            .iter()
            .map(|terms| terms.iter().map(|e| f64::from(e.sign) * e.basis.eval(x)).sum())
            .collect()
    }

    /// Leaf noise as an elliptical law `noise_mean·𝟙 + F z`.
    pub fn noise_law(&self) -> Result<EllipticalSpec> {
        EllipticalSpec::new(
            self.noise_kind,
            DVector::from_element(self.n(), self.noise_mean),
            self.noise_factor.clone(),
        )
    }

    /// Same spec with another noise law.
    pub fn with_noise_kind(mut self, kind: SphericalKind) -> Result<Self> {
        kind.validate()?;
        self.noise_kind = kind;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let n = self.n();
        if self.effects.len() != n {
            return Err(Error::Validation(format!("{} effect lists for {n} leaves", self.effects.len())));
        }
        if self.masks.len() != self.m() {
            return Err(Error::Validation(format!("{} masks for {} nodes", self.masks.len(), self.m())));
        }
        if self.correlation.shape() != (n, n) || self.noise_factor.nrows() != n {
            return Err(Error::Validation("noise matrices do not match the number of leaves".into()));
        }
        self.noise_kind.validate()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Draws a random experiment specification for `h`.
pub fn draw_spec<R: Rng + ?Sized>(h: &Hierarchy, rng: &mut R) -> ExperimentSpec {
    let n = h.n();
    let m_mat = loop {
        let m_mat = DMatrix::<f64>::from_fn(n, n, |_, _| StandardNormal.sample(rng));
        if m_mat.column_iter().all(|c| c.iter().any(|&v| v != 0.0)) {
            break m_mat;
        }
    };
    // D = √Diag(MᵀM); F = 10·D⁻¹Mᵀ so that F Fᵀ = 100·D⁻¹MᵀM D⁻¹.
    let d_inv: Vec<f64> = m_mat.column_iter().map(|c| 1.0 / c.norm()).collect();
    let scale = NOISE_VARIANCE.sqrt();
    let mut factor = m_mat.transpose();
    for (i, mut row) in factor.row_iter_mut().enumerate() {
        row *= scale * d_inv[i];
    }
    let mut correlation = &factor * factor.transpose();
    for i in 0..n {
        correlation[(i, i)] = NOISE_VARIANCE;
    }

    let effects = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=N_BASIS);
            (0..k)
                .map(|_| {
                    let idx = rng.random_range(1..=N_BASIS as u8);
                    let sign = if rng.random_bool(0.5) { 1 } else { -1 };
                    Effect {
                        basis: BasisFunction::try_from(idx).expect("index in range"),
                        sign,
                    }
                })
                .collect()
        })
        .collect();

    let masks = (0..h.m())
        .map(|i| i >= n || rng.random_bool(MASK_PROBABILITY))
        .collect();

    ExperimentSpec {
        hierarchy: h.clone(),
        effects,
        correlation,
        noise_factor: factor,
        masks,
        noise_mean: NOISE_MEAN,
        feature_mean: FEATURE_MEAN,
        feature_var: FEATURE_VAR,
        noise_kind: SphericalKind::Gaussian,
    }
}

/// Features and full (coherent) target vectors, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: DMatrix<f64>,
    pub targets: DMatrix<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rows at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            targets: self.targets.select_rows(idx),
        }
    }

    /// CSV with header `x1,x2,x3,y1..ym`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let m = self.targets.ncols();
        let mut header: Vec<String> = (1..=self.features.ncols()).map(|j| format!("x{j}")).collect();
        header.extend((1..=m).map(|i| format!("y{i}")));
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for t in 0..self.len() {
            record.clear();
            record.extend(self.features.row(t).iter().map(|v| v.to_string()));
            record.extend(self.targets.row(t).iter().map(|v| v.to_string()));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Draws `t` i.i.d. observations.
pub fn generate<R: Rng + ?Sized>(spec: &ExperimentSpec, t: usize, rng: &mut R) -> Result<Dataset> {
    if t == 0 {
        return Err(Error::InsufficientData("cannot generate an empty dataset".into()));
    }
    spec.validate()?;
    let n = spec.n();
    let k = spec.noise_factor.ncols();
    let sd: Vec<f64> = spec.feature_var.iter().map(|v| v.sqrt()).collect();

    let mut features = DMatrix::zeros(t, 3);
    let mut means = DMatrix::zeros(t, n);
    let mut z = DMatrix::zeros(t, k);
    let mut zrow = vec![0.0; k];
    for r in 0..t {
        let x: [f64; 3] = std::array::from_fn(|j| {
            let e: f64 = StandardNormal.sample(rng);
            spec.feature_mean[j] + sd[j] * e
        });
        draw_spherical_into(spec.noise_kind, &mut zrow, rng);
        for j in 0..3 {
            features[(r, j)] = x[j];
        }
        for (i, v) in spec.leaf_means(&x).into_iter().enumerate() {
            means[(r, i)] = v;
        }
        for (j, v) in zrow.iter().enumerate() {
            z[(r, j)] = *v;
        }
    }
    let mut leaves = means + z * spec.noise_factor.transpose();
    leaves.add_scalar_mut(spec.noise_mean);
    let targets = leaves * spec.hierarchy.matrix().transpose();
    Ok(Dataset { features, targets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::DEFAULT_COHERENCE_TOL;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(seed: u64) -> ExperimentSpec {
        let h = Hierarchy::benchmark_config(1).unwrap();
        draw_spec(&h, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn correlation_has_fixed_diagonal_and_is_psd() {
        for seed in 0..20 {
            let s = spec(seed);
            for i in 0..s.n() {
                assert!((s.correlation[(i, i)] - 100.0).abs() < 1e-9);
            }
            let eig = s.correlation.clone().symmetric_eigenvalues();
            assert!(eig.min() >= -1e-8 * 100.0);
            let ff = &s.noise_factor * s.noise_factor.transpose();
            assert!((ff - &s.correlation).amax() < 1e-9);
        }
    }

    #[test]
    fn masks_only_on_leaves() {
        let s = spec(3);
        assert_eq!(s.masks.len(), 16);
        assert!(s.masks[12..].iter().all(|&b| b));
    }

    #[test]
    fn mean_number_of_effects() {
        let h = Hierarchy::benchmark_config(1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut total = 0usize;
        let mut count = 0usize;
        for _ in 0..1000 {
            let s = draw_spec(&h, &mut rng);
            for e in &s.effects {
                assert!((1..=11).contains(&e.len()));
                assert!(e.iter().all(|t| t.sign == 1 || t.sign == -1));
                total += e.len();
                count += 1;
            }
        }
        let mean = total as f64 / count as f64;
        assert!((mean - 6.0).abs() < 0.3, "mean k = {mean}");
    }

    #[test]
    fn feature_moments() {
        let s = spec(1);
        let d = generate(&s, 100_000, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mean = d.features.row_mean();
        for j in 0..3 {
            assert!((mean[j] - FEATURE_MEAN[j]).abs() < 0.05, "x{}: {}", j + 1, mean[j]);
        }
    }

    #[test]
    fn rows_are_coherent() {
        let s = spec(4);
        let d = generate(&s, 500, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        for row in d.targets.row_iter() {
            let v: Vec<f64> = row.iter().copied().collect();
            assert!(s.hierarchy.is_coherent(&v, DEFAULT_COHERENCE_TOL).unwrap());
        }
    }

    #[test]
    fn noise_covariance_matches_spec() {
        let s = spec(6);
        let t = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = generate(&s, t, &mut rng).unwrap();
        let n = s.n();
        let mut resid = d.targets.columns(0, n).into_owned();
        for r in 0..t {
            let x = [d.features[(r, 0)], d.features[(r, 1)], d.features[(r, 2)]];
            for (i, f) in s.leaf_means(&x).into_iter().enumerate() {
                resid[(r, i)] -= f;
            }
        }
        let mean = resid.row_mean();
        for i in 0..n {
            assert!((mean[i] - NOISE_MEAN).abs() < 0.2);
        }
        let centered = DMatrix::from_fn(t, n, |r, i| resid[(r, i)] - mean[i]);
        let cov = centered.tr_mul(&centered) / t as f64;
        let rel = (&cov - &s.correlation).norm() / s.correlation.norm();
        assert!(rel < 0.05, "relative Frobenius error {rel}");
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate(&spec(8), 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = generate(&spec(8), 50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn json_round_trip() {
        let s = spec(10).with_noise_kind(SphericalKind::StudentT { dof: 5.0 }).unwrap();
        let back = ExperimentSpec::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn csv_layout() {
        let s = spec(12);
        let d = generate(&s, 3, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        let header = lines.next().unwrap();
        assert!(header.starts_with("x1,x2,x3,y1,y2"));
        assert!(header.ends_with(",y16"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn empty_request_is_an_error() {
        assert!(generate(&spec(0), 0, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
