//! Dense linear-algebra kernels: SPD solves, pseudo-inverse, trace helpers.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative eigenvalue cutoff for [`pseudo_inverse`].
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

const SYMMETRY_TOL: f64 = 1e-10;

/// A square matrix known to be symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DMatrix<f64>", into = "DMatrix<f64>")]
pub struct SymmetricMatrix(DMatrix<f64>);

impl SymmetricMatrix {
    /// Validates near-symmetry (`‖A − Aᵀ‖∞ ≤ 1e−10 (1 + ‖A‖∞)`) and stores
    /// `(A + Aᵀ)/2`.
    pub fn new(a: DMatrix<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Validation(format!(
                "expected a square matrix, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        let asym = (&a - a.transpose()).amax();
        if asym.is_nan() || asym > SYMMETRY_TOL * (1.0 + a.amax()) {
            return Err(Error::Validation(format!("matrix is not symmetric (gap {asym:e})")));
        }
        Ok(Self::symmetrized(a))
    }

    /// Stores `(A + Aᵀ)/2` without checking the asymmetry gap.
    pub fn symmetrized(a: DMatrix<f64>) -> Self {
        assert!(a.is_square(), "symmetrized needs a square matrix");
        let sym = (&a + a.transpose()) * 0.5;
        Self(sym)
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.0.diagonal().iter().copied().collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `self + shift · Id`.
    pub fn shifted(&self, shift: f64) -> Self {
        let mut a = self.0.clone();
        for i in 0..a.nrows() {
            a[(i, i)] += shift;
        }
        Self(a)
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = SymmetricEigen::new(self.0.clone()).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// `log det` through a Cholesky factorisation.
    pub fn log_det(&self) -> Result<f64> {
        let chol = Cholesky::new(self.0.clone()).ok_or(Error::NotPositiveDefinite)?;
        Ok(2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
    }

    /// `vᵀ A v`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        let n = self.dim();
        debug_assert_eq!(v.len(), n);
        let mut acc = 0.0;
        for j in 0..n {
            let col = self.0.column(j);
            let mut inner = 0.0;
            for i in 0..n {
                inner += col[i] * v[i];
            }
            acc += inner * v[j];
        }
        acc
    }
}

impl TryFrom<DMatrix<f64>> for SymmetricMatrix {
    type Error = Error;
    fn try_from(a: DMatrix<f64>) -> Result<Self> {
        Self::new(a)
    }
}

impl From<SymmetricMatrix> for DMatrix<f64> {
    fn from(a: SymmetricMatrix) -> Self {
        a.0
    }
}

/// Solves `a X = b` for positive definite `a`.
pub fn spd_solve(a: &SymmetricMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if b.nrows() != a.dim() {
        return Err(Error::Validation(format!(
            "right-hand side has {} rows, expected {}",
            b.nrows(),
            a.dim()
        )));
    }
    let chol = Cholesky::new(a.as_matrix().clone()).ok_or(Error::NotPositiveDefinite)?;
    Ok(chol.solve(b))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix.
///
/// Eigenvalues with `|λ| ≤ rel_tol · max|λ|` are treated as zero.
pub fn pseudo_inverse(a: &SymmetricMatrix, rel_tol: f64) -> SymmetricMatrix {
    let dim = a.dim();
    let eig = SymmetricEigen::new(a.as_matrix().clone());
    let largest = eig.eigenvalues.amax();
    if largest == 0.0 || !largest.is_finite() {
        return SymmetricMatrix(DMatrix::zeros(dim, dim));
    }
    let cutoff = rel_tol * largest;
    let inv: Vec<f64> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l.abs() > cutoff { 1.0 / l } else { 0.0 })
        .collect();
    let v = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(dim, dim, |i, j| v[(i, j)] * inv[j]);
    SymmetricMatrix::symmetrized(scaled * v.transpose())
}

/// `Tr(w · b)` as the sum of elementwise products of `w` and `bᵀ`.
pub fn trace_of_product(w: &SymmetricMatrix, b: &DMatrix<f64>) -> Result<f64> {
    let dim = w.dim();
    if b.nrows() != dim || b.ncols() != dim {
        return Err(Error::Validation(format!(
            "expected a {dim}x{dim} matrix, got {}x{}",
            b.nrows(),
            b.ncols()
        )));
    }
    let wm = w.as_matrix();
    let mut acc = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            acc += wm[(i, j)] * b[(j, i)];
        }
    }
    Ok(acc)
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_solve() {
        let b = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let x = spd_solve(&SymmetricMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two_inverse() {
        let a = SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0])).unwrap();
        let x = spd_solve(&a, &DMatrix::identity(2, 2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]) / 3.0;
        assert!(rel_err(&x, &expected) < 1e-12);
        // multiply back
        assert!(rel_err(&(a.as_matrix() * &x), &DMatrix::identity(2, 2)) < 1e-12);
    }

    #[test]
    fn singular_is_rejected() {
        let a = SymmetricMatrix::new(DMatrix::from_element(2, 2, 1.0)).unwrap();
        assert!(matches!(spd_solve(&a, &DMatrix::identity(2, 2)), Err(Error::NotPositiveDefinite)));
        assert!(matches!(a.log_det(), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn rejects_asymmetric_and_non_square() {
        assert!(SymmetricMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
        assert!(SymmetricMatrix::new(DMatrix::zeros(2, 3)).is_err());
        let tiny = DMatrix::from_row_slice(2, 2, &[1.0, 1.0 + 1e-13, 1.0, 1.0]);
        let s = SymmetricMatrix::new(tiny).unwrap();
        assert_eq!(s.as_matrix()[(0, 1)], s.as_matrix()[(1, 0)]);
    }

    #[test]
    fn pinv_simple_cases() {
        let id = SymmetricMatrix::identity(4);
        assert!(rel_err(pseudo_inverse(&id, DEFAULT_PINV_TOL).as_matrix(), id.as_matrix()) < 1e-14);
        let d = SymmetricMatrix::from_diagonal(&[2.0, 0.0]);
        let p = pseudo_inverse(&d, DEFAULT_PINV_TOL);
        assert!(rel_err(p.as_matrix(), &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.0]))) < 1e-14);
        let zero = SymmetricMatrix::symmetrized(DMatrix::zeros(3, 3));
        assert_eq!(pseudo_inverse(&zero, DEFAULT_PINV_TOL).as_matrix(), &DMatrix::zeros(3, 3));
    }

    #[test]
    fn pinv_penrose_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(dim, rank) in &[(5, 2), (8, 8), (10, 3), (6, 1)] {
            let a = SymmetricMatrix::symmetrized(random_psd(dim, rank, &mut rng));
            let p = pseudo_inverse(&a, DEFAULT_PINV_TOL);
            let (am, pm) = (a.as_matrix(), p.as_matrix());
            assert!(rel_err(&(am * pm * am), am) < 1e-7);
            assert!(rel_err(&(pm * am * pm), pm) < 1e-7);
            let ap = am * pm;
            let pa = pm * am;
            assert!(rel_err(&ap.transpose(), &ap) < 1e-7);
            assert!(rel_err(&pa.transpose(), &pa) < 1e-7);
            // pinv is an involution on PSD inputs
            let back = pseudo_inverse(&p, DEFAULT_PINV_TOL);
            assert!(rel_err(back.as_matrix(), am) < 1e-6);
        }
    }

    #[test]
    fn pinv_agrees_with_solve_on_pd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = SymmetricMatrix::symmetrized(random_psd(7, 7, &mut rng)).shifted(0.5);
        let inv = spd_solve(&a, &DMatrix::identity(7, 7)).unwrap();
        let p = pseudo_inverse(&a, DEFAULT_PINV_TOL);
        assert!(rel_err(p.as_matrix(), &inv) < 1e-7);
    }

    #[test]
    fn trace_helpers() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = random_psd(4, 4, &mut rng);
        let id = SymmetricMatrix::identity(4);
        assert!((trace_of_product(&id, &sigma).unwrap() - sigma.trace()).abs() < 1e-12);

        let w = SymmetricMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let expected: f64 = (0..4).map(|i| (i + 1) as f64 * sigma[(i, i)]).sum();
        assert!((trace_of_product(&w, &sigma).unwrap() - expected).abs() < 1e-12);

        let w = SymmetricMatrix::symmetrized(gaussian_matrix(3, 3, &mut rng));
        let b = gaussian_matrix(3, 3, &mut rng);
        let naive = (w.as_matrix() * &b).trace();
        assert!((trace_of_product(&w, &b).unwrap() - naive).abs() < 1e-12);
        assert!(trace_of_product(&w, &DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn log_det_and_quadratic_form() {
        let a = SymmetricMatrix::from_diagonal(&[4.0, 4.0, 4.0]);
        assert!((a.log_det().unwrap() - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert_eq!(a.quadratic_form(&[1.0, 0.0, 2.0]), 20.0);
    }
}
