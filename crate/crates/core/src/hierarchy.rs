//! Structural matrices for aggregation hierarchies.
//!
//! A hierarchy with `n` leaves and `m` nodes is described by the `m × n`
//! structural matrix `H = [Id_n ; H_sub]`. Leaves occupy node indices
//! `0..n`; aggregate nodes follow in level order, root last. A vector
//! `u ∈ R^m` is coherent when `u = H u[0..n]`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for [`Hierarchy::is_coherent`].
pub const DEFAULT_COHERENCE_TOL: f64 = 1e-9;

/// Aggregation hierarchy and its structural matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyFile", into = "HierarchyFile")]
pub struct Hierarchy {
    h: DMatrix<f64>,
    n: usize,
    levels: Vec<Range<usize>>,
}

impl Hierarchy {
    /// Builds `H = [Id_n ; h_sub]` with two levels (leaves, aggregates).
    pub fn from_sub_matrix(n: usize, h_sub: &DMatrix<f64>) -> Result<Self> {
        let m = n + h_sub.nrows();
        Self::with_levels(n, h_sub, vec![0..n, n..m])
    }

    /// Builds `H = [Id_n ; h_sub]` with caller-supplied levels.
    ///
    /// `levels` are 0-based half-open node ranges; they must partition
    /// `0..m` in order, with the first level being exactly the leaves.
    pub fn with_levels(n: usize, h_sub: &DMatrix<f64>, levels: Vec<Range<usize>>) -> Result<Self> {
        if n < 2 {
            return Err(Error::Validation(format!("need at least 2 leaves, got {n}")));
        }
        if h_sub.ncols() != n {
            return Err(Error::Validation(format!(
                "h_sub has {} columns but the hierarchy has {n} leaves",
                h_sub.ncols()
            )));
        }
        if h_sub.nrows() == 0 {
            return Err(Error::Validation("h_sub needs at least one aggregate row".into()));
        }
        if h_sub.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("h_sub contains non-finite entries".into()));
        }
        let m = n + h_sub.nrows();
        validate_levels(&levels, n, m)?;

        let mut h = DMatrix::zeros(m, n);
        for i in 0..n {
            h[(i, i)] = 1.0;
        }
        h.view_mut((n, 0), (m - n, n)).copy_from(h_sub);
        Ok(Self { h, n, levels })
    }

    /// Depth-3 tree: root, `3^k` children, `4^k` leaves per child.
    pub fn type_a(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("type-A hierarchy needs k >= 1".into()));
        }
        let children = 3usize.pow(k);
        let per_child = 4usize.pow(k);
        Ok(Self::from_tree(&[children], per_child))
    }

    /// Depth-4 tree: root, `2^k` children, `2^k` grandchildren per child and
    /// `3^k` leaves per grandchild.
    pub fn type_b(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("type-B hierarchy needs k >= 1".into()));
        }
        let children = 2usize.pow(k);
        let grandchildren = children * children;
        let per_grandchild = 3usize.pow(k);
        Ok(Self::from_tree(&[grandchildren, children], per_grandchild))
    }

    /// Benchmark configurations 1..=6 (A1, B1, A2, B2, A3, B3).
    pub fn benchmark_config(id: u32) -> Result<Self> {
        match id {
            1 => Self::type_a(1),
            2 => Self::type_b(1),
            3 => Self::type_a(2),
            4 => Self::type_b(2),
            5 => Self::type_a(3),
            6 => Self::type_b(3),
            _ => Err(Error::Config(format!("unknown configuration id {id} (expected 1..=6)"))),
        }
    }

    // Balanced tree where `widths` lists the node counts of each aggregate level
    // from the bottom up (the root is implicit), and every bottom-level
    // aggregate owns `leaves_per_node` consecutive leaves.
    fn from_tree(widths: &[usize], leaves_per_node: usize) -> Self {
        let n = widths[0] * leaves_per_node;
        let m = n + widths.iter().sum::<usize>() + 1;
        let mut h = DMatrix::zeros(m, n);
        for i in 0..n {
            h[(i, i)] = 1.0;
        }
        let mut levels = vec![0..n];
        let mut row = n;
        for &width in widths {
            let span = n / width;
            for node in 0..width {
                for leaf in node * span..(node + 1) * span {
                    h[(row + node, leaf)] = 1.0;
                }
            }
            levels.push(row..row + width);
            row += width;
        }
        h.row_mut(row).fill(1.0);
        levels.push(row..row + 1);
        Self { h, n, levels }
    }

    /// Total node count.
    pub fn m(&self) -> usize {
        self.h.nrows()
    }

    /// Leaf count.
    pub fn n(&self) -> usize {
        self.n
    }

    /// The `m × n` structural matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    /// The aggregate block below the identity.
    pub fn sub_matrix(&self) -> DMatrix<f64> {
        self.h.rows(self.n, self.m() - self.n).into_owned()
    }

    /// Node index ranges per level, leaves first and root last.
    pub fn levels(&self) -> &[Range<usize>] {
        &self.levels
    }

    /// Level index of a node.
    pub fn level_of(&self, node: usize) -> Option<usize> {
        self.levels.iter().position(|r| r.contains(&node))
    }

    /// `H · bottom`.
    pub fn aggregate(&self, bottom: &[f64]) -> Result<DVector<f64>> {
        if bottom.len() != self.n {
            return Err(Error::Validation(format!(
                "bottom vector has length {}, expected {}",
                bottom.len(),
                self.n
            )));
        }
        Ok(&self.h * DVector::from_column_slice(bottom))
    }

    /// Whether `‖u − H u[0..n]‖∞ ≤ tol · (1 + ‖u‖∞)`.
    pub fn is_coherent(&self, u: &[f64], tol: f64) -> Result<bool> {
        if u.len() != self.m() {
            return Err(Error::Validation(format!(
                "vector has length {}, expected {}",
                u.len(),
                self.m()
            )));
        }
        if tol < 0.0 || tol.is_nan() {
            return Err(Error::Validation(format!("tolerance must be >= 0, got {tol}")));
        }
        let rebuilt = self.aggregate(&u[..self.n])?;
        let gap = u
            .iter()
            .zip(rebuilt.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let scale = u.iter().map(|v| v.abs()).fold(0.0, f64::max);
        Ok(gap <= tol * (1.0 + scale))
    }
}

fn validate_levels(levels: &[Range<usize>], n: usize, m: usize) -> Result<()> {
    if levels.first() != Some(&(0..n)) {
        return Err(Error::Validation("first level must be exactly the leaves".into()));
    }
    let mut next = 0;
    for r in levels {
        if r.start != next || r.end <= r.start {
            return Err(Error::Validation(format!(
                "levels must be contiguous, non-empty and ordered; got {r:?} at node {next}"
            )));
        }
        next = r.end;
    }
    if next != m {
        return Err(Error::Validation(format!("levels cover {next} nodes, expected {m}")));
    }
    Ok(())
}

/// JSON layout: `{"m", "n", "h_sub", "levels"}` with levels given as
/// 1-based inclusive `[lo, hi]` node ranges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyFile {
    m: usize,
    n: usize,
    h_sub: Vec<Vec<f64>>,
    #[serde(default)]
    levels: Option<Vec<[usize; 2]>>,
}

impl TryFrom<HierarchyFile> for Hierarchy {
    type Error = Error;

    fn try_from(f: HierarchyFile) -> Result<Self> {
        let rows = f.h_sub.len();
        if f.m != f.n + rows {
            return Err(Error::Validation(format!(
                "m = {} does not match n + rows(h_sub) = {}",
                f.m,
                f.n + rows
            )));
        }
        if let Some(bad) = f.h_sub.iter().find(|r| r.len() != f.n) {
            return Err(Error::Validation(format!(
                "h_sub row has {} entries, expected {}",
                bad.len(),
                f.n
            )));
        }
        let h_sub = DMatrix::from_fn(rows, f.n, |i, j| f.h_sub[i][j]);
        match f.levels {
            None => Hierarchy::from_sub_matrix(f.n, &h_sub),
            Some(levels) => {
                let mut ranges = Vec::with_capacity(levels.len());
                for [lo, hi] in levels {
                    if lo == 0 || hi < lo {
                        return Err(Error::Validation(format!("bad level range [{lo}, {hi}]")));
                    }
                    ranges.push(lo - 1..hi);
                }
                Hierarchy::with_levels(f.n, &h_sub, ranges)
            }
        }
    }
}

impl From<Hierarchy> for HierarchyFile {
    fn from(h: Hierarchy) -> Self {
        let sub = h.sub_matrix();
        HierarchyFile {
            m: h.m(),
            n: h.n,
            h_sub: sub.row_iter().map(|r| r.iter().copied().collect()).collect(),
            levels: Some(h.levels.iter().map(|r| [r.start + 1, r.end]).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn figure_one() -> Hierarchy {
        let h_sub = DMatrix::from_row_slice(
            3,
            5,
            &[
                1.0, 1.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, 1.0, //
                1.0, 1.0, 1.0, 1.0, 1.0,
            ],
        );
        Hierarchy::from_sub_matrix(5, &h_sub).unwrap()
    }

    #[test]
    fn figure_one_shape_and_aggregation() {
        let h = figure_one();
        assert_eq!((h.m(), h.n()), (8, 5));
        let y = h.aggregate(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 9.0, 15.0]);
        assert_eq!(h.levels(), &[0..5, 5..8]);
    }

    #[test]
    fn smallest_hierarchy() {
        let h = Hierarchy::from_sub_matrix(2, &DMatrix::from_row_slice(1, 2, &[1.0, 1.0])).unwrap();
        assert_eq!((h.m(), h.n()), (3, 2));
    }

    #[test]
    fn shape_errors() {
        let bad = DMatrix::<f64>::zeros(2, 4);
        assert!(matches!(Hierarchy::from_sub_matrix(5, &bad), Err(Error::Validation(_))));
        let one_leaf = DMatrix::<f64>::zeros(1, 1);
        assert!(matches!(Hierarchy::from_sub_matrix(1, &one_leaf), Err(Error::Validation(_))));
        let no_rows = DMatrix::<f64>::zeros(0, 3);
        assert!(Hierarchy::from_sub_matrix(3, &no_rows).is_err());
        let h = figure_one();
        assert!(h.aggregate(&[1.0; 4]).is_err());
        assert!(h.is_coherent(&[0.0; 7], 1e-9).is_err());
    }

    #[test]
    fn benchmark_sizes() {
        let expected = [(12, 16), (12, 19), (144, 154), (144, 165), (1728, 1756), (1728, 1801)];
        for (id, &(n, m)) in (1..=6).zip(expected.iter()) {
            let h = Hierarchy::benchmark_config(id).unwrap();
            assert_eq!((h.n(), h.m()), (n, m), "config {id}");
        }
        assert!(Hierarchy::type_a(0).is_err());
        assert!(Hierarchy::type_b(0).is_err());
        assert!(Hierarchy::benchmark_config(7).is_err());
    }

    #[test]
    fn depths_match_tree_types() {
        assert_eq!(Hierarchy::type_a(2).unwrap().levels().len(), 3);
        assert_eq!(Hierarchy::type_b(2).unwrap().levels().len(), 4);
    }

    #[test]
    fn type_b_rows_match_figure() {
        // Config 2: grandchild y15 (row 14) sums leaves y7..y9, child y18 sums
        // y7..y12, root y19 sums everything.
        let h = Hierarchy::type_b(1).unwrap();
        let mut bottom = [0.0; 12];
        bottom[6] = 1.0;
        let y = h.aggregate(&bottom).unwrap();
        let ones: Vec<usize> = (0..19).filter(|&i| y[i] == 1.0).collect();
        assert_eq!(ones, vec![6, 14, 17, 18]);
    }

    #[test]
    fn type_a_all_ones() {
        let h = Hierarchy::type_a(1).unwrap();
        let y = h.aggregate(&[1.0; 12]).unwrap();
        assert!(y.rows(0, 12).iter().all(|&v| v == 1.0));
        assert!(y.rows(12, 3).iter().all(|&v| v == 4.0));
        assert_eq!(y[15], 12.0);
    }

    #[test]
    fn coherence_checks() {
        let h = figure_one();
        let mut y = h.aggregate(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert!(h.is_coherent(y.as_slice(), 1e-9).unwrap());
        y[7] += 1.0;
        assert!(!h.is_coherent(y.as_slice(), 1e-9).unwrap());
        assert!(h.is_coherent(&[0.0; 8], 1e-9).unwrap());
        assert!(h.aggregate(&[0.0; 5]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn json_round_trip_and_errors() {
        let h = Hierarchy::type_b(1).unwrap();
        let text = serde_json::to_string(&h).unwrap();
        let back: Hierarchy = serde_json::from_str(&text).unwrap();
        assert_eq!(back, h);

        let two_level: Hierarchy =
            serde_json::from_str(r#"{"m":3,"n":2,"h_sub":[[1,1]]}"#).unwrap();
        assert_eq!(two_level.levels(), &[0..2, 2..3]);
        assert!(serde_json::from_str::<Hierarchy>(r#"{"m":4,"n":2,"h_sub":[[1,1]]}"#).is_err());
        assert!(serde_json::from_str::<Hierarchy>(
            r#"{"m":3,"n":2,"h_sub":[[1,1]],"levels":[[1,2],[2,3]]}"#
        )
        .is_err());
        assert!(serde_json::from_str::<Hierarchy>(r#"{"m":3,"n":2,"h_sub":[[1,1]],"x":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn aggregate_is_coherent(config in 1u32..=4, seed in proptest::collection::vec(-1e3f64..1e3, 144)) {
            let h = Hierarchy::benchmark_config(config).unwrap();
            let y = h.aggregate(&seed[..h.n()]).unwrap();
            prop_assert!(h.is_coherent(y.as_slice(), 1e-12).unwrap());
            // leaves come back unchanged
            prop_assert_eq!(&y.as_slice()[..h.n()], &seed[..h.n()]);
            let top = h.matrix().rows(0, h.n()).into_owned();
            prop_assert_eq!(top, DMatrix::identity(h.n(), h.n()));
        }
    }
}
