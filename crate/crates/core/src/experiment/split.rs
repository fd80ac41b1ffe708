use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default train / estimation / calibration / test fractions.
pub const DEFAULT_FRACTIONS: [f64; 4] = [0.4, 0.2, 0.2, 0.2];

/// Disjoint index sets covering `0..t`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub train: Vec<usize>,
    pub est: Vec<usize>,
    pub calib: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitPlan {
    pub fn sizes(&self) -> [usize; 4] {
        [self.train.len(), self.est.len(), self.calib.len(), self.test.len()]
    }
}

/// Set sizes for `t` points: `⌊f·t⌋` for the last three sets, the remainder
/// for training.
pub fn split_sizes(t: usize, fractions: [f64; 4]) -> Result<[usize; 4]> {
    if fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::Config(format!("split fractions must be positive, got {fractions:?}")));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {sum}, expected 1")));
    }
    let floor = |f: f64| {
        let x = f * t as f64;
        let r = x.round();
        if (x - r).abs() <= 1e-9 * x.max(1.0) {
            r as usize
        } else {
            x.floor() as usize
        }
    };
    let est = floor(fractions[1]);
    let calib = floor(fractions[2]);
    let test = floor(fractions[3]);
    let sizes = [t.saturating_sub(est + calib + test), est, calib, test];
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::Config(format!("t = {t} is too small for split fractions {fractions:?}")));
    }
    Ok(sizes)
}

/// Uniform random partition of `0..t`.
pub fn split<R: Rng + ?Sized>(t: usize, fractions: [f64; 4], rng: &mut R) -> Result<SplitPlan> {
    let [n_train, n_est, n_calib, _] = split_sizes(t, fractions)?;
    let mut idx: Vec<usize> = (0..t).collect();
    idx.shuffle(rng);
    let test = idx.split_off(n_train + n_est + n_calib);
    let calib = idx.split_off(n_train + n_est);
    let est = idx.split_off(n_train);
    Ok(SplitPlan { train: idx, est, calib, test })
}
