use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Order-statistic indices used by the calibration step.
///
/// Indices refer to the sorted calibration scores `s_(1) ≤ … ≤ s_(T)`;
/// index `0` is the lower sentinel (`−∞` for signed scores, `0` for norms)
/// and index `T + 1` is `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileIndices {
    pub t_calib: usize,
    pub alpha: f64,
    /// `⌈(T+1)(1−α)⌉`
    pub joint_hi: usize,
    /// `⌊(T+1)α/2⌋`
    pub comp_lo: usize,
    /// `⌈(T+1)(1−α/2)⌉`
    pub comp_hi: usize,
}

impl QuantileIndices {
    pub fn new(t_calib: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        if t_calib == 0 {
            return Err(Error::InsufficientData("empty calibration set".into()));
        }
        let n = (t_calib + 1) as f64;
        let cap = t_calib + 1;
        Ok(Self {
            t_calib,
            alpha,
            joint_hi: (exact_ceil(n * (1.0 - alpha)) as usize).min(cap),
            comp_lo: (exact_floor(n * alpha / 2.0) as usize).min(cap),
            comp_hi: (exact_ceil(n * (1.0 - alpha / 2.0)) as usize).min(cap),
        })
    }

    /// Whether the component-wise interval is the whole real line.
    pub fn whole_line(&self) -> bool {
        self.comp_lo == 0 && self.comp_hi == self.t_calib + 1
    }
}

// Products such as 10 · 0.9 land one ulp away from the integer they denote;
// snap those before rounding.
fn snap(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r
    } else {
        x
    }
}

fn exact_floor(x: f64) -> f64 {
    snap(x).floor().max(0.0)
}

fn exact_ceil(x: f64) -> f64 {
    snap(x).ceil().max(0.0)
}

/// `s_(k)` from ascending `sorted` scores, with `s_(0) = low` and
/// `s_(T+1) = +∞`.
pub fn order_statistic(sorted: &[f64], k: usize, low: f64) -> f64 {
    if k == 0 {
        low
    } else if k > sorted.len() {
        f64::INFINITY
    } else {
        sorted[k - 1]
    }
}
