//! Split conformal prediction: ellipsoidal regions for joint coverage and
//! signed-score intervals for component-wise coverage.
//!
//! Every procedure takes an already fitted [`Regressor`](crate::regression::Regressor)
//! and a calibration split; the regions it returns are closed.

mod ellipsoid;
mod quantile;
mod rectangle;

pub use ellipsoid::{
    calibrate_ellipsoid, ellipsoid_radius, ellipsoid_scores, normalized_volume, EllipsoidCenter,
    EllipsoidModel,
};
pub use quantile::{order_statistic, QuantileIndices};
pub use rectangle::{
    calibrate_plain_rectangles, calibrate_rectangles, data_based_projection, signed_offsets,
    RectangleModel, RectangleOffsets,
};
