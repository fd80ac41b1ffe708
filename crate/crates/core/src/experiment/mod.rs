//! Experiment orchestration: one run is draw spec, generate, split, fit,
//! project, calibrate and evaluate; Monte-Carlo repeats it over seeds.

mod config;
pub mod direct;
mod monte_carlo;
pub mod output;
mod run;
mod split;

pub use config::{AChoice, ExperimentConfig, HierarchyChoice};
pub use monte_carlo::{monte_carlo, node_metric, summarize, Estimate, McOutcome, McSummary, SummaryRow, Z_95};
pub use run::{ellipsoid_label, run_once, weight_matrix, EllipsoidResult, MethodResult, RunResult, Status, Timings};
pub use split::{split, split_sizes, SplitPlan, DEFAULT_FRACTIONS};
