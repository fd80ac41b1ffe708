use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::split::{split_sizes, DEFAULT_FRACTIONS};
use crate::elliptical::SphericalKind;
use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;
use crate::projection::ReconciliationMethod;
use crate::regression::DEFAULT_RIDGE_LAMBDA;

/// Which hierarchy an experiment runs on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HierarchyChoice {
    /// Benchmark configuration 1..=6 (`a1, b1, a2, b2, a3, b3`).
    Benchmark(u32),
    /// JSON hierarchy file.
    Custom(PathBuf),
}

impl HierarchyChoice {
    pub fn load(&self) -> Result<Hierarchy> {
        match self {
            Self::Benchmark(id) => Hierarchy::benchmark_config(*id),
            Self::Custom(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read hierarchy file {}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("invalid hierarchy file {}: {e}", path.display())))
            }
        }
    }
}

const BENCHMARK_NAMES: [&str; 6] = ["a1", "b1", "a2", "b2", "a3", "b3"];

impl fmt::Display for HierarchyChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Benchmark(id) => f.write_str(BENCHMARK_NAMES[(*id - 1) as usize]),
            Self::Custom(p) => write!(f, "custom:{}", p.display()),
        }
    }
}

impl FromStr for HierarchyChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        if let Some(path) = s.trim().strip_prefix("custom:") {
            return Ok(Self::Custom(PathBuf::from(path)));
        }
        if let Some(pos) = BENCHMARK_NAMES.iter().position(|n| *n == lower) {
            return Ok(Self::Benchmark(pos as u32 + 1));
        }
        match lower.parse::<u32>() {
            Ok(id @ 1..=6) => Ok(Self::Benchmark(id)),
            _ => Err(Error::Config(format!(
                "unknown hierarchy '{s}' (expected a1, a2, a3, b1, b2, b3, 1..6 or custom:PATH)"
            ))),
        }
    }
}

impl Serialize for HierarchyChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HierarchyChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Weight matrix `A` of the ellipsoidal regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AChoice {
    Identity,
    /// `pinv(Diag Σ̂)`
    Diag,
    /// `pinv(Σ̂)`
    Full,
}

impl AChoice {
    pub const ALL: [AChoice; 3] = [AChoice::Identity, AChoice::Diag, AChoice::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            AChoice::Identity => "identity",
            AChoice::Diag => "diag",
            AChoice::Full => "full",
        }
    }
}

impl fmt::Display for AChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" | "id" => Ok(AChoice::Identity),
            "diag" => Ok(AChoice::Diag),
            "full" => Ok(AChoice::Full),
            other => Err(Error::Config(format!("unknown A matrix '{other}' (expected identity, diag or full)"))),
        }
    }
}

/// Everything that determines a Monte-Carlo experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub hierarchy: HierarchyChoice,
    /// Observations per run.
    pub t: usize,
    pub runs: usize,
    pub alpha: f64,
    pub methods: Vec<ReconciliationMethod>,
    pub a_matrices: Vec<AChoice>,
    pub fractions: [f64; 4],
    pub ridge_lambda: f64,
    /// MinT ridge; `None` uses the default scale of the trace.
    pub mint_ridge: Option<f64>,
    pub noise: SphericalKind,
    /// Run `r` uses seed `seed + r`.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            hierarchy: HierarchyChoice::Benchmark(1),
            t: 20_000,
            runs: 200,
            alpha: 0.1,
            methods: ReconciliationMethod::ALL.to_vec(),
            a_matrices: AChoice::ALL.to_vec(),
            fractions: DEFAULT_FRACTIONS,
            ridge_lambda: DEFAULT_RIDGE_LAMBDA,
            mint_ridge: None,
            noise: SphericalKind::Gaussian,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn run_seed(&self, run: usize) -> u64 {
        self.seed.wrapping_add(run as u64)
    }

    /// Checks everything except the hierarchy file and the run count.
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.methods.is_empty() && self.a_matrices.is_empty() {
            return Err(Error::Config("nothing to run: methods and a_matrices are both empty".into()));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::Config(format!("ridge_lambda must be >= 0, got {}", self.ridge_lambda)));
        }
        if let Some(r) = self.mint_ridge {
            if !(r >= 0.0) {
                return Err(Error::Config(format!("mint_ridge must be >= 0, got {r}")));
            }
        }
        self.noise.validate().map_err(|e| Error::Config(e.to_string()))?;
        split_sizes(self.t, self.fractions)?;
        Ok(())
    }
}
