//! Two-stage review queue: an infinite-server delay for the NVD-first share
//! of advisories feeding a single FIFO review server.
//!
//! Expected time from arrival to review is `1/(μ₁ − λ) + p/μ₂`.

mod fit;
mod sim;
mod transitions;
mod validate;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stats::StatsError;

pub use fit::{estimate_params, fit_population, FitOptions, FitResult, LambdaMethod};
pub use sim::{
    scatter_rows as sim_scatter_rows, simulate, simulate_replications, trace_mean_review_time, traces_to_records,
    Route, SimTrace,
};
pub use transitions::{transition_summary, LifecycleState, TransitionEdge, TransitionSummary};
pub use validate::{validate_against, RankDifference, ValidationOptions, ValidationResult};

#[derive(Debug, Error)]
pub enum QueueError {
    #[error("unstable review stage: mu1 = {mu1} must exceed lambda = {lambda}")]
    Unstable { lambda: f64, mu1: f64 },
    #[error("{name} must be positive and finite, got {value}")]
    InvalidRate { name: &'static str, value: f64 },
    #[error("routing probability must lie in [0, 1], got {0}")]
    InvalidProbability(f64),
    #[error("need at least 2 advisories with patch and review times, got {0}")]
    TooFewRecords(usize),
    #[error("no {0} advisories with a nonnegative patch-to-review time")]
    EmptyGroup(&'static str),
    #[error("patch dates inside the trimming window span zero time")]
    ZeroSpan,
    #[error(
        "NVD-first mean review time {nvd_first_mean:.3} d does not exceed direct mean {direct_mean:.3} d; mu2 is undefined"
    )]
    NonPositiveDelay { direct_mean: f64, nvd_first_mean: f64 },
    #[error("mu2 is absent because no advisory took the NVD-first path")]
    Mu2Absent,
    #[error("cannot read params file {path}: {reason}")]
    ParamsFile { path: String, reason: String },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Arrival rate λ, review rate μ₁ and NVD-stage rate μ₂ (all per day), and
/// NVD-first routing probability p.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueParams {
    pub lambda: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p: f64,
}

impl QueueParams {
    pub fn new(lambda: f64, mu1: f64, mu2: f64, p: f64) -> Result<Self, QueueError> {
        let params = QueueParams { lambda, mu1, mu2, p };
        params.check()?;
        Ok(params)
    }

    pub fn check(&self) -> Result<(), QueueError> {
        for (name, value) in [("lambda", self.lambda), ("mu1", self.mu1)] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(QueueError::InvalidRate { name, value });
            }
        }
        // an infinite μ₂ is a zero-delay second stage
        if self.mu2.is_nan() || self.mu2 <= 0.0 {
            return Err(QueueError::InvalidRate {
                name: "mu2",
                value: self.mu2,
            });
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(QueueError::InvalidProbability(self.p));
        }
        if self.mu1 <= self.lambda {
            return Err(QueueError::Unstable {
                lambda: self.lambda,
                mu1: self.mu1,
            });
        }
        Ok(())
    }

    /// Utilisation λ/μ₁ of the review server.
    pub fn load(&self) -> f64 {
        self.lambda / self.mu1
    }

    pub fn with_p(&self, p: f64) -> Self {
        QueueParams { p, ..*self }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat struct of floats")
    }

    pub fn from_toml(text: &str) -> Result<Self, String> {
        let params: QueueParams = toml::from_str(text).map_err(|e| e.to_string())?;
        params.check().map_err(|e| e.to_string())?;
        Ok(params)
    }

    pub fn load_file(path: &Path) -> Result<Self, QueueError> {
        let err = |reason: String| QueueError::ParamsFile {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        Self::from_toml(&text).map_err(err)
    }

    pub fn save_file(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_toml())
    }
}

/// Expected days from arrival to review.
pub fn mean_review_time(params: &QueueParams) -> Result<f64, QueueError> {
    params.check()?;
    let second = if params.p == 0.0 { 0.0 } else { params.p / params.mu2 };
    Ok(1.0 / (params.mu1 - params.lambda) + second)
}

/// Mean review time for each routing probability, other parameters fixed.
pub fn what_if(params: &QueueParams, p_values: &[f64]) -> Result<Vec<(f64, f64)>, QueueError> {
    p_values
        .iter()
        .map(|&p| Ok((p, mean_review_time(&params.with_p(p))?)))
        .collect()
}
