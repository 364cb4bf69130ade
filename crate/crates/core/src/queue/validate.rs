//! Observed vs. simulated review order.

use serde::{Deserialize, Serialize};

use super::{QueueError, SimTrace};
use crate::stats::{self, StatsError};

/// Per-advisory rank statistic compared between observed and simulated runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDifference {
    /// `|review_rank − arrival_rank| / n`: how far each advisory is displaced
    /// from FIFO position, as a fraction of the run length.
    #[default]
    Absolute,
    /// `(review_rank − arrival_rank) / n`. Over any complete permutation these
    /// values sum to zero, so both sample means are exactly zero and the test
    /// cannot tell runs apart; kept for comparison.
    Signed,
}

impl RankDifference {
    fn values(self, pairs: impl ExactSizeIterator<Item = (usize, usize)>) -> Vec<f64> {
        let n = pairs.len() as f64;
        pairs
            .map(|(a, r)| {
                let d = r as f64 - a as f64;
                match self {
                    RankDifference::Absolute => d.abs() / n,
                    RankDifference::Signed => d / n,
                }
            })
            .collect()
    }
}

/// What is compared and how it is grouped before the Welch test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub difference: RankDifference,
    /// Number of contiguous arrival-order batches whose means enter the test.
    /// Displacements of neighbouring advisories are strongly correlated, so
    /// testing raw per-advisory values overstates the evidence; `None` does it
    /// anyway.
    pub batches: Option<usize>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions {
            difference: RankDifference::Absolute,
            batches: Some(10),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationResult {
    pub difference: RankDifference,
    pub batches: Option<usize>,
    pub statistic: f64,
    pub p_value: f64,
    pub n_real: usize,
    pub n_sim: usize,
    pub mean_real: f64,
    pub mean_sim: f64,
}

fn batch_means(values: &[f64], batches: usize) -> Result<Vec<f64>, QueueError> {
    if batches < 2 || values.len() < batches {
        return Err(StatsError::TooFew {
            what: "batch means",
            needed: batches.max(2),
            got: values.len(),
        }
        .into());
    }
    let n = values.len();
    Ok((0..batches)
        .map(|i| {
            let chunk = &values[i * n / batches..(i + 1) * n / batches];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect())
}

/// Welch t-test of the rank statistic between observed `(arrival_rank,
/// review_rank)` pairs and a simulated run.
pub fn validate_against(
    real: &[(usize, usize)],
    sim: &[SimTrace],
    opts: &ValidationOptions,
) -> Result<ValidationResult, QueueError> {
    let mut real = real.to_vec();
    real.sort();
    let mut sim: Vec<(usize, usize)> = sim.iter().map(|t| (t.arrival_rank, t.review_rank)).collect();
    sim.sort();
    let x = opts.difference.values(real.into_iter());
    let y = opts.difference.values(sim.into_iter());
    let (xs, ys) = match opts.batches {
        Some(b) => (batch_means(&x, b)?, batch_means(&y, b)?),
        None => (x.clone(), y.clone()),
    };
    let (statistic, p_value) = stats::welch_t_test(&xs, &ys)?;
    Ok(ValidationResult {
        difference: opts.difference,
        batches: opts.batches,
        statistic,
        p_value,
        n_real: x.len(),
        n_sim: y.len(),
        mean_real: stats::mean(&x)?,
        mean_sim: stats::mean(&y)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queue::{simulate, QueueParams};

    fn pairs(traces: &[SimTrace]) -> Vec<(usize, usize)> {
        traces.iter().map(|t| (t.arrival_rank, t.review_rank)).collect()
    }

    #[test]
    fn identical_runs_give_p_one() {
        let params = QueueParams::new(3.0, 4.0, 0.1, 0.3).unwrap();
        let sim = simulate(&params, 2000, 5);
        let v = validate_against(&pairs(&sim), &sim, &ValidationOptions::default()).unwrap();
        assert_eq!(v.p_value, 1.0);
    }

    #[test]
    fn signed_difference_is_degenerate() {
        let params = QueueParams::new(3.0, 4.0, 0.1, 0.3).unwrap();
        let a = simulate(&params, 2000, 5);
        let b = simulate(&params.with_p(0.9), 2000, 6);
        let signed = ValidationOptions {
            difference: RankDifference::Signed,
            batches: None,
        };
        let v = validate_against(&pairs(&a), &b, &signed).unwrap();
        assert!(v.mean_real.abs() < 1e-12 && v.mean_sim.abs() < 1e-12);
        assert!(v.p_value > 0.99);
        let abs = validate_against(&pairs(&a), &b, &ValidationOptions::default()).unwrap();
        assert!(abs.p_value < 0.01);
    }

    #[test]
    fn pure_fifo_runs_have_no_variance() {
        let params = QueueParams::new(1.0, 50.0, 1.0, 0.0).unwrap();
        let sim = simulate(&params, 100, 1);
        let err = validate_against(&pairs(&sim), &sim, &ValidationOptions::default()).unwrap_err();
        assert!(matches!(err, QueueError::Stats(StatsError::ZeroVariance(_))));
        let short = simulate(&QueueParams::new(3.0, 4.0, 0.1, 0.3).unwrap(), 5, 1);
        assert!(validate_against(&pairs(&short), &short, &ValidationOptions::default()).is_err());
    }

    #[test]
    fn batch_means_cover_every_value() {
        let v: Vec<f64> = (0..23).map(f64::from).collect();
        let m = batch_means(&v, 4).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m[0], 2.0);
        assert_eq!(m[3], 19.5);
    }
}
