//! Parameter estimation from reviewed advisories.

use serde::{Deserialize, Serialize};

use super::{QueueError, QueueParams};
use crate::model::AdvisoryRecord;
use crate::stats;

/// How outlying patch dates are excluded before estimating λ.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaMethod {
    /// Keep patch dates inside the [P_lo, P_hi] window of the date
    /// distribution; λ = (count − 1) / span.
    #[default]
    DateWindow,
    /// Keep inter-arrival gaps inside [P_lo, P_hi] of the gap distribution;
    /// λ = 1 / mean kept gap.
    GapTrim,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub lambda_method: LambdaMethod,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda_method: LambdaMethod::DateWindow,
            lower_percentile: 10.0,
            upper_percentile: 90.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub lambda: f64,
    pub mu1: f64,
    /// Absent when no advisory took the NVD-first path.
    pub mu2: Option<f64>,
    pub p: f64,
    pub n_records: usize,
    pub n_direct: usize,
    pub n_nvd_first: usize,
    pub direct_mean_days: f64,
    pub nvd_first_mean_days: Option<f64>,
    pub lambda_method: LambdaMethod,
}

impl FitResult {
    pub fn params(&self) -> Result<QueueParams, QueueError> {
        let mu2 = self.mu2.ok_or(QueueError::Mu2Absent)?;
        QueueParams::new(self.lambda, self.mu1, mu2, self.p)
    }
}

/// Records with both a patch and a review time.
pub fn fit_population(records: &[AdvisoryRecord]) -> Vec<&AdvisoryRecord> {
    records
        .iter()
        .filter(|r| r.patched_at.is_some() && r.github_reviewed_at.is_some())
        .collect()
}

fn is_nvd_first(r: &AdvisoryRecord) -> bool {
    matches!((r.nvd_published_at, r.github_reviewed_at), (Some(n), Some(rev)) if n < rev)
}

fn estimate_lambda(patch_days: &mut [f64], opts: &FitOptions) -> Result<f64, QueueError> {
    patch_days.sort_by(f64::total_cmp);
    let (lo_q, hi_q) = (opts.lower_percentile, opts.upper_percentile);
    match opts.lambda_method {
        LambdaMethod::DateWindow => {
            let lo = stats::percentile_sorted(patch_days, lo_q);
            let hi = stats::percentile_sorted(patch_days, hi_q);
            let kept: Vec<f64> = patch_days.iter().copied().filter(|d| (lo..=hi).contains(d)).collect();
            let span = kept.last().zip(kept.first()).map(|(l, f)| l - f).unwrap_or(0.0);
            if kept.len() < 2 || span <= 0.0 {
                return Err(QueueError::ZeroSpan);
            }
            Ok((kept.len() - 1) as f64 / span)
        }
        LambdaMethod::GapTrim => {
            let gaps: Vec<f64> = patch_days.windows(2).map(|w| w[1] - w[0]).collect();
            let mut sorted = gaps.clone();
            sorted.sort_by(f64::total_cmp);
            let lo = stats::percentile_sorted(&sorted, lo_q);
            let hi = stats::percentile_sorted(&sorted, hi_q);
            let kept: Vec<f64> = gaps.into_iter().filter(|g| (lo..=hi).contains(g)).collect();
            let mean = stats::mean(&kept)?;
            if mean <= 0.0 {
                return Err(QueueError::ZeroSpan);
            }
            Ok(1.0 / mean)
        }
    }
}

/// Fits λ from patch dates, p from the NVD-first share, and μ₁, μ₂ so the
/// model's per-route mean review times match the observed ones.
pub fn estimate_params(records: &[AdvisoryRecord], opts: &FitOptions) -> Result<FitResult, QueueError> {
    let population = fit_population(records);
    if population.len() < 2 {
        return Err(QueueError::TooFewRecords(population.len()));
    }
    let origin = population.iter().filter_map(|r| r.patched_at).min().unwrap();
    let mut patch_days: Vec<f64> = population
        .iter()
        .map(|r| r.patched_at.unwrap().days_since(origin))
        .collect();
    let lambda = estimate_lambda(&mut patch_days, opts)?;

    let n_nvd_first = population.iter().filter(|r| is_nvd_first(r)).count();
    let n_direct = population.len() - n_nvd_first;
    let p = n_nvd_first as f64 / population.len() as f64;

    let review_times = |nvd_first: bool| -> Vec<f64> {
        population
            .iter()
            .filter(|r| is_nvd_first(r) == nvd_first)
            .map(|r| r.github_reviewed_at.unwrap().days_since(r.patched_at.unwrap()))
            .filter(|d| *d >= 0.0)
            .collect()
    };
    let direct = review_times(false);
    if direct.is_empty() {
        return Err(QueueError::EmptyGroup("direct"));
    }
    let direct_mean = stats::mean(&direct)?;
    if direct_mean <= 0.0 {
        return Err(QueueError::InvalidRate {
            name: "1/direct mean review time",
            value: f64::INFINITY,
        });
    }
    let mu1 = lambda + 1.0 / direct_mean;

    let (mu2, nvd_first_mean) = if n_nvd_first == 0 {
        (None, None)
    } else {
        let slow = review_times(true);
        if slow.is_empty() {
            return Err(QueueError::EmptyGroup("NVD-first"));
        }
        let slow_mean = stats::mean(&slow)?;
        if slow_mean <= direct_mean {
            return Err(QueueError::NonPositiveDelay {
                direct_mean,
                nvd_first_mean: slow_mean,
            });
        }
        (Some(1.0 / (slow_mean - direct_mean)), Some(slow_mean))
    };

    Ok(FitResult {
        lambda,
        mu1,
        mu2,
        p,
        n_records: population.len(),
        n_direct,
        n_nvd_first,
        direct_mean_days: direct_mean,
        nvd_first_mean_days: nvd_first_mean,
        lambda_method: opts.lambda_method,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthetic_ghsa_id, Timestamp};
    use crate::queue::{simulate, traces_to_records};

    fn origin() -> Timestamp {
        Timestamp::parse("2022-06-01T00:00:00Z").unwrap()
    }

    fn days(d: f64) -> i64 {
        (d * 86_400.0).round() as i64
    }

    /// Evenly spaced patches; the first `slow` of every 1000 go NVD-first.
    fn calibrated(
        n: usize,
        lambda: f64,
        slow_per_mille: usize,
        direct_mean: f64,
        slow_mean: f64,
    ) -> Vec<AdvisoryRecord> {
        (0..n)
            .map(|i| {
                let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i as u64));
                r.reviewed = true;
                let patch = origin().plus_seconds(days(i as f64 / lambda));
                r.patched_at = Some(patch);
                if i % 1000 < slow_per_mille {
                    r.nvd_published_at = Some(patch.plus_seconds(days(1.0)));
                    r.github_reviewed_at = Some(patch.plus_seconds(days(slow_mean)));
                } else {
                    r.github_reviewed_at = Some(patch.plus_seconds(days(direct_mean)));
                }
                r
            })
            .collect()
    }

    #[test]
    fn recovers_calibrated_rates() {
        let records = calibrated(10_001, 3.413, 474, 49.79, 211.63);
        let fit = estimate_params(&records, &FitOptions::default()).unwrap();
        assert!((fit.lambda - 3.413).abs() < 1e-3, "{}", fit.lambda);
        assert!((fit.p - 0.474).abs() < 1e-3);
        assert!((fit.mu1 - 3.433).abs() < 1e-3, "{}", fit.mu1);
        assert!((fit.mu2.unwrap() - 0.00618).abs() < 1e-5);
        let params = fit.params().unwrap();
        assert!(params.mu1 > params.lambda);
    }

    #[test]
    fn no_nvd_first_leaves_mu2_absent() {
        let records = calibrated(500, 2.0, 0, 3.0, 0.0);
        let fit = estimate_params(&records, &FitOptions::default()).unwrap();
        assert_eq!(fit.p, 0.0);
        assert_eq!(fit.mu2, None);
        assert!(matches!(fit.params(), Err(QueueError::Mu2Absent)));
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            estimate_params(&[], &FitOptions::default()),
            Err(QueueError::TooFewRecords(0))
        ));
        let records = calibrated(1000, 2.0, 500, 10.0, 5.0);
        assert!(matches!(
            estimate_params(&records, &FitOptions::default()),
            Err(QueueError::NonPositiveDelay { .. })
        ));
        let records = calibrated(500, 2.0, 1000, 10.0, 50.0);
        assert!(matches!(
            estimate_params(&records, &FitOptions::default()),
            Err(QueueError::EmptyGroup("direct"))
        ));
    }

    #[test]
    fn gap_trim_alternative() {
        let records = calibrated(2001, 4.0, 300, 2.0, 20.0);
        let opts = FitOptions {
            lambda_method: LambdaMethod::GapTrim,
            ..FitOptions::default()
        };
        let fit = estimate_params(&records, &opts).unwrap();
        assert!((fit.lambda - 4.0).abs() < 1e-3);
        assert_eq!(fit.lambda_method, LambdaMethod::GapTrim);
    }

    #[test]
    fn simulate_then_fit() {
        let truth = QueueParams::new(3.0, 4.0, 0.1, 0.3).unwrap();
        let records = traces_to_records(&simulate(&truth, 30_000, 17), origin());
        let fit = estimate_params(&records, &FitOptions::default()).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(rel(fit.lambda, truth.lambda) < 0.03, "{fit:?}");
        assert!(rel(fit.p, truth.p) < 0.03, "{fit:?}");
        assert!(rel(fit.mu1, truth.mu1) < 0.05, "{fit:?}");
        assert!(rel(fit.mu2.unwrap(), truth.mu2) < 0.1, "{fit:?}");
    }
}
