//! Review latency: publish-to-review and patch-to-review lags, percentile
//! tables, monthly medians, threshold shares and source comparisons.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AdvisoryRecord, Source, Timestamp, YearMonth};
use crate::stats::{self, RankTestResult, StatsError};

#[derive(Debug, Error)]
pub enum LatencyError {
    #[error("latency group `{0}` is empty")]
    EmptyGroup(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LagKind {
    TimeToReview,
    PatchToReview,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub ghsa_id: String,
    pub source: Source,
    pub lag_days: f64,
    pub publish_time: Timestamp,
    pub kind: LagKind,
}

/// Half-open `[start, end)` range on publish time. Either bound may be open.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start: Option<Timestamp>,
    pub end: Option<Timestamp>,
}

impl TimeWindow {
    pub fn all() -> Self {
        Self::default()
    }

    pub fn from(start: Timestamp) -> Self {
        TimeWindow {
            start: Some(start),
            end: None,
        }
    }

    pub fn until(end: Timestamp) -> Self {
        TimeWindow {
            start: None,
            end: Some(end),
        }
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start.is_none_or(|s| t >= s) && self.end.is_none_or(|e| t < e)
    }
}

fn sample(
    record: &AdvisoryRecord,
    from: Timestamp,
    to: Timestamp,
    publish: Timestamp,
    kind: LagKind,
) -> Option<LatencySample> {
    let lag = to.days_since(from);
    (lag >= 0.0).then(|| LatencySample {
        ghsa_id: record.ghsa_id.clone(),
        source: record.source(),
        lag_days: lag,
        publish_time: publish,
        kind,
    })
}

/// Review time minus publish time, where a GRA publication takes precedence
/// over the GHSA one. Absent when either is missing or the lag is negative.
pub fn time_to_review(record: &AdvisoryRecord) -> Option<LatencySample> {
    let review = record.github_reviewed_at?;
    let publish = record.gra_published_at.or(record.published_at)?;
    sample(record, publish, review, publish, LagKind::TimeToReview)
}

/// Review time minus first patched release. The sample's publish time is the
/// advisory's publish time (GRA first) when known, else the patch time.
pub fn patch_to_review(record: &AdvisoryRecord) -> Option<LatencySample> {
    let review = record.github_reviewed_at?;
    let patch = record.patched_at?;
    let publish = record.gra_published_at.or(record.published_at).unwrap_or(patch);
    sample(record, patch, review, publish, LagKind::PatchToReview)
}

pub fn collect_samples(records: &[AdvisoryRecord], kind: LagKind) -> Vec<LatencySample> {
    let f = match kind {
        LagKind::TimeToReview => time_to_review,
        LagKind::PatchToReview => patch_to_review,
    };
    records.iter().filter_map(f).collect()
}

/// A labelled slice of the samples: selected sources within a window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyGroup {
    pub label: String,
    pub sources: Vec<Source>,
    pub window: TimeWindow,
}

impl LatencyGroup {
    pub fn new(label: impl Into<String>, sources: &[Source], window: TimeWindow) -> Self {
        LatencyGroup {
            label: label.into(),
            sources: sources.to_vec(),
            window,
        }
    }

    pub fn lags(&self, samples: &[LatencySample]) -> Vec<f64> {
        samples
            .iter()
            .filter(|s| self.sources.contains(&s.source) && self.window.contains(s.publish_time))
            .map(|s| s.lag_days)
            .collect()
    }

    /// The row set used for the time-to-review table: everything, each
    /// source on its own, and GRA and NVD after `cutoff`.
    pub fn standard(cutoff: Timestamp) -> Vec<LatencyGroup> {
        let all = TimeWindow::all();
        let after = TimeWindow::from(cutoff);
        let month = cutoff.month();
        vec![
            LatencyGroup::new("All reviewed", &Source::ALL, all),
            LatencyGroup::new("GRA", &[Source::Gra], all),
            LatencyGroup::new("NVD", &[Source::Nvd], all),
            LatencyGroup::new("Other", &[Source::Other], all),
            LatencyGroup::new(format!("GRA since {month}"), &[Source::Gra], after),
            LatencyGroup::new(format!("NVD since {month}"), &[Source::Nvd], after),
        ]
    }
}

pub const DEFAULT_PERCENTILES: [f64; 7] = [10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PercentileRow {
    pub label: String,
    pub n: usize,
    /// (percentile, value in days), in the requested order.
    pub values: Vec<(f64, f64)>,
}

pub fn percentile_table(
    samples: &[LatencySample],
    groups: &[LatencyGroup],
    percentiles: &[f64],
) -> Result<Vec<PercentileRow>, LatencyError> {
    groups
        .iter()
        .map(|g| {
            let mut lags = g.lags(samples);
            if lags.is_empty() {
                return Err(LatencyError::EmptyGroup(g.label.clone()));
            }
            lags.sort_by(f64::total_cmp);
            let values = percentiles
                .iter()
                .map(|&q| {
                    if !(0.0..=100.0).contains(&q) {
                        return Err(StatsError::BadQuantile(q));
                    }
                    Ok((q, stats::percentile_sorted(&lags, q)))
                })
                .collect::<Result<_, _>>()?;
            Ok(PercentileRow {
                label: g.label.clone(),
                n: lags.len(),
                values,
            })
        })
        .collect()
}

/// Median lag per publish month and source.
pub fn monthly_median_lag(samples: &[LatencySample]) -> BTreeMap<(YearMonth, Source), f64> {
    let mut buckets: BTreeMap<(YearMonth, Source), Vec<f64>> = BTreeMap::new();
    for s in samples {
        buckets
            .entry((s.publish_time.month(), s.source))
            .or_default()
            .push(s.lag_days);
    }
    buckets
        .into_iter()
        .map(|(k, v)| (k, stats::median(&v).expect("bucket is nonempty")))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceComparison {
    pub test: String,
    pub group_a: Source,
    pub group_b: Source,
    pub window: TimeWindow,
    pub outliers_removed: bool,
    #[serde(flatten)]
    pub result: RankTestResult,
}

/// Mann–Whitney test of `a` against `b`, optionally dropping each group's
/// values outside its own 1.5·IQR fence first.
pub fn compare_sources(
    samples: &[LatencySample],
    a: Source,
    b: Source,
    window: TimeWindow,
    remove_outliers: bool,
) -> Result<SourceComparison, LatencyError> {
    let prepare = |source: Source| -> Result<Vec<f64>, LatencyError> {
        let lags = LatencyGroup::new(source.as_str(), &[source], window).lags(samples);
        if lags.is_empty() {
            return Err(LatencyError::EmptyGroup(source.as_str().into()));
        }
        let kept = if remove_outliers {
            stats::iqr_fence(&lags)?.retain(&lags)
        } else {
            lags
        };
        if kept.is_empty() {
            return Err(LatencyError::EmptyGroup(source.as_str().into()));
        }
        Ok(kept)
    };
    let (xa, xb) = (prepare(a)?, prepare(b)?);
    let kind = samples.first().map(|s| s.kind).unwrap_or(LagKind::TimeToReview);
    Ok(SourceComparison {
        test: format!("mann_whitney_{}", serde_json::to_value(kind).unwrap().as_str().unwrap()),
        group_a: a,
        group_b: b,
        window,
        outliers_removed: remove_outliers,
        result: stats::mann_whitney(&xa, &xb)?,
    })
}

/// Fraction of a source's samples with lag at most `threshold_days`.
pub fn share_within(samples: &[LatencySample], source: Source, threshold_days: f64) -> Result<f64, LatencyError> {
    let lags: Vec<f64> = samples
        .iter()
        .filter(|s| s.source == source)
        .map(|s| s.lag_days)
        .collect();
    if lags.is_empty() {
        return Err(LatencyError::EmptyGroup(source.as_str().into()));
    }
    let hit = lags.iter().filter(|&&l| l <= threshold_days).count();
    Ok(hit as f64 / lags.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic_ghsa_id;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(s: &str) -> Timestamp {
        Timestamp::parse(s).unwrap()
    }

    fn reviewed(n: u64, publish: &str, review: &str) -> AdvisoryRecord {
        let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(n));
        r.reviewed = true;
        r.published_at = Some(t(publish));
        r.github_reviewed_at = Some(t(review));
        r
    }

    fn s(source: Source, lag: f64, publish: &str) -> LatencySample {
        LatencySample {
            ghsa_id: String::new(),
            source,
            lag_days: lag,
            publish_time: t(publish),
            kind: LagKind::TimeToReview,
        }
    }

    #[test]
    fn time_to_review_rules() {
        let r = reviewed(1, "2023-01-01T00:00:00Z", "2023-01-01T00:00:00Z");
        assert_eq!(time_to_review(&r).unwrap().lag_days, 0.0);

        let mut r = reviewed(2, "2023-01-06T00:00:00Z", "2023-01-02T00:00:00Z");
        r.gra_published_at = Some(t("2023-01-01T00:00:00Z"));
        r.repository_advisory_url = Some("https://github.com/o/r/security/advisories/GHSA-x".into());
        let lag = time_to_review(&r).unwrap();
        assert_eq!(lag.lag_days, 1.0);
        assert_eq!(lag.source, Source::Gra);

        let r = reviewed(3, "2023-01-01T06:00:00Z", "2023-01-01T00:00:00Z");
        assert!(time_to_review(&r).is_none());
        let mut r = reviewed(4, "2023-01-01T00:00:00Z", "2023-01-01T00:00:00Z");
        r.github_reviewed_at = None;
        assert!(time_to_review(&r).is_none());
    }

    #[test]
    fn patch_to_review_rules() {
        let mut r = reviewed(1, "2023-01-01T00:00:00Z", "2023-01-03T00:57:36Z");
        r.patched_at = Some(t("2023-01-01T00:00:00Z"));
        assert!((patch_to_review(&r).unwrap().lag_days - 2.04).abs() < 1e-9);
        r.patched_at = r.github_reviewed_at;
        assert_eq!(patch_to_review(&r).unwrap().lag_days, 0.0);
        r.patched_at = Some(t("2023-02-01T00:00:00Z"));
        assert!(patch_to_review(&r).is_none());
    }

    #[test]
    fn percentile_rows() {
        let samples = vec![
            s(Source::Gra, 3.0, "2023-01-01T00:00:00Z"),
            s(Source::Nvd, 7.0, "2023-01-01T00:00:00Z"),
        ];
        let groups = [
            LatencyGroup::new("gra", &[Source::Gra], TimeWindow::all()),
            LatencyGroup::new("nvd", &[Source::Nvd], TimeWindow::all()),
        ];
        let rows = percentile_table(&samples, &groups, &DEFAULT_PERCENTILES).unwrap();
        assert!(rows[0].values.iter().all(|(_, v)| *v == 3.0));
        assert!(rows[1].values.iter().all(|(_, v)| *v == 7.0));
        let late = [LatencyGroup::new(
            "late",
            &[Source::Gra],
            TimeWindow::from(t("2024-01-01T00:00:00Z")),
        )];
        assert!(matches!(
            percentile_table(&samples, &late, &[50.0]),
            Err(LatencyError::EmptyGroup(_))
        ));
    }

    #[test]
    fn exponential_quantiles_recovered() {
        // Exp(1) quantile: −ln(1 − q)
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let samples: Vec<_> = (0..40_000)
            .map(|_| {
                let u: f64 = rng.random();
                s(Source::Gra, -(1.0 - u).ln(), "2023-01-01T00:00:00Z")
            })
            .collect();
        let groups = [LatencyGroup::new("gra", &[Source::Gra], TimeWindow::all())];
        let row = &percentile_table(&samples, &groups, &[25.0, 50.0, 90.0]).unwrap()[0];
        for (q, v) in &row.values {
            let expected = -(1.0 - q / 100.0).ln();
            assert!(
                (v - expected).abs() / expected < 0.03,
                "q={q} v={v} expected={expected}"
            );
        }
    }

    #[test]
    fn monthly_medians() {
        let one = monthly_median_lag(&[s(Source::Nvd, 4.0, "2023-05-02T00:00:00Z")]);
        assert_eq!(one.values().copied().collect::<Vec<_>>(), vec![4.0]);
        let m = monthly_median_lag(&[
            s(Source::Nvd, 1.0, "2023-05-02T00:00:00Z"),
            s(Source::Nvd, 9.0, "2023-05-20T00:00:00Z"),
            s(Source::Nvd, 2.0, "2023-05-30T00:00:00Z"),
        ]);
        assert_eq!(m[&(YearMonth { year: 2023, month: 5 }, Source::Nvd)], 2.0);
    }

    #[test]
    fn regime_change_lowers_medians() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut samples = Vec::new();
        for month in 1..=12u32 {
            let scale = if month >= 6 { 0.5 } else { 20.0 };
            for _ in 0..50 {
                let u: f64 = rng.random();
                samples.push(s(
                    Source::Gra,
                    -scale * (1.0 - u).ln(),
                    &format!("2022-{month:02}-10T00:00:00Z"),
                ));
            }
        }
        let m = monthly_median_lag(&samples);
        let pre = m
            .iter()
            .filter(|((ym, _), _)| ym.month < 6)
            .map(|(_, v)| *v)
            .fold(f64::INFINITY, f64::min);
        let post = m
            .iter()
            .filter(|((ym, _), _)| ym.month >= 6)
            .map(|(_, v)| *v)
            .fold(0.0, f64::max);
        assert!(post < pre);
    }

    #[test]
    fn comparisons_and_shares() {
        let samples: Vec<_> = (0..30)
            .flat_map(|i| {
                [
                    s(Source::Gra, i as f64 * 0.1, "2023-01-01T00:00:00Z"),
                    s(Source::Nvd, i as f64 * 0.1 + 1.0, "2023-01-01T00:00:00Z"),
                    s(Source::Other, i as f64 * 0.1, "2023-01-01T00:00:00Z"),
                ]
            })
            .collect();
        let same = compare_sources(&samples, Source::Gra, Source::Other, TimeWindow::all(), false).unwrap();
        assert_eq!(same.result.rbc, 0.0);
        let ab = compare_sources(&samples, Source::Gra, Source::Nvd, TimeWindow::all(), true).unwrap();
        assert!(ab.result.rbc > 0.0);
        let ba = compare_sources(&samples, Source::Nvd, Source::Gra, TimeWindow::all(), true).unwrap();
        assert!((ab.result.rbc + ba.result.rbc).abs() < 1e-12);
        let json = serde_json::to_value(&ab).unwrap();
        assert_eq!(json["test"], "mann_whitney_time_to_review");
        assert!(json["rbc"].is_number());

        assert_eq!(share_within(&samples, Source::Gra, f64::INFINITY).unwrap(), 1.0);
        assert_eq!(share_within(&samples, Source::Nvd, 0.5).unwrap(), 0.0);
        assert!(share_within(&samples[..0], Source::Gra, 1.0).is_err());
    }

    #[test]
    fn share_matches_counted_fixture() {
        let samples: Vec<_> = (0..4350)
            .map(|i| s(Source::Gra, if i < 4151 { 1.0 } else { 9.0 }, "2023-01-01T00:00:00Z"))
            .collect();
        let share = share_within(&samples, Source::Gra, 5.0).unwrap();
        assert!((share - 0.954).abs() < 5e-4);
    }

    proptest! {
        #[test]
        fn lags_never_negative(p in 0i64..1_000_000, r in 0i64..1_000_000) {
            let base = 1_672_531_200;
            let mut rec = reviewed(1, "2023-01-01T00:00:00Z", "2023-01-01T00:00:00Z");
            rec.published_at = Timestamp::from_unix(base + p);
            rec.github_reviewed_at = Timestamp::from_unix(base + r);
            rec.patched_at = Timestamp::from_unix(base + r / 2 + p / 3);
            for s in time_to_review(&rec).into_iter().chain(patch_to_review(&rec)) {
                prop_assert!(s.lag_days >= 0.0);
            }
        }

        #[test]
        fn rows_monotone_and_rbc_antisymmetric(
            a in prop::collection::vec(0.0f64..50.0, 4..40),
            b in prop::collection::vec(0.0f64..50.0, 4..40),
        ) {
            let samples: Vec<_> = a.iter().map(|&x| s(Source::Gra, x, "2023-01-01T00:00:00Z"))
                .chain(b.iter().map(|&x| s(Source::Nvd, x, "2023-01-01T00:00:00Z")))
                .collect();
            let rows = percentile_table(&samples, &LatencyGroup::standard(t("2022-06-01T00:00:00Z"))[..3], &DEFAULT_PERCENTILES).unwrap();
            for row in rows {
                prop_assert!(row.values.windows(2).all(|w| w[0].1 <= w[1].1));
            }
            let ab = compare_sources(&samples, Source::Gra, Source::Nvd, TimeWindow::all(), true).unwrap();
            let ba = compare_sources(&samples, Source::Nvd, Source::Gra, TimeWindow::all(), true).unwrap();
            prop_assert!((ab.result.rbc + ba.result.rbc).abs() < 1e-12);
        }

        #[test]
        fn outlier_removal_ignores_order(mut v in prop::collection::vec(0.0f64..100.0, 4..60), seed in any::<u64>()) {
            let fence = stats::iqr_fence(&v).unwrap();
            let mut kept = fence.retain(&v);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..v.len()).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            let mut kept2 = stats::iqr_fence(&v).unwrap().retain(&v);
            kept.sort_by(f64::total_cmp);
            kept2.sort_by(f64::total_cmp);
            prop_assert_eq!(kept, kept2);
        }
    }
}
