//! Empirical lifecycle transition graph.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{AdvisoryRecord, Timestamp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifecycleState {
    Patch,
    NvdPublish,
    GraPublish,
    GhsaPublish,
    Review,
}

impl LifecycleState {
    pub fn as_str(&self) -> &'static str {
        match self {
            LifecycleState::Patch => "patch",
            LifecycleState::NvdPublish => "nvd_publish",
            LifecycleState::GraPublish => "gra_publish",
            LifecycleState::GhsaPublish => "ghsa_publish",
            LifecycleState::Review => "review",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionEdge {
    pub from: LifecycleState,
    pub to: LifecycleState,
    pub count: u64,
    pub probability: f64,
    pub mean_gap_days: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub records_used: usize,
    pub edges: Vec<TransitionEdge>,
    /// Mean days spent in each non-final state before the next event.
    pub dwell_days: BTreeMap<LifecycleState, f64>,
}

impl TransitionSummary {
    pub fn probability(&self, from: LifecycleState, to: LifecycleState) -> f64 {
        self.edges
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| e.probability)
            .unwrap_or(0.0)
    }
}

/// Lifecycle events of a record in time order (ties in state order), cut
/// after review since review ends the lifecycle.
fn lifecycle(record: &AdvisoryRecord) -> Vec<(Timestamp, LifecycleState)> {
    let mut events: Vec<(Timestamp, LifecycleState)> = [
        (record.patched_at, LifecycleState::Patch),
        (record.nvd_published_at, LifecycleState::NvdPublish),
        (record.gra_published_at, LifecycleState::GraPublish),
        (record.published_at, LifecycleState::GhsaPublish),
        (record.github_reviewed_at, LifecycleState::Review),
    ]
    .into_iter()
    .filter_map(|(t, s)| t.map(|t| (t, s)))
    .collect();
    events.sort();
    if let Some(pos) = events.iter().position(|(_, s)| *s == LifecycleState::Review) {
        events.truncate(pos + 1);
    }
    events
}

/// Next-event transition frequencies and mean dwell times over records with
/// at least two lifecycle events.
pub fn transition_summary(records: &[AdvisoryRecord]) -> TransitionSummary {
    let mut counts: BTreeMap<(LifecycleState, LifecycleState), (u64, f64)> = BTreeMap::new();
    let mut out_totals: BTreeMap<LifecycleState, (u64, f64)> = BTreeMap::new();
    let mut used = 0;
    for r in records {
        let events = lifecycle(r);
        if events.len() < 2 {
            continue;
        }
        used += 1;
        for w in events.windows(2) {
            let gap = w[1].0.days_since(w[0].0);
            let e = counts.entry((w[0].1, w[1].1)).or_default();
            e.0 += 1;
            e.1 += gap;
            let o = out_totals.entry(w[0].1).or_default();
            o.0 += 1;
            o.1 += gap;
        }
    }
    let edges = counts
        .into_iter()
        .map(|((from, to), (count, gap_sum))| TransitionEdge {
            from,
            to,
            count,
            probability: count as f64 / out_totals[&from].0 as f64,
            mean_gap_days: gap_sum / count as f64,
        })
        .collect();
    let dwell_days = out_totals
        .into_iter()
        .map(|(s, (n, total))| (s, total / n as f64))
        .collect();
    TransitionSummary {
        records_used: used,
        edges,
        dwell_days,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthetic_ghsa_id, Timestamp};
    use crate::queue::{simulate, traces_to_records, QueueParams};
    use LifecycleState::*;

    fn t(d: i64) -> Timestamp {
        Timestamp::parse("2023-01-01T00:00:00Z")
            .unwrap()
            .plus_seconds(d * 86_400)
    }

    #[test]
    fn patch_then_review_only() {
        let records: Vec<_> = (0..5)
            .map(|i| {
                let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i));
                r.patched_at = Some(t(0));
                r.github_reviewed_at = Some(t(i as i64 + 1));
                r
            })
            .collect();
        let s = transition_summary(&records);
        assert_eq!(s.edges.len(), 1);
        assert_eq!(s.probability(Patch, Review), 1.0);
        assert_eq!(s.dwell_days[&Patch], 3.0);
    }

    #[test]
    fn events_after_review_are_ignored() {
        let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(1));
        r.patched_at = Some(t(0));
        r.github_reviewed_at = Some(t(2));
        r.nvd_published_at = Some(t(9));
        let s = transition_summary(&[r]);
        assert_eq!(s.probability(Patch, Review), 1.0);
        assert_eq!(s.probability(Review, NvdPublish), 0.0);
    }

    #[test]
    fn nvd_first_share_and_stochastic_rows() {
        let params = QueueParams::new(3.413, 4.0, 0.05, 0.474).unwrap();
        let origin = Timestamp::parse("2022-06-01T00:00:00Z").unwrap();
        let records = traces_to_records(&simulate(&params, 20_000, 3), origin);
        let s = transition_summary(&records);
        assert!((s.probability(Patch, NvdPublish) - 0.474).abs() < 0.015);
        let mut row_sums: BTreeMap<LifecycleState, f64> = BTreeMap::new();
        for e in &s.edges {
            *row_sums.entry(e.from).or_default() += e.probability;
        }
        for sum in row_sums.values() {
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
