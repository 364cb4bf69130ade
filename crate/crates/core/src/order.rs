//! FIFO tendency of the review pipeline: arrival/review ranks and the longest
//! increasing subsequence against a random-permutation baseline.

use std::cmp::Ordering;
use std::io::{self, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::latency::TimeWindow;
use crate::model::{AdvisoryRecord, Source, Timestamp};
use crate::par::{self, Execution};

/// One advisory's arrival (patch release) and review time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankItem {
    pub id: String,
    pub arrival: Timestamp,
    pub review: Timestamp,
    pub source: Source,
}

/// How equal timestamps are ordered.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Lexicographic record identifier.
    #[default]
    Identifier,
    /// Position in the input slice.
    InputOrder,
}

/// Reviewed records with a patch time inside `window`.
pub fn rank_items(records: &[AdvisoryRecord], window: TimeWindow) -> Vec<RankItem> {
    records
        .iter()
        .filter_map(|r| {
            let arrival = r.patched_at?;
            let review = r.github_reviewed_at?;
            window.contains(arrival).then(|| RankItem {
                id: r.ghsa_id.clone(),
                arrival,
                review,
                source: r.source(),
            })
        })
        .collect()
}

fn order_by<F>(items: &[RankItem], key: F, tie: TieBreak) -> Vec<usize>
where
    F: Fn(&RankItem) -> Timestamp,
{
    let mut idx: Vec<usize> = (0..items.len()).collect();
    idx.sort_by(|&a, &b| {
        key(&items[a]).cmp(&key(&items[b])).then_with(|| match tie {
            TieBreak::Identifier => items[a].id.cmp(&items[b].id).then(a.cmp(&b)),
            TieBreak::InputOrder => a.cmp(&b),
        })
    });
    idx
}

/// Permutation of review ranks indexed by arrival rank (both 1-based):
/// `perm[i]` is the review rank of the (i+1)-th arrival. Also returns the
/// item index of each arrival rank.
pub fn rank_pairs(items: &[RankItem], tie: TieBreak) -> (Vec<usize>, Vec<usize>) {
    let by_arrival = order_by(items, |x| x.arrival, tie);
    let by_review = order_by(items, |x| x.review, tie);
    let mut review_rank = vec![0; items.len()];
    for (rank, &i) in by_review.iter().enumerate() {
        review_rank[i] = rank + 1;
    }
    let perm = by_arrival.iter().map(|&i| review_rank[i]).collect();
    (perm, by_arrival)
}

/// Length of the longest strictly increasing subsequence (patience sorting).
pub fn lis_length<T: Ord>(seq: &[T]) -> usize {
    let mut tails: Vec<&T> = Vec::new();
    for x in seq {
        let pos = tails.partition_point(|t| t.cmp(&x) == Ordering::Less);
        if pos == tails.len() {
            tails.push(x);
        } else {
            tails[pos] = x;
        }
    }
    tails.len()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub n: usize,
    pub lis_length: usize,
    pub lis_fraction: f64,
    /// First-order random-permutation expectation 2/√n.
    pub baseline_fraction: f64,
}

pub fn fifo_assessment(perm: &[usize]) -> Option<OrderStats> {
    let n = perm.len();
    if n == 0 {
        return None;
    }
    let lis = lis_length(perm);
    Some(OrderStats {
        n,
        lis_length: lis,
        lis_fraction: lis as f64 / n as f64,
        baseline_fraction: 2.0 / (n as f64).sqrt(),
    })
}

/// LIS fractions of `reps` seeded uniform random permutations of size `n`.
/// Replication `k` uses seed `seed + k`, so results do not depend on `exec`.
pub fn random_lis_fractions(n: usize, reps: usize, seed: u64, exec: Execution) -> Vec<f64> {
    par::map_range(exec, reps, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
        let mut perm: Vec<u32> = (0..n as u32).collect();
        perm.shuffle(&mut rng);
        lis_length(&perm) as f64 / n as f64
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScatterRow {
    pub arrival_rank: usize,
    pub review_rank: usize,
    pub source: Source,
}

/// Rank pairs with their source, in arrival order.
pub fn scatter_rows(items: &[RankItem], tie: TieBreak) -> Vec<ScatterRow> {
    let (perm, by_arrival) = rank_pairs(items, tie);
    perm.iter()
        .zip(&by_arrival)
        .enumerate()
        .map(|(i, (&review_rank, &item))| ScatterRow {
            arrival_rank: i + 1,
            review_rank,
            source: items[item].source,
        })
        .collect()
}

/// Writes `arrival_rank,review_rank,source` rows.
pub fn write_scatter<W: Write>(rows: &[ScatterRow], out: W) -> io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record(["arrival_rank", "review_rank", "source"])?;
    }
    w.flush()
}
