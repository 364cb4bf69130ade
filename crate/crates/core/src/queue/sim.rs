//! Event-list simulation of the two-stage queue.

use log::warn;
use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::QueueParams;
use crate::model::{synthetic_ghsa_id, AdvisoryRecord, AffectedPackage, Source, Timestamp};
use crate::order::ScatterRow;
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    Direct,
    NvdFirst,
}

/// One simulated advisory. Times are in days from the start of the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub arrival_time: f64,
    pub path: Route,
    pub stage2_exit_time: Option<f64>,
    pub review_start: f64,
    pub review_end: f64,
    pub arrival_rank: usize,
    pub review_rank: usize,
}

impl SimTrace {
    /// Time at which the advisory joins the review queue.
    pub fn join_time(&self) -> f64 {
        self.stage2_exit_time.unwrap_or(self.arrival_time)
    }

    pub fn review_time(&self) -> f64 {
        self.review_end - self.arrival_time
    }
}

fn exponential<R: Rng>(rng: &mut R, rate: f64) -> f64 {
    let u: f64 = rng.sample(Open01);
    -(1.0 - u).ln() / rate
}

/// Simulates `n` arrivals. Each advisory draws, in order, its inter-arrival
/// gap, a routing uniform, a stage-two delay and a service time, so a seed
/// fixes every advisory's randomness regardless of route.
pub fn simulate(params: &QueueParams, n: usize, seed: u64) -> Vec<SimTrace> {
    if params.load() > 0.98 {
        warn!(
            "review stage load lambda/mu1 = {:.4}; simulated means converge slowly",
            params.load()
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut clock = 0.0;
    let mut traces = Vec::with_capacity(n);
    let mut services = Vec::with_capacity(n);
    for i in 0..n {
        clock += exponential(&mut rng, params.lambda);
        let route_u: f64 = rng.random();
        let delay = exponential(&mut rng, params.mu2);
        services.push(exponential(&mut rng, params.mu1));
        let nvd_first = route_u < params.p;
        traces.push(SimTrace {
            arrival_time: clock,
            path: if nvd_first { Route::NvdFirst } else { Route::Direct },
            stage2_exit_time: nvd_first.then_some(clock + delay),
            review_start: 0.0,
            review_end: 0.0,
            arrival_rank: i + 1,
            review_rank: 0,
        });
    }

    let mut queue: Vec<usize> = (0..n).collect();
    queue.sort_by(|&a, &b| traces[a].join_time().total_cmp(&traces[b].join_time()).then(a.cmp(&b)));
    let mut free_at = 0.0f64;
    for &i in &queue {
        let start = traces[i].join_time().max(free_at);
        traces[i].review_start = start;
        traces[i].review_end = start + services[i];
        free_at = traces[i].review_end;
    }

    let mut by_end: Vec<usize> = (0..n).collect();
    by_end.sort_by(|&a, &b| traces[a].review_end.total_cmp(&traces[b].review_end).then(a.cmp(&b)));
    for (rank, &i) in by_end.iter().enumerate() {
        traces[i].review_rank = rank + 1;
    }
    traces
}

/// Independent runs, one per seed, in seed order.
pub fn simulate_replications(params: &QueueParams, n: usize, seeds: &[u64], exec: Execution) -> Vec<Vec<SimTrace>> {
    par::map(exec, seeds, |&seed| simulate(params, n, seed))
}

pub fn trace_mean_review_time(traces: &[SimTrace]) -> Option<f64> {
    if traces.is_empty() {
        return None;
    }
    Some(traces.iter().map(SimTrace::review_time).sum::<f64>() / traces.len() as f64)
}

/// Scatter rows in arrival order; direct advisories are labelled as
/// repository-advisory arrivals and NVD-first ones as NVD arrivals.
pub fn scatter_rows(traces: &[SimTrace]) -> Vec<ScatterRow> {
    let mut rows: Vec<ScatterRow> = traces
        .iter()
        .map(|t| ScatterRow {
            arrival_rank: t.arrival_rank,
            review_rank: t.review_rank,
            source: match t.path {
                Route::Direct => Source::Gra,
                Route::NvdFirst => Source::Nvd,
            },
        })
        .collect();
    rows.sort_by_key(|r| r.arrival_rank);
    rows
}

fn at(origin: Timestamp, days: f64) -> Timestamp {
    origin.plus_seconds((days * 86_400.0).round() as i64)
}

/// Turns traces into reviewed advisory records anchored at `origin`: patch
/// release at arrival, NVD and GHSA publication at stage-two exit for the
/// NVD-first path, repository advisory publication at arrival otherwise.
pub fn traces_to_records(traces: &[SimTrace], origin: Timestamp) -> Vec<AdvisoryRecord> {
    traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let id = synthetic_ghsa_id(i as u64);
            let name = format!("pkg-{i}");
            let mut r = AdvisoryRecord::bare(id.clone());
            r.reviewed = true;
            r.source_code_location = Some(format!("synthetic/{name}"));
            r.patched_at = Some(at(origin, t.arrival_time));
            r.github_reviewed_at = Some(at(origin, t.review_end));
            r.vulnerabilities.push(AffectedPackage {
                package_name: name.clone(),
                ecosystem: r.ecosystem,
                first_patched_version: Some("1.0.1".into()),
            });
            match t.stage2_exit_time {
                Some(exit) => {
                    let published = at(origin, exit);
                    r.cve_id = Some(format!("CVE-{}-{}", published.date().format("%Y"), 10_000 + i));
                    r.nvd_published_at = Some(published);
                    r.published_at = Some(published);
                }
                None => {
                    let published = at(origin, t.arrival_time);
                    r.repository_advisory_url =
                        Some(format!("https://github.com/synthetic/{name}/security/advisories/{id}"));
                    r.gra_published_at = Some(published);
                    r.published_at = Some(published);
                }
            }
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::order::{fifo_assessment, lis_length};
    use crate::queue::mean_review_time;
    use proptest::prelude::*;

    fn params(lambda: f64, mu1: f64, mu2: f64, p: f64) -> QueueParams {
        QueueParams::new(lambda, mu1, mu2, p).unwrap()
    }

    fn perm(traces: &[SimTrace]) -> Vec<usize> {
        scatter_rows(traces).iter().map(|r| r.review_rank).collect()
    }

    #[test]
    fn pure_fifo_keeps_order() {
        let traces = simulate(&params(1.0, 50.0, 1.0, 0.0), 2000, 4);
        assert_eq!(fifo_assessment(&perm(&traces)).unwrap().lis_fraction, 1.0);
    }

    #[test]
    fn instant_second_stage_matches_direct() {
        let p = params(2.0, 2.5, 1e6, 1.0);
        let a = trace_mean_review_time(&simulate(&p, 100_000, 8)).unwrap();
        let b = trace_mean_review_time(&simulate(&p.with_p(0.0), 100_000, 8)).unwrap();
        assert!((a - b).abs() / b < 0.01, "{a} {b}");
    }

    #[test]
    fn moderate_load_mean_converges() {
        let p = params(2.0, 2.5, 0.2, 0.4);
        let expected = mean_review_time(&p).unwrap();
        let dev = |n: usize| {
            let runs = simulate_replications(&p, n, &[1, 2, 3, 4, 5, 6, 7, 8], Execution::Parallel);
            let devs: Vec<f64> = runs
                .iter()
                .map(|t| (trace_mean_review_time(t).unwrap() - expected).abs() / expected)
                .collect();
            devs.iter().sum::<f64>() / devs.len() as f64
        };
        let (d3, d4, d5) = (dev(1_000), dev(10_000), dev(100_000));
        assert!(d5 < d4 && d4 < d3, "{d3} {d4} {d5}");
        assert!(d5 < 0.02);
    }

    #[test]
    fn same_seed_same_traces() {
        let p = params(3.413, 3.433, 0.006, 0.474);
        assert_eq!(simulate(&p, 500, 42), simulate(&p, 500, 42));
        assert_ne!(simulate(&p, 500, 42), simulate(&p, 500, 43));
        let seq = simulate_replications(&p, 300, &[1, 2], Execution::Sequential);
        let par = simulate_replications(&p, 300, &[1, 2], Execution::Parallel);
        assert_eq!(seq, par);
    }

    #[test]
    fn mixing_with_calibrated_params() {
        let p = params(3.413, 3.433, 0.006, 0.474);
        let stats = fifo_assessment(&perm(&simulate(&p, 4404, 2024))).unwrap();
        assert!(
            stats.lis_fraction > 0.05 && stats.lis_fraction < 0.95,
            "{}",
            stats.lis_fraction
        );
        assert!(stats.lis_fraction > stats.baseline_fraction);
    }

    #[test]
    fn records_carry_routes() {
        let traces = simulate(&params(2.0, 3.0, 0.5, 0.5), 200, 1);
        let origin = Timestamp::parse("2022-06-01T00:00:00Z").unwrap();
        let records = traces_to_records(&traces, origin);
        let now = Timestamp::parse("2030-01-01T00:00:00Z").unwrap();
        for (t, r) in traces.iter().zip(&records) {
            r.validate(now).unwrap();
            match t.path {
                Route::Direct => assert_eq!(r.source(), Source::Gra),
                Route::NvdFirst => assert_eq!(r.source(), Source::Nvd),
            }
        }
        let mut ids: Vec<_> = records.iter().map(|r| r.ghsa_id.clone()).collect();
        let sorted = {
            let mut s = ids.clone();
            s.sort();
            s
        };
        assert_eq!(ids, sorted);
        ids.dedup();
        assert_eq!(ids.len(), records.len());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn trace_invariants(seed in any::<u64>(), p in 0.0f64..=1.0, n in 1usize..400) {
            let traces = simulate(&params(2.0, 2.6, 0.3, p), n, seed);
            let mut direct = Vec::new();
            for t in &traces {
                prop_assert!(t.review_end > t.review_start);
                prop_assert!(t.review_start >= t.join_time());
                prop_assert_eq!(t.path == Route::NvdFirst, t.stage2_exit_time.is_some());
                if t.path == Route::Direct {
                    direct.push(t.review_rank);
                }
            }
            // direct advisories keep their relative order through the server
            prop_assert_eq!(lis_length(&direct), direct.len());
            let mut ranks: Vec<_> = traces.iter().map(|t| t.review_rank).collect();
            ranks.sort();
            prop_assert_eq!(ranks, (1..=n).collect::<Vec<_>>());
        }
    }
}
