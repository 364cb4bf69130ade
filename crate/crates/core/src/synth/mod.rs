//! Seeded synthetic datasets and fixture trees for tests, benches and the
//! offline pipeline.

mod world;

use std::collections::{BTreeMap, BTreeSet};

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::credits::{role_set_name, RoleSet};
use crate::model::{synthetic_ghsa_id, AdvisoryRecord, Credit, EcosystemDb, Role, Source, Timestamp};

pub use world::{write_fixture_tree, World, WorldOptions};

/// Credit occurrences per role in the reference population.
pub const ROLE_OCCURRENCES: [(Role, u64); 10] = [
    (Role::Analyst, 5610),
    (Role::Reporter, 2086),
    (Role::Finder, 616),
    (Role::RemediationDeveloper, 602),
    (Role::RemediationReviewer, 349),
    (Role::Coordinator, 236),
    (Role::RemediationVerifier, 51),
    (Role::Other, 31),
    (Role::Sponsor, 7),
    (Role::Tool, 3),
];

/// Users per number of distinct roles.
pub const USERS_BY_ROLE_COUNT: [(usize, u64); 5] = [(1, 3521), (2, 313), (3, 72), (4, 19), (5, 3)];

use Role::{
    Analyst as A, Coordinator as C, Finder as F, RemediationDeveloper as D, RemediationReviewer as V, Reporter as R,
};

/// Most frequent role combinations per size, with user counts.
pub const TOP_COMBINATIONS: &[(&[Role], u64)] = &[
    (&[A, R], 98),
    (&[F, R], 47),
    (&[V, D], 37),
    (&[F, R, A], 26),
    (&[V, D, A], 9),
    (&[D, C, A], 5),
    (&[D, V, C, A], 4),
    (&[R, C, A, V], 2),
    (&[D, R, C, A], 2),
    (&[C, R, V, D, A], 2),
    (&[C, R, F, D, A], 1),
];

/// Roles that filler combinations draw from; the rare roles are left to
/// single-role users so their occurrence totals stay reachable.
const FILLER_ROLES: [Role; 6] = [A, R, F, D, V, C];

/// Credits population whose role totals and role combinations are known
/// exactly.
#[derive(Clone, Debug)]
pub struct CreditsPopulation {
    pub records: Vec<AdvisoryRecord>,
    /// Role set of every generated user.
    pub user_sets: BTreeMap<String, RoleSet>,
}

impl CreditsPopulation {
    /// User count per combination, grouped by combination size.
    pub fn combination_counts(&self) -> BTreeMap<usize, BTreeMap<RoleSet, u64>> {
        let mut out: BTreeMap<usize, BTreeMap<RoleSet, u64>> = BTreeMap::new();
        for set in self.user_sets.values() {
            *out.entry(set.len()).or_default().entry(set.clone()).or_default() += 1;
        }
        out
    }
}

fn combinations(pool: &[Role], k: usize) -> Vec<RoleSet> {
    if k == 0 {
        return vec![RoleSet::new()];
    }
    let mut out = Vec::new();
    for (i, &first) in pool.iter().enumerate() {
        for mut rest in combinations(&pool[i + 1..], k - 1) {
            rest.insert(first);
            out.push(rest);
        }
    }
    out
}

/// Builds the population: users per role count and the listed top
/// combinations exactly as in the constants above, remaining multi-role users
/// spread over other combinations with strictly smaller counts, single-role
/// users sized so every role's occurrence total is reachable, then extra
/// credits until each role matches [`ROLE_OCCURRENCES`]. Deterministic.
pub fn credits_population() -> CreditsPopulation {
    let mut sets: Vec<RoleSet> = Vec::new();
    for &(size, users) in &USERS_BY_ROLE_COUNT[1..] {
        let tops: Vec<(RoleSet, u64)> = TOP_COMBINATIONS
            .iter()
            .filter(|(roles, _)| roles.len() == size)
            .map(|(roles, n)| (roles.iter().copied().collect(), *n))
            .collect();
        let listed: u64 = tops.iter().map(|t| t.1).sum();
        let third = tops.iter().map(|t| t.1).min().unwrap();
        for (set, n) in &tops {
            sets.extend(std::iter::repeat_n(set.clone(), *n as usize));
        }
        let fillers: Vec<RoleSet> = combinations(&FILLER_ROLES, size)
            .into_iter()
            .filter(|s| !tops.iter().any(|t| &t.0 == s))
            .collect();
        let remaining = users - listed;
        let per_filler = remaining.div_ceil(fillers.len().max(1) as u64);
        assert!(
            remaining == 0 || per_filler < third,
            "filler count {per_filler} would reach the top three"
        );
        for i in 0..remaining as usize {
            sets.push(fillers[i % fillers.len()].clone());
        }
    }

    let targets: BTreeMap<Role, u64> = ROLE_OCCURRENCES.into_iter().collect();
    let mut used: BTreeMap<Role, u64> = Role::ALL.iter().map(|r| (*r, 0)).collect();
    for set in &sets {
        for r in set {
            *used.get_mut(r).unwrap() += 1;
        }
    }
    let capacity: BTreeMap<Role, u64> = targets.iter().map(|(r, t)| (*r, t - used[r])).collect();
    let total_capacity: u64 = capacity.values().sum();
    let singles_total = USERS_BY_ROLE_COUNT[0].1;
    let mut singles: BTreeMap<Role, u64> = capacity
        .iter()
        .map(|(r, c)| (*r, (c * singles_total / total_capacity).max(1).min(*c)))
        .collect();
    let assigned: u64 = singles.values().sum();
    *singles.get_mut(&Role::Analyst).unwrap() += singles_total - assigned;
    assert!(singles[&Role::Analyst] <= capacity[&Role::Analyst]);
    for (role, n) in &singles {
        sets.extend(std::iter::repeat_n(RoleSet::from([*role]), *n as usize));
    }

    let user_sets: BTreeMap<String, RoleSet> = sets
        .into_iter()
        .enumerate()
        .map(|(i, s)| (format!("user{i:05}"), s))
        .collect();

    // one credit per (user, role), then extras cycling over each role's users
    let mut credits: Vec<Credit> = user_sets
        .iter()
        .flat_map(|(login, set)| {
            set.iter().map(|role| Credit {
                user_login: login.clone(),
                role: *role,
            })
        })
        .collect();
    for (role, target) in &targets {
        let holders: Vec<&String> = user_sets
            .iter()
            .filter(|(_, s)| s.contains(role))
            .map(|(l, _)| l)
            .collect();
        let have = credits.iter().filter(|c| c.role == *role).count() as u64;
        for k in 0..(target - have) as usize {
            credits.push(Credit {
                user_login: holders[k % holders.len()].clone(),
                role: *role,
            });
        }
    }

    CreditsPopulation {
        records: pack_credits(credits),
        user_sets,
    }
}

/// Groups credits into advisories of at most three, never crediting a user
/// twice on one advisory. Advisories are an hour apart.
fn pack_credits(credits: Vec<Credit>) -> Vec<AdvisoryRecord> {
    let origin = Timestamp::parse("2020-01-01T00:00:00Z").unwrap();
    let mut groups: Vec<Vec<Credit>> = vec![Vec::new()];
    for c in credits {
        let current = groups.last().unwrap();
        if current.len() == 3 || current.iter().any(|x| x.user_login == c.user_login) {
            groups.push(Vec::new());
        }
        groups.last_mut().unwrap().push(c);
    }
    groups
        .into_iter()
        .enumerate()
        .map(|(i, credits)| {
            let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i as u64));
            let published = origin.plus_seconds(3600 * i as i64);
            r.published_at = Some(published);
            r.github_reviewed_at = Some(published.plus_seconds(1800));
            r.reviewed = true;
            r.credits = credits;
            r
        })
        .collect()
}

/// Top three combinations per size as the analysis should rank them.
pub fn expected_top_combinations(counts: &BTreeMap<RoleSet, u64>) -> Vec<(RoleSet, u64)> {
    let mut ranked: Vec<(RoleSet, u64)> = counts.iter().map(|(s, n)| (s.clone(), *n)).collect();
    ranked.sort_by(|a, b| {
        b.1.cmp(&a.1)
            .then_with(|| role_set_name(&a.0).cmp(&role_set_name(&b.0)))
    });
    ranked.truncate(3);
    ranked
}

fn day(t: Timestamp, days: f64) -> Timestamp {
    t.plus_seconds((days * 86_400.0).round() as i64)
}

/// Flow fixture: `gra_origin` advisories published as repository advisories a
/// day before GHSA, `from_nvd` and `from_ecosystem` advisories that reach the
/// repository advisory (same day as GHSA) a day after NVD or RustSec.
pub fn flow_fixture(gra_origin: u64, from_nvd: u64, from_ecosystem: u64) -> Vec<AdvisoryRecord> {
    let origin = Timestamp::parse("2023-01-02T12:00:00Z").unwrap();
    let mut out = Vec::new();
    let mut push = |first: &dyn Fn(&mut AdvisoryRecord, Timestamp)| {
        let i = out.len() as u64;
        let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i));
        let t0 = origin.plus_seconds(600 * i as i64);
        let t1 = day(t0, 1.0);
        r.reviewed = true;
        r.published_at = Some(t1);
        r.github_reviewed_at = Some(t1);
        r.repository_advisory_url = Some(format!("https://github.com/o/r{i}/security/advisories/{}", r.ghsa_id));
        r.gra_published_at = Some(t1);
        first(&mut r, t0);
        out.push(r);
    };
    for _ in 0..gra_origin {
        push(&|r, t0| r.gra_published_at = Some(t0));
    }
    for _ in 0..from_nvd {
        push(&|r, t0| r.nvd_published_at = Some(t0));
    }
    for _ in 0..from_ecosystem {
        push(&|r, t0| {
            r.ecosystem_published_at.insert(EcosystemDb::Rustsec, t0);
        });
    }
    out
}

/// Lognormal lag distribution given by its median and log-scale spread.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LognormalLag {
    pub median_days: f64,
    pub sigma: f64,
}

impl LognormalLag {
    pub fn quantile(&self, q: f64) -> f64 {
        let z = Normal::standard().inverse_cdf(q);
        self.median_days * (self.sigma * z).exp()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.sample(Open01))
    }
}

/// `n` reviewed advisories from `source` published 20 minutes apart from
/// `start`, with time-to-review drawn from `lag`.
pub fn latency_fixture(
    n: usize,
    lag: LognormalLag,
    source: Source,
    start: Timestamp,
    seed: u64,
) -> Vec<AdvisoryRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i as u64));
            let published = start.plus_seconds(1200 * i as i64);
            r.published_at = Some(published);
            match source {
                Source::Gra => {
                    r.repository_advisory_url =
                        Some(format!("https://github.com/o/r{i}/security/advisories/{}", r.ghsa_id));
                    r.gra_published_at = Some(published);
                }
                Source::Nvd => {
                    r.cve_id = Some(format!("CVE-2023-{}", 10_000 + i));
                    r.nvd_published_at = Some(published);
                }
                Source::Other => {}
            }
            r.github_reviewed_at = Some(day(published, lag.sample(&mut rng)));
            r.reviewed = true;
            r
        })
        .collect()
}

/// `total` repository advisories, of which the first `within` are reviewed
/// one day after publication and the rest after `threshold_days + 4`.
pub fn share_fixture(within: usize, total: usize, threshold_days: f64) -> Vec<AdvisoryRecord> {
    let start = Timestamp::parse("2023-01-01T00:00:00Z").unwrap();
    let mut records = latency_fixture(
        total,
        LognormalLag {
            median_days: 1.0,
            sigma: 0.0,
        },
        Source::Gra,
        start,
        0,
    );
    for r in &mut records[within..] {
        r.github_reviewed_at = Some(day(r.published_at.unwrap(), threshold_days + 4.0));
    }
    records
}

/// Distinct user logins of a record set, sorted.
pub fn logins(records: &[AdvisoryRecord]) -> BTreeSet<&str> {
    records
        .iter()
        .flat_map(|r| &r.credits)
        .map(|c| c.user_login.as_str())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::credits::{reviewer_experience, role_frequencies, specialization_table};
    use crate::flow::{build_sankey, Platform};
    use crate::latency::{collect_samples, share_within, LagKind};
    use crate::model::epoch_floor;
    use crate::par::Execution;

    #[test]
    fn population_matches_constants() {
        let pop = credits_population();
        let freq = role_frequencies(&pop.records);
        for (role, n) in ROLE_OCCURRENCES {
            assert_eq!(freq[&role], n, "{role}");
        }
        let table = specialization_table(&pop.records);
        let counts = pop.combination_counts();
        for (row, (size, users)) in table.iter().zip(USERS_BY_ROLE_COUNT) {
            assert_eq!((row.role_count, row.user_count), (size, users));
            assert_eq!(row.top_combinations, expected_top_combinations(&counts[&size]));
            if size > 1 {
                for (set, n) in &row.top_combinations {
                    assert!(TOP_COMBINATIONS
                        .iter()
                        .any(|(roles, m)| m == n && roles.iter().copied().collect::<RoleSet>() == *set));
                }
            }
        }
        for r in &pop.records {
            let users: BTreeSet<_> = r.credits.iter().map(|c| &c.user_login).collect();
            assert_eq!(users.len(), r.credits.len());
        }
    }

    #[test]
    fn experience_counts_step_by_one() {
        let pop = credits_population();
        let mut last: BTreeMap<String, u64> = BTreeMap::new();
        for e in reviewer_experience(&pop.records, epoch_floor()) {
            let expected = last.get(&e.reviewer_login).map_or(0, |n| n + 1);
            assert_eq!(e.prior_review_count, expected);
            last.insert(e.reviewer_login, e.prior_review_count);
        }
    }

    #[test]
    fn flow_fixture_share() {
        let s = build_sankey(&flow_fixture(5230, 268, 8), Execution::Sequential);
        assert_eq!(s.qualifying_advisories, 5506);
        let share = s.origin_share(Platform::Gra).unwrap();
        assert!((share - 5230.0 / 5506.0).abs() < 1e-12);
    }

    #[test]
    fn lognormal_quantiles() {
        let lag = LognormalLag {
            median_days: 0.84,
            sigma: 0.4,
        };
        assert!((lag.quantile(0.5) - 0.84).abs() < 1e-12);
        assert!(lag.quantile(0.9) > lag.quantile(0.1));
        let recs = latency_fixture(
            100,
            lag,
            Source::Nvd,
            Timestamp::parse("2023-01-01T00:00:00Z").unwrap(),
            1,
        );
        assert!(recs.iter().all(|r| r.source() == Source::Nvd));
        assert_eq!(
            recs,
            latency_fixture(
                100,
                lag,
                Source::Nvd,
                Timestamp::parse("2023-01-01T00:00:00Z").unwrap(),
                1
            )
        );
    }

    #[test]
    fn share_fixture_counts() {
        let samples = collect_samples(&share_fixture(4151, 4350, 5.0), LagKind::TimeToReview);
        assert!((share_within(&samples, Source::Gra, 5.0).unwrap() - 4151.0 / 4350.0).abs() < 1e-12);
    }
}
