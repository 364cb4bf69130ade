//! Credit roles: frequencies, specialization, popularity per role, reviewer
//! experience and the GRA-linked vs. other repository comparison.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{AdvisoryRecord, RepoMetadata, Role, Timestamp, UserProfile};
use crate::stats::{self, RankTestResult, StatsError};

#[derive(Debug, Error)]
pub enum CreditsError {
    #[error("repository group `{group}` has {got} repos with a value for {metric}; need at least 2")]
    GroupTooSmall {
        group: &'static str,
        metric: RepoMetric,
        got: usize,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Occurrences of each role over all (advisory, credit) pairs. Every role is
/// present in the map, zero-filled.
pub fn role_frequencies(records: &[AdvisoryRecord]) -> BTreeMap<Role, u64> {
    let mut counts: BTreeMap<Role, u64> = Role::ALL.iter().map(|r| (*r, 0)).collect();
    for credit in records.iter().flat_map(|r| &r.credits) {
        *counts.get_mut(&credit.role).unwrap() += 1;
    }
    counts
}

/// A set of roles, ordered by role enum order.
pub type RoleSet = BTreeSet<Role>;

/// Canonical name of a role set: role names in enum order joined by `+`.
/// Also the tie-break key between combinations with equal counts.
pub fn role_set_name(set: &RoleSet) -> String {
    set.iter().map(Role::as_str).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCombinationRow {
    pub role_count: usize,
    pub user_count: u64,
    /// At most three entries, count-descending, ties by [`role_set_name`].
    pub top_combinations: Vec<(RoleSet, u64)>,
}

/// Distinct role set of every credited user, keyed by login.
pub fn user_role_sets(records: &[AdvisoryRecord]) -> BTreeMap<&str, RoleSet> {
    let mut sets: BTreeMap<&str, RoleSet> = BTreeMap::new();
    for credit in records.iter().flat_map(|r| &r.credits) {
        sets.entry(credit.user_login.as_str()).or_default().insert(credit.role);
    }
    sets
}

pub fn specialization_table(records: &[AdvisoryRecord]) -> Vec<RoleCombinationRow> {
    let mut by_size: BTreeMap<usize, BTreeMap<RoleSet, u64>> = BTreeMap::new();
    for set in user_role_sets(records).into_values() {
        *by_size.entry(set.len()).or_default().entry(set).or_default() += 1;
    }
    by_size
        .into_iter()
        .map(|(role_count, combos)| {
            let user_count = combos.values().sum();
            let mut ranked: Vec<(RoleSet, u64)> = combos.into_iter().collect();
            ranked.sort_by(|a, b| {
                b.1.cmp(&a.1)
                    .then_with(|| role_set_name(&a.0).cmp(&role_set_name(&b.0)))
            });
            ranked.truncate(3);
            RoleCombinationRow {
                role_count,
                user_count,
                top_combinations: ranked,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
    pub std: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        Summary {
            mean: stats::mean(values).unwrap(),
            median: stats::median(values).unwrap(),
            std: stats::std_dev(values).unwrap(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolePopularityRow {
    pub role: Role,
    /// Credit occurrences with this role, including those without a profile.
    pub occurrences: u64,
    /// Occurrences excluded from the statistics for lack of a profile.
    pub missing_profiles: u64,
    pub stars: Summary,
    pub followers: Summary,
}

/// Stars and followers per role, computed over credit occurrences: a user
/// credited k times in a role contributes k values.
pub fn popularity_by_role(records: &[AdvisoryRecord], profiles: &[UserProfile]) -> Vec<RolePopularityRow> {
    let by_login: HashMap<&str, &UserProfile> = profiles.iter().map(|p| (p.login.as_str(), p)).collect();
    let mut stars: BTreeMap<Role, Vec<f64>> = BTreeMap::new();
    let mut followers: BTreeMap<Role, Vec<f64>> = BTreeMap::new();
    let mut occurrences: BTreeMap<Role, u64> = BTreeMap::new();
    let mut missing: BTreeMap<Role, u64> = BTreeMap::new();
    for credit in records.iter().flat_map(|r| &r.credits) {
        *occurrences.entry(credit.role).or_default() += 1;
        match by_login.get(credit.user_login.as_str()) {
            Some(p) => {
                stars.entry(credit.role).or_default().push(p.total_stars as f64);
                followers.entry(credit.role).or_default().push(p.followers as f64);
            }
            None => *missing.entry(credit.role).or_default() += 1,
        }
    }
    Role::ALL
        .iter()
        .map(|role| RolePopularityRow {
            role: *role,
            occurrences: occurrences.get(role).copied().unwrap_or(0),
            missing_profiles: missing.get(role).copied().unwrap_or(0),
            stars: Summary::of(stars.get(role).map(Vec::as_slice).unwrap_or(&[])),
            followers: Summary::of(followers.get(role).map(Vec::as_slice).unwrap_or(&[])),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperienceEvent {
    pub reviewer_login: String,
    pub ghsa_id: String,
    pub review_time: Timestamp,
    pub prior_review_count: u64,
    pub is_gra: bool,
}

/// Prior review experience of every credited user at each reviewed advisory.
///
/// Counts run over the full history; only events at or after `cutoff` are
/// returned. Events with equal timestamps are ordered by `ghsa_id`.
pub fn reviewer_experience(records: &[AdvisoryRecord], cutoff: Timestamp) -> Vec<ExperienceEvent> {
    let mut reviewed: Vec<(&AdvisoryRecord, Timestamp)> = records
        .iter()
        .filter_map(|r| r.github_reviewed_at.map(|t| (r, t)))
        .filter(|(r, _)| !r.credits.is_empty())
        .collect();
    reviewed.sort_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.ghsa_id.cmp(&b.0.ghsa_id)));

    let mut seen: HashMap<&str, u64> = HashMap::new();
    let mut events = Vec::new();
    for (record, review_time) in reviewed {
        let logins: BTreeSet<&str> = record.credits.iter().map(|c| c.user_login.as_str()).collect();
        for login in logins {
            let prior = seen.entry(login).or_default();
            if review_time >= cutoff {
                events.push(ExperienceEvent {
                    reviewer_login: login.to_string(),
                    ghsa_id: record.ghsa_id.clone(),
                    review_time,
                    prior_review_count: *prior,
                    is_gra: record.has_gra(),
                });
            }
            *prior += 1;
        }
    }
    events
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepoMetric {
    Stars,
    OpenIssues,
    SecurityPolicy,
    Maintained,
}

impl RepoMetric {
    pub const ALL: [RepoMetric; 4] = [
        RepoMetric::Stars,
        RepoMetric::OpenIssues,
        RepoMetric::SecurityPolicy,
        RepoMetric::Maintained,
    ];

    pub fn value(&self, repo: &RepoMetadata) -> Option<f64> {
        match self {
            RepoMetric::Stars => Some(repo.stars as f64),
            RepoMetric::OpenIssues => Some(repo.open_issues as f64),
            RepoMetric::SecurityPolicy => repo.security_policy_score,
            RepoMetric::Maintained => repo.maintained_score,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            RepoMetric::Stars => "stars",
            RepoMetric::OpenIssues => "open_issues",
            RepoMetric::SecurityPolicy => "security_policy",
            RepoMetric::Maintained => "maintained",
        }
    }
}

impl std::fmt::Display for RepoMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Splits repositories into (GRA-linked, other) values of `metric`. Repos
/// without a value for the metric are skipped.
pub fn repo_groups(metadata: &[RepoMetadata], metric: RepoMetric) -> (Vec<f64>, Vec<f64>) {
    let mut gra = Vec::new();
    let mut other = Vec::new();
    for repo in metadata {
        if let Some(v) = metric.value(repo) {
            if repo.gra_linked {
                gra.push(v);
            } else {
                other.push(v);
            }
        }
    }
    (gra, other)
}

/// Mann–Whitney comparison with the GRA-linked group first.
pub fn compare_repo_groups(metadata: &[RepoMetadata], metric: RepoMetric) -> Result<RankTestResult, CreditsError> {
    let (gra, other) = repo_groups(metadata, metric);
    for (group, values) in [("gra_linked", &gra), ("not_gra_linked", &other)] {
        if values.len() < 2 {
            return Err(CreditsError::GroupTooSmall {
                group,
                metric,
                got: values.len(),
            });
        }
    }
    Ok(stats::mann_whitney(&gra, &other)?)
}

/// Fraction of repos with a security-policy score above zero, per group
/// (GRA-linked, other), among repos that have a score at all.
pub fn security_policy_shares(metadata: &[RepoMetadata]) -> (Option<f64>, Option<f64>) {
    let (gra, other) = repo_groups(metadata, RepoMetric::SecurityPolicy);
    let share = |v: &[f64]| {
        if v.is_empty() {
            None
        } else {
            Some(v.iter().filter(|s| **s > 0.0).count() as f64 / v.len() as f64)
        }
    };
    (share(&gra), share(&other))
}
