//! Per-record timestamp enrichment and user/repository metadata collection.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use log::{info, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{next_link, Client, IngestError, Provider};
use crate::model::{AdvisoryRecord, Ecosystem, EcosystemDb, RepoMetadata, Timestamp, UserProfile};
use crate::par::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Step {
    GraTimestamp,
    NvdTimestamp,
    EcosystemTimestamp,
    PatchedAt,
    UserProfile,
    RepoMetadata,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    /// Guard not met or field already present.
    Skipped,
    Filled,
    Failed(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDetail {
    pub step: Step,
    pub key: String,
    pub reason: String,
}

/// An advisory whose references point at several files of one database.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiMatch {
    pub ghsa_id: String,
    pub db: EcosystemDb,
    pub paths: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrichmentReport {
    pub gra_timestamps_added: u64,
    pub nvd_timestamps_filled: u64,
    pub ecosystem_timestamps_added: BTreeMap<EcosystemDb, u64>,
    pub patched_at_resolved: u64,
    pub user_profiles_fetched: u64,
    pub repo_metadata_fetched: u64,
    pub failures: BTreeMap<Step, u64>,
    pub failure_details: Vec<FailureDetail>,
    pub multi_matches: Vec<MultiMatch>,
}

impl EnrichmentReport {
    fn record(&mut self, step: Step, key: &str, outcome: StepOutcome) {
        match outcome {
            StepOutcome::Skipped => {}
            StepOutcome::Filled => match step {
                Step::GraTimestamp => self.gra_timestamps_added += 1,
                Step::NvdTimestamp => self.nvd_timestamps_filled += 1,
                Step::PatchedAt => self.patched_at_resolved += 1,
                Step::UserProfile => self.user_profiles_fetched += 1,
                Step::RepoMetadata => self.repo_metadata_fetched += 1,
                Step::EcosystemTimestamp => unreachable!("counted per database"),
            },
            StepOutcome::Failed(reason) => {
                *self.failures.entry(step).or_default() += 1;
                self.failure_details.push(FailureDetail {
                    step,
                    key: key.to_string(),
                    reason,
                });
            }
        }
    }

    fn record_ecosystem(&mut self, key: &str, outcome: EcosystemOutcome) {
        for (db, o) in outcome.per_db {
            match o {
                StepOutcome::Filled => *self.ecosystem_timestamps_added.entry(db).or_default() += 1,
                StepOutcome::Failed(reason) => self.record(
                    Step::EcosystemTimestamp,
                    key,
                    StepOutcome::Failed(format!("{db}: {reason}")),
                ),
                StepOutcome::Skipped => {}
            }
        }
        self.multi_matches.extend(outcome.multi);
    }

    pub fn total_failures(&self) -> u64 {
        self.failures.values().sum()
    }

    /// Adds another report's counts.
    pub fn merge(&mut self, other: EnrichmentReport) {
        self.gra_timestamps_added += other.gra_timestamps_added;
        self.nvd_timestamps_filled += other.nvd_timestamps_filled;
        for (db, n) in other.ecosystem_timestamps_added {
            *self.ecosystem_timestamps_added.entry(db).or_default() += n;
        }
        self.patched_at_resolved += other.patched_at_resolved;
        self.user_profiles_fetched += other.user_profiles_fetched;
        self.repo_metadata_fetched += other.repo_metadata_fetched;
        for (s, n) in other.failures {
            *self.failures.entry(s).or_default() += n;
        }
        self.failure_details.extend(other.failure_details);
        self.multi_matches.extend(other.multi_matches);
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EcosystemOutcome {
    pub per_db: Vec<(EcosystemDb, StepOutcome)>,
    pub multi: Vec<MultiMatch>,
}

/// A file in a community database repository.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct EcosystemRef {
    pub db: EcosystemDb,
    /// `owner/name` of the database repository.
    pub repo: String,
    pub path: String,
}

fn patterns() -> &'static [(EcosystemDb, Regex)] {
    static P: OnceLock<Vec<(EcosystemDb, Regex)>> = OnceLock::new();
    P.get_or_init(|| {
        [
            (
                EcosystemDb::Rustsec,
                r"(?i)^https?://rustsec\.org/advisories/(RUSTSEC-\d{4}-\d{4})(?:\.html)?/?$",
            ),
            (
                EcosystemDb::Friendsofphp,
                r"(?i)^https?://github\.com/FriendsOfPHP/security-advisories/(?:blob|tree)/[^/]+/(.+\.ya?ml)$",
            ),
            (
                EcosystemDb::Pypa,
                r"(?i)^https?://github\.com/pypa/advisory-database/(?:blob|tree)/[^/]+/(.+\.ya?ml)$",
            ),
            (
                EcosystemDb::Rubysec,
                r"(?i)^https?://github\.com/rubysec/ruby-advisory-db/(?:blob|tree)/[^/]+/(.+\.ya?ml)$",
            ),
            (
                EcosystemDb::Govulndb,
                r"(?i)^https?://pkg\.go\.dev/vuln/(GO-\d{4}-\d+)/?$",
            ),
        ]
        .into_iter()
        .map(|(db, re)| (db, Regex::new(re).unwrap()))
        .collect()
    })
}

/// Matches a reference URL against the per-database patterns. `Some(Err)`
/// means the URL names a database entry whose file cannot be located.
pub fn match_ecosystem_reference(url: &str, record: &AdvisoryRecord) -> Option<Result<EcosystemRef, String>> {
    let url = url.trim().split(['?', '#']).next().unwrap_or("");
    let (db, caps) = patterns()
        .iter()
        .find_map(|(db, re)| re.captures(url).map(|c| (*db, c)))?;
    let m = caps[1].to_string();
    let found = |repo: &str, path: String| {
        Some(Ok(EcosystemRef {
            db,
            repo: repo.to_string(),
            path,
        }))
    };
    match db {
        EcosystemDb::Rustsec => {
            let id = m.to_ascii_uppercase();
            match record
                .vulnerabilities
                .iter()
                .find(|p| p.ecosystem == Ecosystem::Rust)
                .or(record.vulnerabilities.first())
            {
                Some(pkg) => found("rustsec/advisory-db", format!("crates/{}/{id}.md", pkg.package_name)),
                None => Some(Err(format!("{id}: no affected crate to locate the entry"))),
            }
        }
        EcosystemDb::Friendsofphp => found("FriendsOfPHP/security-advisories", m),
        EcosystemDb::Pypa => found("pypa/advisory-database", m),
        EcosystemDb::Rubysec => found("rubysec/ruby-advisory-db", m),
        EcosystemDb::Govulndb => found("golang/vulndb", format!("data/reports/{}.yaml", m.to_ascii_uppercase())),
    }
}

fn registry_system(eco: Ecosystem) -> Option<&'static str> {
    Some(match eco {
        Ecosystem::Pip => "pypi",
        Ecosystem::Go => "go",
        Ecosystem::Rubygems => "rubygems",
        Ecosystem::Npm => "npm",
        Ecosystem::Maven => "maven",
        Ecosystem::Nuget => "nuget",
        _ => return None,
    })
}

fn json_time(v: &Value, pointer: &str) -> Result<Timestamp, String> {
    let raw = v
        .pointer(pointer)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("response lacks {pointer}"))?;
    Timestamp::parse(raw).map_err(|e| format!("bad timestamp `{raw}` at {pointer}: {e}"))
}

fn json_u64(v: &Value, key: &str) -> Result<u64, String> {
    v.get(key)
        .and_then(Value::as_u64)
        .ok_or_else(|| format!("response lacks numeric `{key}`"))
}

fn gra_api_parts(url: &str) -> Option<(String, String, String)> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| {
        Regex::new(r"(?i)(?:github\.com/([^/]+)/([^/]+)/security/advisories|/repos/([^/]+)/([^/]+)/security-advisories)/(GHSA-[0-9a-z]{4}-[0-9a-z]{4}-[0-9a-z]{4})")
            .unwrap()
    });
    let c = re.captures(url)?;
    let owner = c.get(1).or(c.get(3))?.as_str().to_string();
    let repo = c.get(2).or(c.get(4))?.as_str().to_string();
    Some((owner, repo, c[5].to_string()))
}

/// Runs enrichment requests through a shared [`Client`].
pub struct Enricher {
    client: Client,
}

impl Enricher {
    pub fn new(client: Client) -> Self {
        Enricher { client }
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    fn json(&self, provider: Provider, url: &str) -> Result<Value, String> {
        self.client
            .get_json(provider, url)
            .map(|(v, _)| v)
            .map_err(|e| e.to_string())
    }

    /// Every item of a paginated JSON array listing.
    fn all_pages(&self, provider: Provider, first: String) -> Result<Vec<Value>, String> {
        let mut out = Vec::new();
        let mut next = Some(first);
        while let Some(url) = next.take() {
            let (v, resp) = self
                .client
                .get_json(provider, &url)
                .map_err(|e: IngestError| e.to_string())?;
            match v {
                Value::Array(items) => out.extend(items),
                _ => return Err(format!("{url}: expected a JSON array")),
            }
            next = resp.header("link").and_then(next_link);
        }
        Ok(out)
    }

    pub fn enrich_gra_timestamp(&self, mut record: AdvisoryRecord) -> (AdvisoryRecord, StepOutcome) {
        if !record.has_gra() || record.gra_published_at.is_some() {
            return (record, StepOutcome::Skipped);
        }
        let raw = record.repository_advisory_url.clone().unwrap_or_default();
        let Some((owner, repo, id)) = gra_api_parts(&raw) else {
            return (
                record,
                StepOutcome::Failed(format!("unresolvable repository advisory URL `{raw}`")),
            );
        };
        let url = self.client.config().repository_advisory_url(&owner, &repo, &id);
        match self
            .json(Provider::Gra, &url)
            .and_then(|v| json_time(&v, "/published_at"))
        {
            Ok(t) => {
                record.gra_published_at = Some(t);
                (record, StepOutcome::Filled)
            }
            Err(e) => (record, StepOutcome::Failed(e)),
        }
    }

    pub fn enrich_nvd_timestamp(&self, mut record: AdvisoryRecord) -> (AdvisoryRecord, StepOutcome) {
        let Some(cve) = record.cve_id.clone().filter(|_| record.nvd_published_at.is_none()) else {
            return (record, StepOutcome::Skipped);
        };
        let url = self.client.config().nvd_cve_url(&cve);
        let result = self.json(Provider::Nvd, &url).and_then(|v| {
            if v.get("totalResults").and_then(Value::as_u64) == Some(0) {
                return Err(format!("{cve} not found in NVD"));
            }
            json_time(&v, "/vulnerabilities/0/cve/published")
        });
        match result {
            Ok(t) => {
                record.nvd_published_at = Some(t);
                (record, StepOutcome::Filled)
            }
            Err(e) => (record, StepOutcome::Failed(e)),
        }
    }

    /// Earliest commit touching `path` in `repo`.
    fn first_commit(&self, r: &EcosystemRef) -> Result<Timestamp, String> {
        let url = self.client.config().commits_url(&r.repo, &r.path);
        let commits = self.all_pages(Provider::History, url)?;
        commits
            .iter()
            .map(|c| json_time(c, "/commit/committer/date").or_else(|_| json_time(c, "/commit/author/date")))
            .collect::<Result<Vec<_>, _>>()?
            .into_iter()
            .min()
            .ok_or_else(|| format!("no commits touch {}/{}", r.repo, r.path))
    }

    pub fn enrich_ecosystem_timestamps(&self, mut record: AdvisoryRecord) -> (AdvisoryRecord, EcosystemOutcome) {
        let mut by_db: BTreeMap<EcosystemDb, (BTreeSet<EcosystemRef>, Vec<String>)> = BTreeMap::new();
        for url in &record.references {
            match match_ecosystem_reference(url, &record) {
                Some(Ok(r)) => {
                    by_db.entry(r.db).or_default().0.insert(r);
                }
                Some(Err(e)) => {
                    let db = patterns()
                        .iter()
                        .find(|(_, re)| re.is_match(url.trim()))
                        .map(|(db, _)| *db);
                    if let Some(db) = db {
                        by_db.entry(db).or_default().1.push(e);
                    }
                }
                None => {}
            }
        }
        let mut outcome = EcosystemOutcome::default();
        for (db, (refs, unresolved)) in by_db {
            if record.ecosystem_published_at.contains_key(&db) {
                outcome.per_db.push((db, StepOutcome::Skipped));
                continue;
            }
            if refs.len() > 1 {
                outcome.multi.push(MultiMatch {
                    ghsa_id: record.ghsa_id.clone(),
                    db,
                    paths: refs.iter().map(|r| r.path.clone()).collect(),
                });
            }
            let mut errors = unresolved;
            let mut earliest: Option<Timestamp> = None;
            for r in &refs {
                match self.first_commit(r) {
                    Ok(t) => earliest = Some(earliest.map_or(t, |e| e.min(t))),
                    Err(e) => errors.push(e),
                }
            }
            match earliest {
                Some(t) => {
                    record.ecosystem_published_at.insert(db, t);
                    outcome.per_db.push((db, StepOutcome::Filled));
                }
                None => outcome.per_db.push((db, StepOutcome::Failed(errors.join("; ")))),
            }
        }
        (record, outcome)
    }

    /// Release time of the first listed package's first patched version.
    pub fn enrich_patched_at(&self, mut record: AdvisoryRecord) -> (AdvisoryRecord, StepOutcome) {
        let system = registry_system(record.ecosystem);
        let (Some(system), Some(pkg), None) = (system, record.vulnerabilities.first().cloned(), record.patched_at)
        else {
            return (record, StepOutcome::Skipped);
        };
        let Some(version) = pkg.first_patched_version else {
            return (
                record,
                StepOutcome::Failed(format!("{}: no patched version listed", pkg.package_name)),
            );
        };
        let url = self
            .client
            .config()
            .registry_version_url(system, &pkg.package_name, &version);
        match self
            .json(Provider::Registry, &url)
            .and_then(|v| json_time(&v, "/publishedAt"))
        {
            Ok(t) => {
                record.patched_at = Some(t);
                (record, StepOutcome::Filled)
            }
            Err(e) => (record, StepOutcome::Failed(e)),
        }
    }

    fn enrich_one(&self, record: &AdvisoryRecord) -> (AdvisoryRecord, EnrichmentReport) {
        let mut report = EnrichmentReport::default();
        let record = record.clone();
        if !record.reviewed {
            return (record, report);
        }
        let id = record.ghsa_id.clone();
        let (record, o) = self.enrich_gra_timestamp(record);
        report.record(Step::GraTimestamp, &id, o);
        let (record, o) = self.enrich_nvd_timestamp(record);
        report.record(Step::NvdTimestamp, &id, o);
        let (record, o) = self.enrich_ecosystem_timestamps(record);
        report.record_ecosystem(&id, o);
        let (record, o) = self.enrich_patched_at(record);
        report.record(Step::PatchedAt, &id, o);
        (record, report)
    }

    /// Applies every timestamp step to the reviewed records, in parallel up
    /// to the configured request limit. Output order equals input order;
    /// unreviewed records pass through untouched.
    pub fn enrich_records(&self, records: &[AdvisoryRecord]) -> (Vec<AdvisoryRecord>, EnrichmentReport) {
        let threads = self.client.config().max_parallel();
        let results = par::with_thread_limit(threads, || {
            par::map(Execution::default(), records, |r| self.enrich_one(r))
        });
        let mut report = EnrichmentReport::default();
        let mut out = Vec::with_capacity(results.len());
        for (r, rep) in results {
            out.push(r);
            report.merge(rep);
        }
        info!(
            "timestamp enrichment: {} gra, {} nvd, {} ecosystem, {} patched, {} failure(s)",
            report.gra_timestamps_added,
            report.nvd_timestamps_filled,
            report.ecosystem_timestamps_added.values().sum::<u64>(),
            report.patched_at_resolved,
            report.total_failures()
        );
        (out, report)
    }

    fn user_profile(&self, login: &str) -> Result<UserProfile, String> {
        let cfg = self.client.config();
        let user = self.json(Provider::Users, &cfg.user_url(login))?;
        let repos = self.all_pages(Provider::Users, cfg.user_repos_url(login))?;
        let total_stars = repos
            .iter()
            .map(|r| r.get("stargazers_count").and_then(Value::as_u64).unwrap_or(0))
            .sum();
        Ok(UserProfile {
            login: login.to_string(),
            account_created_at: json_time(&user, "/created_at")?,
            followers: json_u64(&user, "followers")?,
            public_repos: json_u64(&user, "public_repos")?,
            total_stars,
        })
    }

    fn repo_metadata(&self, slug: &str, gra_linked: bool) -> Result<RepoMetadata, String> {
        let v = self.json(Provider::Repos, &self.client.config().project_url(slug))?;
        let score = |name: &str| {
            v.pointer("/scorecard/checks")
                .and_then(Value::as_array)
                .and_then(|checks| {
                    checks
                        .iter()
                        .find(|c| c.get("name").and_then(Value::as_str) == Some(name))
                })
                .and_then(|c| c.get("score"))
                .and_then(Value::as_f64)
                .filter(|s| *s >= 0.0)
        };
        let meta = RepoMetadata {
            slug: slug.to_string(),
            stars: json_u64(&v, "starsCount")?,
            open_issues: json_u64(&v, "openIssuesCount")?,
            security_policy_score: score("Security-Policy"),
            maintained_score: score("Maintained"),
            gra_linked,
        };
        meta.validate()?;
        Ok(meta)
    }

    /// Profiles for every credited login and metadata for every repository
    /// of the reviewed records, sorted by key. Failures are counted, never
    /// fatal.
    pub fn enrich_social(&self, records: &[AdvisoryRecord]) -> (Vec<UserProfile>, Vec<RepoMetadata>, EnrichmentReport) {
        let reviewed: Vec<&AdvisoryRecord> = records.iter().filter(|r| r.reviewed).collect();
        let logins: Vec<String> = reviewed
            .iter()
            .flat_map(|r| r.credits.iter().map(|c| c.user_login.clone()))
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut repos: BTreeMap<String, bool> = BTreeMap::new();
        for r in &reviewed {
            if let Some(slug) = &r.source_code_location {
                *repos.entry(slug.clone()).or_default() |= r.has_gra();
            }
        }
        let repos: Vec<(String, bool)> = repos.into_iter().collect();

        let threads = self.client.config().max_parallel();
        let (users, metas) = par::with_thread_limit(threads, || {
            let exec = Execution::default();
            (
                par::map(exec, &logins, |l| self.user_profile(l)),
                par::map(exec, &repos, |(slug, linked)| self.repo_metadata(slug, *linked)),
            )
        });
        let mut report = EnrichmentReport::default();
        let mut profiles = Vec::new();
        for (login, res) in logins.iter().zip(users) {
            match res {
                Ok(p) => {
                    profiles.push(p);
                    report.record(Step::UserProfile, login, StepOutcome::Filled);
                }
                Err(e) => {
                    warn!("profile {login}: {e}");
                    report.record(Step::UserProfile, login, StepOutcome::Failed(e));
                }
            }
        }
        let mut metadata = Vec::new();
        for ((slug, _), res) in repos.iter().zip(metas) {
            match res {
                Ok(m) => {
                    metadata.push(m);
                    report.record(Step::RepoMetadata, slug, StepOutcome::Filled);
                }
                Err(e) => {
                    warn!("repository {slug}: {e}");
                    report.record(Step::RepoMetadata, slug, StepOutcome::Failed(e));
                }
            }
        }
        (profiles, metadata, report)
    }
}
