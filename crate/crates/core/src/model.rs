//! Advisory data model.
//!
//! Field names follow the advisory database's own attribute names
//! (`ghsa_id`, `published_at`, `github_reviewed_at`, ...) so that a dataset
//! line can be read next to the upstream API payload without a mapping table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{DateTime, Datelike, NaiveDate, SecondsFormat, TimeZone, Utc};
use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// A UTC instant truncated to whole seconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Timestamp(DateTime<Utc>);

impl Timestamp {
    pub fn from_unix(secs: i64) -> Option<Self> {
        Utc.timestamp_opt(secs, 0).single().map(Timestamp)
    }

    pub fn from_datetime(dt: DateTime<Utc>) -> Self {
        Timestamp::from_unix(dt.timestamp()).expect("in-range timestamp")
    }

    /// Parses RFC 3339. Offsets are converted to UTC; a missing offset
    /// (as NVD emits) is read as UTC. Sub-second digits are dropped.
    pub fn parse(s: &str) -> Result<Self, chrono::ParseError> {
        let s = s.trim();
        match DateTime::parse_from_rfc3339(s) {
            Ok(dt) => Ok(Timestamp::from_datetime(dt.with_timezone(&Utc))),
            Err(e) => {
                let naive = chrono::NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f").map_err(|_| e)?;
                Ok(Timestamp::from_datetime(naive.and_utc()))
            }
        }
    }

    pub fn unix(&self) -> i64 {
        self.0.timestamp()
    }

    pub fn datetime(&self) -> DateTime<Utc> {
        self.0
    }

    pub fn date(&self) -> NaiveDate {
        self.0.date_naive()
    }

    pub fn month(&self) -> YearMonth {
        YearMonth {
            year: self.0.year(),
            month: self.0.month(),
        }
    }

    /// Signed difference `self - earlier` in fractional days.
    pub fn days_since(&self, earlier: Timestamp) -> f64 {
        (self.unix() - earlier.unix()) as f64 / 86_400.0
    }

    pub fn plus_seconds(&self, secs: i64) -> Timestamp {
        Timestamp::from_unix(self.unix() + secs).expect("in-range timestamp")
    }

    pub fn midnight(date: NaiveDate) -> Timestamp {
        Timestamp::from_datetime(date.and_hms_opt(0, 0, 0).unwrap().and_utc())
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.to_rfc3339_opts(SecondsFormat::Secs, true))
    }
}

impl Serialize for Timestamp {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Timestamp {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Timestamp::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Calendar month, ordered chronologically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct YearMonth {
    pub year: i32,
    pub month: u32,
}

impl fmt::Display for YearMonth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

/// Earliest admissible timestamp in a dataset.
pub fn epoch_floor() -> Timestamp {
    Timestamp::midnight(NaiveDate::from_ymd_opt(2000, 1, 1).unwrap())
}

/// Start of the post-automation era used by every windowed analysis.
pub fn default_cutoff() -> Timestamp {
    Timestamp::midnight(NaiveDate::from_ymd_opt(2022, 6, 1).unwrap())
}

macro_rules! string_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(&self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s.to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!("unknown {} `{}`", stringify!($name), other)),
                }
            }
        }
    };
}

string_enum!(
    Severity {
        Critical => "critical",
        High => "high",
        Medium => "medium",
        Low => "low",
        Unknown => "unknown",
    }
);

string_enum!(
    /// Package ecosystem as reported by the advisory database.
    Ecosystem {
        Maven => "maven",
        Composer => "composer",
        Npm => "npm",
        Pip => "pip",
        Go => "go",
        Rust => "rust",
        Rubygems => "rubygems",
        Nuget => "nuget",
        Swift => "swift",
        Erlang => "erlang",
        Actions => "actions",
        Pub => "pub",
        Other => "other",
    }
);

impl Ecosystem {
    /// Ecosystems whose package registries expose release timestamps.
    pub fn has_registry_times(&self) -> bool {
        matches!(
            self,
            Ecosystem::Pip | Ecosystem::Go | Ecosystem::Rubygems | Ecosystem::Npm | Ecosystem::Maven | Ecosystem::Nuget
        )
    }
}

string_enum!(
    /// Community vulnerability databases that feed the advisory database.
    EcosystemDb {
        Rustsec => "rustsec",
        Friendsofphp => "friendsofphp",
        Pypa => "pypa",
        Rubysec => "rubysec",
        Govulndb => "govulndb",
    }
);

string_enum!(
    /// Credit roles; exactly the ten values the advisory schema allows.
    Role {
        Analyst => "analyst",
        Reporter => "reporter",
        Finder => "finder",
        RemediationDeveloper => "remediation_developer",
        RemediationReviewer => "remediation_reviewer",
        Coordinator => "coordinator",
        RemediationVerifier => "remediation_verifier",
        Other => "other",
        Sponsor => "sponsor",
        Tool => "tool",
    }
);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AffectedPackage {
    pub package_name: String,
    pub ecosystem: Ecosystem,
    pub first_patched_version: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Credit {
    pub user_login: String,
    pub role: Role,
}

/// One advisory with raw and enriched lifecycle timestamps.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdvisoryRecord {
    pub ghsa_id: String,
    pub cve_id: Option<String>,
    pub severity: Severity,
    pub ecosystem: Ecosystem,
    pub source_code_location: Option<String>,
    pub repository_advisory_url: Option<String>,
    pub published_at: Option<Timestamp>,
    pub nvd_published_at: Option<Timestamp>,
    pub github_reviewed_at: Option<Timestamp>,
    pub gra_published_at: Option<Timestamp>,
    #[serde(default)]
    pub ecosystem_published_at: BTreeMap<EcosystemDb, Timestamp>,
    pub patched_at: Option<Timestamp>,
    #[serde(default)]
    pub references: Vec<String>,
    #[serde(default)]
    pub vulnerabilities: Vec<AffectedPackage>,
    #[serde(default)]
    pub credits: Vec<Credit>,
    pub reviewed: bool,
}

impl AdvisoryRecord {
    /// A record with every optional field absent.
    pub fn bare(ghsa_id: impl Into<String>) -> Self {
        AdvisoryRecord {
            ghsa_id: ghsa_id.into(),
            cve_id: None,
            severity: Severity::Unknown,
            ecosystem: Ecosystem::Other,
            source_code_location: None,
            repository_advisory_url: None,
            published_at: None,
            nvd_published_at: None,
            github_reviewed_at: None,
            gra_published_at: None,
            ecosystem_published_at: BTreeMap::new(),
            patched_at: None,
            references: Vec::new(),
            vulnerabilities: Vec::new(),
            credits: Vec::new(),
            reviewed: false,
        }
    }

    pub fn has_gra(&self) -> bool {
        self.repository_advisory_url
            .as_deref()
            .is_some_and(|u| !u.trim().is_empty())
    }

    /// Origin classification shared by the monthly series and latency groups:
    /// GRA-linked first, then NVD-imported, then everything else.
    pub fn source(&self) -> Source {
        if self.has_gra() {
            Source::Gra
        } else if self.nvd_published_at.is_some() {
            Source::Nvd
        } else {
            Source::Other
        }
    }

    pub fn timestamps(&self) -> impl Iterator<Item = (&'static str, Timestamp)> + '_ {
        [
            ("published_at", self.published_at),
            ("nvd_published_at", self.nvd_published_at),
            ("github_reviewed_at", self.github_reviewed_at),
            ("gra_published_at", self.gra_published_at),
            ("patched_at", self.patched_at),
        ]
        .into_iter()
        .filter_map(|(name, t)| t.map(|t| (name, t)))
        .chain(
            self.ecosystem_published_at
                .values()
                .map(|t| ("ecosystem_published_at", *t)),
        )
    }

    /// Checks the per-record invariants. `now` bounds timestamps from above.
    pub fn validate(&self, now: Timestamp) -> Result<(), String> {
        if !ghsa_id_pattern().is_match(&self.ghsa_id) {
            return Err(format!("malformed ghsa_id `{}`", self.ghsa_id));
        }
        if self.reviewed != self.github_reviewed_at.is_some() {
            return Err(if self.reviewed {
                "reviewed=true but github_reviewed_at is absent".to_string()
            } else {
                "reviewed=false but github_reviewed_at is present".to_string()
            });
        }
        let floor = epoch_floor();
        for (name, t) in self.timestamps() {
            if t < floor {
                return Err(format!("{name} {t} precedes 2000-01-01"));
            }
            if t > now {
                return Err(format!("{name} {t} is in the future"));
            }
        }
        if let Some(slug) = &self.source_code_location {
            if normalize_repo_url(slug).as_deref() != Some(slug.as_str()) {
                return Err(format!("source_code_location `{slug}` is not a normalized slug"));
            }
        }
        if self.vulnerabilities.iter().any(|p| p.package_name.is_empty()) {
            return Err("affected package with empty package_name".to_string());
        }
        if self.credits.iter().any(|c| c.user_login.is_empty()) {
            return Err("credit with empty user_login".to_string());
        }
        Ok(())
    }
}

/// Where a reviewed advisory entered the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Gra,
    Nvd,
    Other,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Gra, Source::Nvd, Source::Other];

    pub fn as_str(&self) -> &'static str {
        match self {
            Source::Gra => "gra",
            Source::Nvd => "nvd",
            Source::Other => "other",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gra" => Ok(Source::Gra),
            "nvd" => Ok(Source::Nvd),
            "other" => Ok(Source::Other),
            other => Err(format!("unknown source `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub login: String,
    pub account_created_at: Timestamp,
    pub followers: u64,
    pub public_repos: u64,
    pub total_stars: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepoMetadata {
    pub slug: String,
    pub stars: u64,
    pub open_issues: u64,
    pub security_policy_score: Option<f64>,
    pub maintained_score: Option<f64>,
    pub gra_linked: bool,
}

impl RepoMetadata {
    pub fn validate(&self) -> Result<(), String> {
        for (name, score) in [
            ("security_policy_score", self.security_policy_score),
            ("maintained_score", self.maintained_score),
        ] {
            if let Some(s) = score {
                if !(0.0..=10.0).contains(&s) {
                    return Err(format!("{name} {s} outside [0, 10]"));
                }
            }
        }
        Ok(())
    }
}

fn ghsa_id_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^GHSA(-[23456789cfghjmpqrvwx]{4}){3}$").unwrap())
}

const GHSA_ALPHABET: &[u8; 20] = b"23456789cfghjmpqrvwx";

/// Deterministic advisory identifier for index `n`. Lexicographic order of the
/// identifiers equals numeric order of `n`.
pub fn synthetic_ghsa_id(mut n: u64) -> String {
    let mut digits = [b'2'; 12];
    for slot in digits.iter_mut().rev() {
        *slot = GHSA_ALPHABET[(n % 20) as usize];
        n /= 20;
    }
    let s = std::str::from_utf8(&digits).unwrap();
    format!("GHSA-{}-{}-{}", &s[0..4], &s[4..8], &s[8..12])
}

/// Normalizes a repository reference to a lowercase `owner/repo` slug.
///
/// Accepts URLs with or without a scheme, `www.` prefixes, trailing slashes,
/// `.git` suffixes and deeper paths (`/tree/main/...`). Anything that does not
/// point at a github.com repository yields `None`. A bare slug is returned
/// unchanged (modulo case), which makes the function idempotent.
pub fn normalize_repo_url(raw: &str) -> Option<String> {
    let mut s = raw.trim();
    if s.is_empty() {
        return None;
    }
    let lower = s.to_ascii_lowercase();
    let mut rest: &str = &lower;
    for scheme in ["git+https://", "git+ssh://", "https://", "http://", "ssh://", "git://"] {
        if let Some(r) = rest.strip_prefix(scheme) {
            rest = r;
            break;
        }
    }
    if let Some(r) = rest.strip_prefix("git@github.com:") {
        rest = r;
    } else {
        let host_end = rest.find('/').unwrap_or(rest.len());
        let host = &rest[..host_end];
        let host = host.rsplit('@').next().unwrap_or(host);
        let host = host.split(':').next().unwrap_or(host);
        let host = host.strip_prefix("www.").unwrap_or(host);
        if host == "github.com" {
            rest = &rest[host_end..];
        } else if host.contains('.') || host_end == rest.len() {
            // some other host, or a single path segment with no owner
            return None;
        }
    }
    s = rest.trim_start_matches('/');
    let s = s.split(['?', '#']).next().unwrap_or("");
    let mut parts = s.split('/').filter(|p| !p.is_empty());
    let owner = parts.next()?;
    let repo = parts.next()?;
    let repo = repo.strip_suffix(".git").unwrap_or(repo);
    let valid = |p: &str| {
        !p.is_empty()
            && p != "."
            && p != ".."
            && p.chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    };
    if !valid(owner) || !valid(repo) {
        return None;
    }
    Some(format!("{owner}/{repo}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalizes_github_urls() {
        assert_eq!(
            normalize_repo_url("https://github.com/Acme/lib/").as_deref(),
            Some("acme/lib")
        );
        assert_eq!(normalize_repo_url("github.com/acme/lib").as_deref(), Some("acme/lib"));
        assert_eq!(
            normalize_repo_url("https://github.com/acme/lib.git").as_deref(),
            Some("acme/lib")
        );
        assert_eq!(
            normalize_repo_url("https://www.GitHub.com/acme/lib/tree/main/sub").as_deref(),
            Some("acme/lib")
        );
        assert_eq!(
            normalize_repo_url("git@github.com:acme/lib.git").as_deref(),
            Some("acme/lib")
        );
        assert_eq!(normalize_repo_url("acme/lib").as_deref(), Some("acme/lib"));
    }

    #[test]
    fn rejects_non_github() {
        assert_eq!(normalize_repo_url("https://gitlab.com/a/b"), None);
        assert_eq!(normalize_repo_url("https://github.com/onlyowner"), None);
        assert_eq!(normalize_repo_url(""), None);
        assert_eq!(normalize_repo_url("https://bitbucket.org/a/b"), None);
    }

    #[test]
    fn synthetic_ids_are_valid_and_ordered() {
        let ids: Vec<_> = [0u64, 1, 19, 20, 399, 400, 123_456]
            .iter()
            .map(|&n| synthetic_ghsa_id(n))
            .collect();
        for id in &ids {
            assert!(ghsa_id_pattern().is_match(id), "{id}");
        }
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(sorted, ids);
    }

    #[test]
    fn timestamp_formats_and_parses() {
        let t = Timestamp::parse("2023-04-05T06:07:08.999Z").unwrap();
        assert_eq!(t.to_string(), "2023-04-05T06:07:08Z");
        let nvd = Timestamp::parse("2023-04-05T06:07:08.123").unwrap();
        assert_eq!(nvd, t);
        let offset = Timestamp::parse("2023-04-05T08:07:08+02:00").unwrap();
        assert_eq!(offset, t);
    }

    #[test]
    fn reviewed_flag_must_match_timestamp() {
        let now = Timestamp::parse("2025-08-21T00:00:00Z").unwrap();
        let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(1));
        r.reviewed = true;
        assert!(r.validate(now).is_err());
        r.github_reviewed_at = Some(Timestamp::parse("2024-01-01T00:00:00Z").unwrap());
        assert!(r.validate(now).is_ok());
        r.published_at = Some(Timestamp::parse("1999-12-31T23:59:59Z").unwrap());
        assert!(r.validate(now).is_err());
    }

    #[test]
    fn source_classification() {
        let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(2));
        assert_eq!(r.source(), Source::Other);
        r.nvd_published_at = Some(default_cutoff());
        assert_eq!(r.source(), Source::Nvd);
        r.repository_advisory_url = Some("  ".into());
        assert_eq!(r.source(), Source::Nvd);
        r.repository_advisory_url = Some("https://api.github.com/repos/a/b/security-advisories/x".into());
        assert_eq!(r.source(), Source::Gra);
    }

    proptest! {
        #[test]
        fn normalization_is_idempotent(
            owner in "[A-Za-z0-9][A-Za-z0-9-]{0,12}",
            repo in "[A-Za-z0-9_.-]{1,12}",
            scheme in prop::sample::select(vec!["", "https://", "http://www."]),
            tail in prop::sample::select(vec!["", "/", ".git", "/issues/3"]),
        ) {
            let raw = format!("{scheme}github.com/{owner}/{repo}{tail}");
            if let Some(slug) = normalize_repo_url(&raw) {
                prop_assert_eq!(normalize_repo_url(&slug), Some(slug.clone()));
            }
        }
    }
}
