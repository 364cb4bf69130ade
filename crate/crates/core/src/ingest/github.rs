//! GitHub global advisories: page walking and record conversion.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use log::{info, warn};
use regex::Regex;
use serde::Deserialize;

use super::{Client, IngestError, Provider};
use crate::model::{normalize_repo_url, AdvisoryRecord, AffectedPackage, Credit, Ecosystem, Role, Severity, Timestamp};

#[derive(Deserialize)]
struct ApiPackage {
    #[serde(default)]
    ecosystem: Option<String>,
    #[serde(default)]
    name: Option<String>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PatchedVersion {
    Plain(String),
    Object { identifier: String },
}

#[derive(Deserialize)]
struct ApiVulnerability {
    #[serde(default)]
    package: Option<ApiPackage>,
    #[serde(default)]
    first_patched_version: Option<PatchedVersion>,
}

#[derive(Deserialize)]
struct ApiUser {
    login: String,
}

#[derive(Deserialize)]
struct ApiCredit {
    user: ApiUser,
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ApiReference {
    Plain(String),
    Object { url: String },
}

#[derive(Deserialize)]
struct ApiAdvisory {
    ghsa_id: String,
    #[serde(default)]
    cve_id: Option<String>,
    #[serde(default)]
    severity: Option<String>,
    #[serde(default)]
    source_code_location: Option<String>,
    #[serde(default)]
    repository_advisory_url: Option<String>,
    #[serde(default)]
    published_at: Option<String>,
    #[serde(default)]
    nvd_published_at: Option<String>,
    #[serde(default)]
    github_reviewed_at: Option<String>,
    #[serde(default)]
    references: Vec<ApiReference>,
    #[serde(default)]
    vulnerabilities: Vec<ApiVulnerability>,
    #[serde(default)]
    credits: Vec<ApiCredit>,
}

fn time(field: &str, id: &str, raw: Option<String>) -> Option<Timestamp> {
    let raw = raw.filter(|s| !s.trim().is_empty())?;
    match Timestamp::parse(&raw) {
        Ok(t) => Some(t),
        Err(e) => {
            warn!("{id}: unparseable {field} `{raw}`: {e}");
            None
        }
    }
}

fn ecosystem(raw: Option<&str>) -> Ecosystem {
    raw.and_then(|s| s.parse().ok()).unwrap_or(Ecosystem::Other)
}

/// Converts one advisory object from the global advisories API.
pub fn parse_advisory(value: &serde_json::Value) -> Result<AdvisoryRecord, String> {
    let api: ApiAdvisory = serde_json::from_value(value.clone()).map_err(|e| e.to_string())?;
    let id = api.ghsa_id.clone();
    let mut r = AdvisoryRecord::bare(api.ghsa_id);
    r.cve_id = api.cve_id.filter(|c| !c.is_empty());
    r.severity = match api.severity.as_deref() {
        Some("moderate") => Severity::Medium,
        Some(s) => s.parse().unwrap_or(Severity::Unknown),
        None => Severity::Unknown,
    };
    r.source_code_location = api.source_code_location.as_deref().and_then(normalize_repo_url);
    r.repository_advisory_url = api.repository_advisory_url.filter(|u| !u.trim().is_empty());
    r.published_at = time("published_at", &id, api.published_at);
    r.nvd_published_at = time("nvd_published_at", &id, api.nvd_published_at);
    r.github_reviewed_at = time("github_reviewed_at", &id, api.github_reviewed_at);
    r.reviewed = r.github_reviewed_at.is_some();
    r.references = api
        .references
        .into_iter()
        .map(|x| match x {
            ApiReference::Plain(u) | ApiReference::Object { url: u } => u,
        })
        .collect();
    for v in api.vulnerabilities {
        let Some(pkg) = v.package else { continue };
        let Some(name) = pkg.name.filter(|n| !n.is_empty()) else {
            continue;
        };
        r.vulnerabilities.push(AffectedPackage {
            package_name: name,
            ecosystem: ecosystem(pkg.ecosystem.as_deref()),
            first_patched_version: v.first_patched_version.map(|p| match p {
                PatchedVersion::Plain(s) | PatchedVersion::Object { identifier: s } => s,
            }),
        });
    }
    r.ecosystem = r
        .vulnerabilities
        .first()
        .map(|p| p.ecosystem)
        .unwrap_or(Ecosystem::Other);
    for c in api.credits {
        match c.kind.parse::<Role>() {
            Ok(role) if !c.user.login.is_empty() => r.credits.push(Credit {
                user_login: c.user.login,
                role,
            }),
            _ => warn!("{id}: skipping credit `{}` with role `{}`", c.user.login, c.kind),
        }
    }
    Ok(r)
}

/// Target of the `rel="next"` entry of a Link header.
pub fn next_link(header: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r#"<([^>]+)>\s*;\s*rel="?next"?"#).unwrap());
    re.captures(header).map(|c| c[1].to_string())
}

/// Walks every page of the global advisories listing. Records are keyed by
/// identifier (first occurrence wins) and, when `since` is given, limited to
/// those published at or after it. The filter is applied here rather than in
/// the query so a recorded listing serves every `since`.
pub fn fetch_global_advisories(client: &Client, since: Option<Timestamp>) -> Result<Vec<AdvisoryRecord>, IngestError> {
    let mut records: BTreeMap<String, AdvisoryRecord> = BTreeMap::new();
    let mut next = Some(client.config().advisories_url());
    let mut page = 0;
    let mut duplicates = 0;
    while let Some(url) = next.take() {
        page += 1;
        let wrap = |e: IngestError| IngestError::Page {
            page,
            source: Box::new(e),
        };
        let (body, resp) = client.get_json(Provider::Advisories, &url).map_err(wrap)?;
        let items = body.as_array().ok_or_else(|| {
            wrap(IngestError::Malformed {
                url: url.clone(),
                reason: "expected a JSON array of advisories".into(),
            })
        })?;
        for item in items {
            let rec = parse_advisory(item).map_err(|reason| {
                wrap(IngestError::Malformed {
                    url: url.clone(),
                    reason,
                })
            })?;
            if records.contains_key(&rec.ghsa_id) {
                duplicates += 1;
                continue;
            }
            records.insert(rec.ghsa_id.clone(), rec);
        }
        next = resp.header("link").and_then(next_link);
    }
    info!(
        "fetched {} advisories over {page} page(s), {duplicates} duplicate(s) collapsed",
        records.len()
    );
    Ok(records
        .into_values()
        .filter(|r| since.is_none_or(|s| r.published_at.is_some_and(|p| p >= s)))
        .collect())
}
