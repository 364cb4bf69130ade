//! A complete synthetic advisory world and the HTTP fixture tree that
//! serves it to the ingestion client.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::ingest::{match_ecosystem_reference, write_fixture, HttpResponse, IngestConfig, Provider};
use crate::model::{
    synthetic_ghsa_id, AdvisoryRecord, AffectedPackage, Credit, Ecosystem, EcosystemDb, RepoMetadata, Role, Severity,
    Timestamp, UserProfile,
};
use crate::queue::{simulate, QueueParams, Route};

#[derive(Clone, Debug)]
pub struct WorldOptions {
    pub reviewed: usize,
    pub unreviewed: usize,
    /// Drives patch release (arrival), NVD publication and review times.
    pub params: QueueParams,
    pub seed: u64,
    pub origin: Timestamp,
    pub users: usize,
    pub repos: usize,
}

impl Default for WorldOptions {
    fn default() -> Self {
        WorldOptions {
            reviewed: 2000,
            unreviewed: 200,
            params: QueueParams {
                lambda: 3.413,
                mu1: 4.0,
                mu2: 0.05,
                p: 0.474,
            },
            seed: 1,
            origin: Timestamp::parse("2021-09-01T00:00:00Z").unwrap(),
            users: 250,
            repos: 300,
        }
    }
}

/// Fully enriched records plus the user and repository metadata that the
/// enrichment steps should recover from the fixture tree.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub records: Vec<AdvisoryRecord>,
    pub profiles: Vec<UserProfile>,
    pub repos: Vec<RepoMetadata>,
    /// Records whose API listing carries the NVD timestamp directly.
    listed_nvd: Vec<bool>,
}

const ECOSYSTEMS: [Ecosystem; 10] = [
    Ecosystem::Npm,
    Ecosystem::Pip,
    Ecosystem::Maven,
    Ecosystem::Go,
    Ecosystem::Npm,
    Ecosystem::Rubygems,
    Ecosystem::Pip,
    Ecosystem::Nuget,
    Ecosystem::Rust,
    Ecosystem::Composer,
];

const ROLE_WEIGHTS: [(Role, u32); 10] = [
    (Role::Analyst, 560),
    (Role::Reporter, 210),
    (Role::Finder, 60),
    (Role::RemediationDeveloper, 60),
    (Role::RemediationReviewer, 35),
    (Role::Coordinator, 24),
    (Role::RemediationVerifier, 5),
    (Role::Other, 3),
    (Role::Sponsor, 1),
    (Role::Tool, 1),
];

fn weighted_role<R: Rng>(rng: &mut R) -> Role {
    let total: u32 = ROLE_WEIGHTS.iter().map(|w| w.1).sum();
    let mut x = rng.random_range(0..total);
    for (role, w) in ROLE_WEIGHTS {
        if x < w {
            return role;
        }
        x -= w;
    }
    unreachable!()
}

/// Skewed index in `0..n`: low indices are picked far more often.
fn skewed<R: Rng>(rng: &mut R, n: usize) -> usize {
    let u: f64 = rng.random();
    ((u * u * n as f64) as usize).min(n - 1)
}

fn at(origin: Timestamp, days: f64) -> Timestamp {
    origin.plus_seconds((days * 86_400.0).round() as i64)
}

fn package_name(eco: Ecosystem, i: usize) -> String {
    match eco {
        Ecosystem::Npm if i.is_multiple_of(17) => format!("@scope{}/pkg-{i}", i % 5),
        Ecosystem::Go => format!("github.com/gomod{}/pkg-{i}", i % 9),
        Ecosystem::Maven => format!("org.example{}:pkg-{i}", i % 7),
        Ecosystem::Composer => format!("vendor{}/pkg-{i}", i % 6),
        _ => format!("pkg-{i}"),
    }
}

fn ecosystem_reference(eco: Ecosystem, pkg: &str, id: &str, i: usize) -> Option<(EcosystemDb, String)> {
    Some(match eco {
        Ecosystem::Rust => (
            EcosystemDb::Rustsec,
            format!("https://rustsec.org/advisories/RUSTSEC-2022-{:04}.html", i % 10_000),
        ),
        Ecosystem::Composer => (
            EcosystemDb::Friendsofphp,
            format!("https://github.com/FriendsOfPHP/security-advisories/blob/master/{pkg}/{id}.yaml"),
        ),
        Ecosystem::Pip => (
            EcosystemDb::Pypa,
            format!("https://github.com/pypa/advisory-database/blob/main/vulns/{pkg}/PYSEC-2022-{i}.yaml"),
        ),
        Ecosystem::Rubygems => (
            EcosystemDb::Rubysec,
            format!("https://github.com/rubysec/ruby-advisory-db/blob/master/gems/{pkg}/{id}.yml"),
        ),
        Ecosystem::Go => (
            EcosystemDb::Govulndb,
            format!("https://pkg.go.dev/vuln/GO-2022-{:04}", i % 10_000),
        ),
        _ => return None,
    })
}

impl World {
    pub fn generate(opts: &WorldOptions) -> World {
        let traces = simulate(&opts.params, opts.reviewed, opts.seed);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed_cafe);
        let severities = [
            Severity::Critical,
            Severity::High,
            Severity::Medium,
            Severity::Medium,
            Severity::Low,
        ];
        let mut records = Vec::with_capacity(opts.reviewed + opts.unreviewed);
        let mut listed_nvd = Vec::with_capacity(records.capacity());
        let mut last_arrival = 0.0f64;

        for (i, t) in traces.iter().enumerate() {
            let id = synthetic_ghsa_id(i as u64);
            let eco = ECOSYSTEMS[rng.random_range(0..ECOSYSTEMS.len())];
            let pkg = package_name(eco, i);
            let slug = format!(
                "org{}/proj{}",
                skewed(&mut rng, opts.repos) % 40,
                skewed(&mut rng, opts.repos)
            );
            let mut r = AdvisoryRecord::bare(id.clone());
            r.reviewed = true;
            r.severity = severities[rng.random_range(0..severities.len())];
            r.ecosystem = eco;
            r.source_code_location = Some(slug.clone());
            r.vulnerabilities.push(AffectedPackage {
                package_name: pkg.clone(),
                ecosystem: eco,
                first_patched_version: Some(format!("{}.{}.{}", 1 + i % 4, i % 10, 1 + i % 3)),
            });
            let arrival = at(opts.origin, t.arrival_time);
            let review = at(opts.origin, t.review_end);
            last_arrival = last_arrival.max(t.arrival_time);
            r.github_reviewed_at = Some(review);
            if eco.has_registry_times() {
                r.patched_at = Some(arrival);
            }
            let join = t.join_time();
            let ghsa_lead = rng.random::<f64>() * 0.3;
            r.published_at = Some(at(opts.origin, (t.review_end - ghsa_lead).max(join)));
            let with_cve = match t.path {
                Route::NvdFirst => {
                    r.nvd_published_at = Some(at(opts.origin, join));
                    true
                }
                Route::Direct => {
                    r.repository_advisory_url = Some(format!("https://github.com/{slug}/security/advisories/{id}"));
                    r.gra_published_at = Some(arrival);
                    let cve = rng.random_bool(0.5);
                    if cve {
                        r.nvd_published_at = Some(at(opts.origin, t.review_end + 0.5 + rng.random::<f64>() * 5.0));
                    }
                    cve
                }
            };
            if with_cve {
                let cve = format!("CVE-{}-{}", arrival.date().format("%Y"), 20_000 + i);
                r.references.push(format!("https://nvd.nist.gov/vuln/detail/{cve}"));
                r.cve_id = Some(cve);
            }
            let eco_ref = match eco {
                Ecosystem::Rust | Ecosystem::Composer => true,
                _ => rng.random_bool(0.25),
            };
            if let Some((db, url)) = ecosystem_reference(eco, &pkg, &id, i).filter(|_| eco_ref) {
                r.references.push(url);
                r.ecosystem_published_at
                    .insert(db, at(opts.origin, t.arrival_time + rng.random_range(-1.0..1.0)));
            }
            let n_credits = 1 + usize::from(rng.random_bool(0.4)) + usize::from(rng.random_bool(0.1));
            for _ in 0..n_credits {
                let credit = Credit {
                    user_login: format!("dev{:04}", skewed(&mut rng, opts.users)),
                    role: weighted_role(&mut rng),
                };
                if !r.credits.iter().any(|c| c.user_login == credit.user_login) {
                    r.credits.push(credit);
                }
            }
            listed_nvd.push(rng.random_bool(0.5));
            records.push(r);
        }

        for j in 0..opts.unreviewed {
            let i = opts.reviewed + j;
            let mut r = AdvisoryRecord::bare(synthetic_ghsa_id(i as u64));
            let eco = ECOSYSTEMS[rng.random_range(0..ECOSYSTEMS.len())];
            r.ecosystem = eco;
            r.severity = Severity::Unknown;
            r.published_at = Some(at(opts.origin, rng.random::<f64>() * last_arrival));
            r.vulnerabilities.push(AffectedPackage {
                package_name: package_name(eco, i),
                ecosystem: eco,
                first_patched_version: None,
            });
            listed_nvd.push(false);
            records.push(r);
        }

        let mut profiles: BTreeMap<String, UserProfile> = BTreeMap::new();
        let mut repos: BTreeMap<String, RepoMetadata> = BTreeMap::new();
        let base = Timestamp::parse("2010-01-01T00:00:00Z").unwrap();
        for r in records.iter().filter(|r| r.reviewed) {
            for c in &r.credits {
                profiles.entry(c.user_login.clone()).or_insert_with(|| {
                    let followers = (rng.random::<f64>().powi(3) * 3000.0) as u64;
                    UserProfile {
                        login: c.user_login.clone(),
                        account_created_at: at(base, rng.random::<f64>() * 3650.0),
                        followers,
                        public_repos: rng.random_range(1..80),
                        total_stars: (rng.random::<f64>().powi(4) * 20_000.0) as u64,
                    }
                });
            }
            let slug = r.source_code_location.clone().unwrap();
            let linked = r.has_gra();
            repos
                .entry(slug.clone())
                .or_insert_with(|| RepoMetadata {
                    slug,
                    stars: (rng.random::<f64>().powi(3) * 50_000.0) as u64,
                    open_issues: rng.random_range(0..500),
                    security_policy_score: match rng.random_range(0..10) {
                        0 => None,
                        1..=5 => Some(0.0),
                        _ => Some(10.0),
                    },
                    maintained_score: (rng.random_range(0..10) > 0).then(|| rng.random_range(0..=10) as f64),
                    gra_linked: false,
                })
                .gra_linked |= linked;
        }

        World {
            records,
            profiles: profiles.into_values().collect(),
            repos: repos.into_values().collect(),
            listed_nvd,
        }
    }

    /// The record as the global advisories listing would return it, before
    /// enrichment.
    fn api_object(&self, i: usize) -> Value {
        let r = &self.records[i];
        let ts = |t: Option<Timestamp>| t.map(|t| t.to_string());
        json!({
            "ghsa_id": r.ghsa_id,
            "cve_id": r.cve_id,
            "type": if r.reviewed { "reviewed" } else { "unreviewed" },
            "severity": match r.severity {
                Severity::Medium => "moderate",
                s => s.as_str(),
            },
            "source_code_location": r.source_code_location.as_ref().map(|s| format!("https://github.com/{s}")),
            "repository_advisory_url": r.repository_advisory_url,
            "published_at": ts(r.published_at),
            "github_reviewed_at": ts(r.github_reviewed_at),
            "nvd_published_at": if self.listed_nvd[i] { ts(r.nvd_published_at) } else { None },
            "references": r.references,
            "vulnerabilities": r.vulnerabilities.iter().map(|p| json!({
                "package": {"ecosystem": p.ecosystem.as_str(), "name": p.package_name},
                "first_patched_version": p.first_patched_version.as_ref().map(|v| json!({"identifier": v})),
            })).collect::<Vec<_>>(),
            "credits": r.credits.iter().map(|c| json!({"user": {"login": c.user_login}, "type": c.role.as_str()})).collect::<Vec<_>>(),
        })
    }
}

fn registry_system(eco: Ecosystem) -> &'static str {
    match eco {
        Ecosystem::Pip => "pypi",
        Ecosystem::Rubygems => "rubygems",
        e => e.as_str(),
    }
}

/// Writes every response the ingestion and enrichment steps request for
/// `world` under `dir`. Returns the number of fixture files.
pub fn write_fixture_tree(dir: &Path, world: &World, cfg: &IngestConfig) -> io::Result<usize> {
    let mut files = 0;
    let mut put = |provider: Provider, url: &str, resp: HttpResponse| {
        files += 1;
        write_fixture(dir, provider, url, &resp)
    };

    let page_size = cfg.page_size.max(1);
    let pages: Vec<Vec<Value>> = (0..world.records.len())
        .map(|i| world.api_object(i))
        .collect::<Vec<_>>()
        .chunks(page_size)
        .map(<[Value]>::to_vec)
        .collect();
    let first = cfg.advisories_url();
    let mut url = first.clone();
    for (k, page) in pages.iter().enumerate() {
        let next = format!("{first}&page={}", k + 2);
        let mut resp = HttpResponse::json(200, &json!(page));
        if k + 1 < pages.len() {
            resp = resp.with_header("link", format!("<{next}>; rel=\"next\""));
        }
        put(Provider::Advisories, &url, resp)?;
        url = next;
    }
    if pages.is_empty() {
        put(Provider::Advisories, &url, HttpResponse::json(200, &json!([])))?;
    }

    for r in world.records.iter().filter(|r| r.reviewed) {
        if let (Some(gra), Some(slug)) = (r.gra_published_at, &r.source_code_location) {
            let (owner, repo) = slug.split_once('/').unwrap();
            let url = cfg.repository_advisory_url(owner, repo, &r.ghsa_id);
            put(
                Provider::Gra,
                &url,
                HttpResponse::json(200, &json!({"ghsa_id": r.ghsa_id, "published_at": gra.to_string()})),
            )?;
        }
        if let (Some(cve), Some(nvd)) = (&r.cve_id, r.nvd_published_at) {
            let published = nvd.datetime().format("%Y-%m-%dT%H:%M:%S%.3f").to_string();
            let body = json!({"totalResults": 1, "vulnerabilities": [{"cve": {"id": cve, "published": published}}]});
            put(Provider::Nvd, &cfg.nvd_cve_url(cve), HttpResponse::json(200, &body))?;
        }
        for url in &r.references {
            if let Some(Ok(eref)) = match_ecosystem_reference(url, r) {
                let first = r.ecosystem_published_at[&eref.db];
                let later = first.plus_seconds(3 * 86_400);
                let body = json!([
                    {"sha": "b", "commit": {"committer": {"date": later.to_string()}}},
                    {"sha": "a", "commit": {"committer": {"date": first.to_string()}}},
                ]);
                put(
                    Provider::History,
                    &cfg.commits_url(&eref.repo, &eref.path),
                    HttpResponse::json(200, &body),
                )?;
            }
        }
        if let (Some(patched), Some(pkg)) = (r.patched_at, r.vulnerabilities.first()) {
            let version = pkg.first_patched_version.as_deref().unwrap();
            let url = cfg.registry_version_url(registry_system(r.ecosystem), &pkg.package_name, version);
            put(
                Provider::Registry,
                &url,
                HttpResponse::json(200, &json!({"publishedAt": patched.to_string()})),
            )?;
        }
    }

    for p in &world.profiles {
        let body = json!({
            "login": p.login,
            "created_at": p.account_created_at.to_string(),
            "followers": p.followers,
            "public_repos": p.public_repos,
        });
        put(Provider::Users, &cfg.user_url(&p.login), HttpResponse::json(200, &body))?;
        let third = p.total_stars / 3;
        let repos = json!([{"stargazers_count": third}, {"stargazers_count": p.total_stars - third}]);
        put(
            Provider::Users,
            &cfg.user_repos_url(&p.login),
            HttpResponse::json(200, &repos),
        )?;
    }
    for m in &world.repos {
        let score = |s: Option<f64>| s.unwrap_or(-1.0);
        let body = json!({
            "projectKey": {"id": format!("github.com/{}", m.slug)},
            "starsCount": m.stars,
            "openIssuesCount": m.open_issues,
            "scorecard": {"checks": [
                {"name": "Security-Policy", "score": score(m.security_policy_score)},
                {"name": "Maintained", "score": score(m.maintained_score)},
            ]},
        });
        put(
            Provider::Repos,
            &cfg.project_url(&m.slug),
            HttpResponse::json(200, &body),
        )?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{fetch_global_advisories, Client, Enricher};
    use crate::model::default_cutoff;

    fn small() -> WorldOptions {
        WorldOptions {
            reviewed: 400,
            unreviewed: 40,
            origin: Timestamp::parse("2022-04-15T00:00:00Z").unwrap(),
            ..WorldOptions::default()
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let a = World::generate(&small());
        assert_eq!(a, World::generate(&small()));
        let now = Timestamp::parse("2026-01-01T00:00:00Z").unwrap();
        for r in &a.records {
            r.validate(now).unwrap();
        }
        assert!(a.records.iter().any(|r| r.published_at.unwrap() < default_cutoff()));
        assert!(a.records.iter().any(|r| r.published_at.unwrap() >= default_cutoff()));
        assert!(a.repos.iter().all(|m| m.validate().is_ok()));
    }

    #[test]
    fn fixture_tree_round_trips_through_ingestion() {
        let world = World::generate(&small());
        let dir = tempfile::tempdir().unwrap();
        let cfg = IngestConfig::default();
        let files = write_fixture_tree(dir.path(), &world, &cfg).unwrap();
        assert!(files > world.records.len());

        let client = Client::replay(dir.path(), cfg);
        let raw = fetch_global_advisories(&client, None).unwrap();
        assert_eq!(raw.len(), world.records.len());
        let enricher = Enricher::new(client);
        let (enriched, report) = enricher.enrich_records(&raw);
        assert_eq!(report.total_failures(), 0, "{:?}", report.failure_details.first());
        assert_eq!(enriched, world.records);
        let (profiles, repos, report) = enricher.enrich_social(&enriched);
        assert_eq!(report.total_failures(), 0);
        assert_eq!(profiles, world.profiles);
        assert_eq!(repos, world.repos);
    }
}
