//! Advisory collection and enrichment against GitHub, NVD, deps.dev and the
//! community advisory databases, live or replayed from recorded fixtures.

mod enrich;
mod github;
mod transport;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

pub use enrich::{
    match_ecosystem_reference, EcosystemRef, Enricher, EnrichmentReport, FailureDetail, MultiMatch, Step, StepOutcome,
};
pub use github::{fetch_global_advisories, next_link, parse_advisory};
#[cfg(feature = "live")]
pub use transport::HttpTransport;
pub use transport::{
    fixture_path, request_digest, write_fixture, FixtureTransport, HttpResponse, Provider, RecordingTransport,
    Transport, TransportError,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("environment variable {0} is not set; live requests need an API token in it")]
    MissingToken(String),
    #[error("GET {url} still failing after {attempts} attempt(s): {reason}")]
    Exhausted { url: String, attempts: u32, reason: String },
    #[error("GET {url} returned HTTP {status}")]
    Status { url: String, status: u16 },
    #[error("GET {url}: malformed response: {reason}")]
    Malformed { url: String, reason: String },
    #[error("advisory page {page}: {source}")]
    Page {
        page: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("live HTTP support is not compiled in (enable the `live` feature)")]
    LiveDisabled,
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceClientConfig {
    pub base_url: String,
    /// Environment variable holding the API token, if the service takes one.
    #[serde(default)]
    pub auth_token_env_var: Option<String>,
    #[serde(default = "one")]
    pub max_parallel_requests: usize,
    #[serde(default)]
    pub min_request_interval_ms: u64,
}

fn one() -> usize {
    1
}

impl SourceClientConfig {
    fn new(base_url: &str, token: Option<&str>, parallel: usize, interval_ms: u64) -> Self {
        SourceClientConfig {
            base_url: base_url.to_string(),
            auth_token_env_var: token.map(str::to_string),
            max_parallel_requests: parallel,
            min_request_interval_ms: interval_ms,
        }
    }

    pub fn min_request_interval(&self) -> Duration {
        Duration::from_millis(self.min_request_interval_ms)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay_ms: u64,
    /// Upper bound on any single wait, including server-requested ones.
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            base_delay_ms: 1000,
            max_delay_ms: 15 * 60 * 1000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.base_delay_ms.saturating_mul(1 << (attempt - 1).min(20));
        Duration::from_millis(ms.min(self.max_delay_ms))
    }
}

/// Endpoints and client settings for every provider. Omitted sections keep
/// their defaults.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    pub github: SourceClientConfig,
    pub nvd: SourceClientConfig,
    pub deps_dev: SourceClientConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
    pub page_size: usize,
}

fn default_page_size() -> usize {
    100
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            github: SourceClientConfig::new("https://api.github.com", Some("GITHUB_TOKEN"), 4, 100),
            nvd: SourceClientConfig::new("https://services.nvd.nist.gov", Some("NVD_API_KEY"), 1, 700),
            deps_dev: SourceClientConfig::new("https://api.deps.dev", None, 8, 0),
            retry: RetryPolicy::default(),
            page_size: default_page_size(),
        }
    }
}

impl IngestConfig {
    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let err = |reason: String| IngestError::Config {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let cfg: IngestConfig = toml::from_str(&text).map_err(|e| err(e.to_string()))?;
        cfg.validate().map_err(err)?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, c) in [
            ("github", &self.github),
            ("nvd", &self.nvd),
            ("deps_dev", &self.deps_dev),
        ] {
            if c.max_parallel_requests == 0 {
                return Err(format!("{name}.max_parallel_requests must be at least 1"));
            }
            Url::parse(&c.base_url).map_err(|e| format!("{name}.base_url: {e}"))?;
        }
        if self.retry.attempts == 0 {
            return Err("retry.attempts must be at least 1".into());
        }
        if self.page_size == 0 {
            return Err("page_size must be at least 1".into());
        }
        Ok(())
    }

    pub fn source(&self, provider: Provider) -> &SourceClientConfig {
        match provider {
            Provider::Advisories | Provider::Gra | Provider::History | Provider::Users => &self.github,
            Provider::Nvd => &self.nvd,
            Provider::Registry | Provider::Repos => &self.deps_dev,
        }
    }

    /// Worker count for per-record enrichment: the smallest provider limit.
    pub fn max_parallel(&self) -> usize {
        [&self.github, &self.nvd, &self.deps_dev]
            .iter()
            .map(|c| c.max_parallel_requests)
            .min()
            .unwrap_or(1)
            .max(1)
    }

    fn join(base: &str, segments: &[&str]) -> Url {
        let mut url = Url::parse(base).expect("base url validated on load");
        url.path_segments_mut()
            .expect("http base url")
            .pop_if_empty()
            .extend(segments);
        url
    }

    pub fn advisories_url(&self) -> String {
        let mut url = Self::join(&self.github.base_url, &["advisories"]);
        url.query_pairs_mut()
            .append_pair("per_page", &self.page_size.to_string());
        url.to_string()
    }

    pub fn repository_advisory_url(&self, owner: &str, repo: &str, ghsa_id: &str) -> String {
        Self::join(
            &self.github.base_url,
            &["repos", owner, repo, "security-advisories", ghsa_id],
        )
        .to_string()
    }

    pub fn nvd_cve_url(&self, cve_id: &str) -> String {
        let mut url = Self::join(&self.nvd.base_url, &["rest", "json", "cves", "2.0"]);
        url.query_pairs_mut().append_pair("cveId", cve_id);
        url.to_string()
    }

    pub fn commits_url(&self, repo: &str, path: &str) -> String {
        let (owner, name) = repo.split_once('/').unwrap_or((repo, ""));
        let mut url = Self::join(&self.github.base_url, &["repos", owner, name, "commits"]);
        url.query_pairs_mut()
            .append_pair("path", path)
            .append_pair("per_page", &self.page_size.to_string());
        url.to_string()
    }

    pub fn registry_version_url(&self, system: &str, package: &str, version: &str) -> String {
        Self::join(
            &self.deps_dev.base_url,
            &["v3", "systems", system, "packages", package, "versions", version],
        )
        .to_string()
    }

    pub fn user_url(&self, login: &str) -> String {
        Self::join(&self.github.base_url, &["users", login]).to_string()
    }

    pub fn user_repos_url(&self, login: &str) -> String {
        let mut url = Self::join(&self.github.base_url, &["users", login, "repos"]);
        url.query_pairs_mut()
            .append_pair("per_page", &self.page_size.to_string());
        url.to_string()
    }

    /// deps.dev project key for a `owner/repo` slug.
    pub fn project_url(&self, slug: &str) -> String {
        Self::join(
            &self.deps_dev.base_url,
            &["v3", "projects", &format!("github.com/{slug}")],
        )
        .to_string()
    }

    /// Live transport with credentials from the environment. The GitHub
    /// token is mandatory; the NVD key only raises the rate limit.
    #[cfg(feature = "live")]
    pub fn live_transport(&self) -> Result<Box<dyn Transport>, IngestError> {
        let var = self
            .github
            .auth_token_env_var
            .clone()
            .unwrap_or_else(|| "GITHUB_TOKEN".into());
        let token = std::env::var(&var)
            .ok()
            .filter(|t| !t.is_empty())
            .ok_or(IngestError::MissingToken(var))?;
        let mut t = HttpTransport::new(Duration::from_secs(60));
        for p in [Provider::Advisories, Provider::Gra, Provider::History, Provider::Users] {
            t = t.with_auth(p, "Authorization", format!("Bearer {token}"));
        }
        if let Some(key) = self.nvd.auth_token_env_var.as_ref().and_then(|v| std::env::var(v).ok()) {
            t = t.with_auth(Provider::Nvd, "apiKey", key);
        }
        Ok(Box::new(t))
    }

    #[cfg(not(feature = "live"))]
    pub fn live_transport(&self) -> Result<Box<dyn Transport>, IngestError> {
        Err(IngestError::LiveDisabled)
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;
/// Current Unix time in seconds, for rate-limit reset headers.
pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

/// Transport plus retry, rate-limit waiting and per-host request spacing.
pub struct Client {
    transport: Box<dyn Transport>,
    config: IngestConfig,
    sleeper: Sleeper,
    clock: Clock,
    next_slot: Mutex<HashMap<String, Instant>>,
}

impl Client {
    pub fn new(transport: Box<dyn Transport>, config: IngestConfig) -> Self {
        Client {
            transport,
            config,
            sleeper: Arc::new(std::thread::sleep),
            clock: Arc::new(|| chrono::Utc::now().timestamp()),
            next_slot: Mutex::new(HashMap::new()),
        }
    }

    /// Replays `dir` with no request spacing.
    pub fn replay(dir: &Path, mut config: IngestConfig) -> Self {
        for c in [&mut config.github, &mut config.nvd, &mut config.deps_dev] {
            c.min_request_interval_ms = 0;
        }
        Client::new(Box::new(FixtureTransport::new(dir)), config)
    }

    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &IngestConfig {
        &self.config
    }

    fn wait_turn(&self, provider: Provider, url: &str) {
        let interval = self.config.source(provider).min_request_interval();
        if interval.is_zero() {
            return;
        }
        let host = Url::parse(url)
            .ok()
            .and_then(|u| u.host_str().map(str::to_string))
            .unwrap_or_default();
        let wait = {
            let mut slots = self.next_slot.lock().expect("rate gate poisoned");
            let now = Instant::now();
            let slot = slots.get(&host).copied().filter(|s| *s > now).unwrap_or(now);
            slots.insert(host, slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            (self.sleeper)(wait);
        }
    }

    fn rate_limit_wait(&self, resp: &HttpResponse) -> Option<Duration> {
        let limited = resp.status == 429
            || (resp.status == 403
                && (resp.header("x-ratelimit-remaining") == Some("0") || resp.header("retry-after").is_some()));
        if !limited {
            return None;
        }
        let secs = if let Some(s) = resp.header("retry-after").and_then(|v| v.trim().parse::<u64>().ok()) {
            s
        } else if let Some(reset) = resp
            .header("x-ratelimit-reset")
            .and_then(|v| v.trim().parse::<i64>().ok())
        {
            (reset - (self.clock)()).max(0) as u64 + 1
        } else {
            return Some(self.config.retry.backoff(1));
        };
        Some(Duration::from_secs(secs).min(Duration::from_millis(self.config.retry.max_delay_ms)))
    }

    /// GET with retries. Network errors, 5xx and rate-limit responses are
    /// retried; any other status is returned for the caller to judge.
    pub fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, IngestError> {
        let attempts = self.config.retry.attempts.max(1);
        for attempt in 1..=attempts {
            self.wait_turn(provider, url);
            let (wait, reason) = match self.transport.get(provider, url) {
                Ok(resp) => match self.rate_limit_wait(&resp) {
                    Some(wait) => (wait, format!("rate limited (HTTP {})", resp.status)),
                    None if resp.status >= 500 => (self.config.retry.backoff(attempt), format!("HTTP {}", resp.status)),
                    None => return Ok(resp),
                },
                Err(TransportError::Network { reason, .. }) => (self.config.retry.backoff(attempt), reason),
                Err(e) => return Err(e.into()),
            };
            if attempt == attempts {
                return Err(IngestError::Exhausted {
                    url: url.to_string(),
                    attempts,
                    reason,
                });
            }
            warn!("GET {url}: {reason}; retrying in {:.1}s", wait.as_secs_f64());
            (self.sleeper)(wait);
        }
        unreachable!("loop returns on the last attempt")
    }

    /// GET expecting a 2xx JSON body.
    pub fn get_json(&self, provider: Provider, url: &str) -> Result<(serde_json::Value, HttpResponse), IngestError> {
        let resp = self.get(provider, url)?;
        if !resp.is_success() {
            return Err(IngestError::Status {
                url: url.to_string(),
                status: resp.status,
            });
        }
        let value = serde_json::from_str(&resp.body).map_err(|e| IngestError::Malformed {
            url: url.to_string(),
            reason: e.to_string(),
        })?;
        Ok((value, resp))
    }
}

/// Per-URL scripted responses, consumed in order, for transport tests.
#[cfg(test)]
pub(crate) struct ScriptedTransport {
    pub script: Mutex<std::collections::BTreeMap<String, Vec<Result<HttpResponse, String>>>>,
    pub calls: Mutex<Vec<String>>,
}

#[cfg(test)]
impl ScriptedTransport {
    pub fn new(script: Vec<(&str, Vec<Result<HttpResponse, String>>)>) -> Self {
        ScriptedTransport {
            script: Mutex::new(script.into_iter().map(|(k, v)| (k.to_string(), v)).collect()),
            calls: Mutex::new(Vec::new()),
        }
    }
}

#[cfg(test)]
impl Transport for Arc<ScriptedTransport> {
    fn get(&self, _provider: Provider, url: &str) -> Result<HttpResponse, TransportError> {
        self.calls.lock().unwrap().push(url.to_string());
        let mut script = self.script.lock().unwrap();
        let queue = script.get_mut(url).filter(|q| !q.is_empty());
        match queue.map(|q| q.remove(0)) {
            Some(Ok(r)) => Ok(r),
            Some(Err(reason)) => Err(TransportError::Network {
                url: url.to_string(),
                reason,
            }),
            None => Ok(HttpResponse::json(404, &serde_json::json!({"message": "Not Found"}))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recorder() -> (Sleeper, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s = slept.clone();
        (Arc::new(move |d| s.lock().unwrap().push(d)), slept)
    }

    fn client(
        script: Vec<(&str, Vec<Result<HttpResponse, String>>)>,
    ) -> (Client, Arc<ScriptedTransport>, Arc<Mutex<Vec<Duration>>>) {
        let t = Arc::new(ScriptedTransport::new(script));
        let (sleeper, slept) = recorder();
        let mut cfg = IngestConfig::default();
        cfg.github.min_request_interval_ms = 0;
        let c = Client::new(Box::new(t.clone()), cfg)
            .with_sleeper(sleeper)
            .with_clock(Arc::new(|| 1_000));
        (c, t, slept)
    }

    fn ok() -> HttpResponse {
        HttpResponse::json(200, &serde_json::json!({}))
    }

    #[test]
    fn retries_with_exponential_backoff() {
        let (c, t, slept) = client(vec![(
            "u",
            vec![
                Err("reset".into()),
                Ok(HttpResponse::json(502, &serde_json::json!({}))),
                Ok(ok()),
            ],
        )]);
        assert_eq!(c.get(Provider::Users, "u").unwrap().status, 200);
        assert_eq!(t.calls.lock().unwrap().len(), 3);
        assert_eq!(
            *slept.lock().unwrap(),
            vec![Duration::from_secs(1), Duration::from_secs(2)]
        );
    }

    #[test]
    fn gives_up_after_three_attempts_naming_the_url() {
        let (c, _, _) = client(vec![(
            "u",
            vec![Err("a".into()), Err("b".into()), Err("c".into()), Ok(ok())],
        )]);
        let err = c.get(Provider::Users, "u").unwrap_err();
        assert!(matches!(&err, IngestError::Exhausted { attempts: 3, .. }));
        assert!(err.to_string().contains("GET u"));
    }

    #[test]
    fn honours_rate_limit_hints() {
        let limited = HttpResponse::json(403, &serde_json::json!({}))
            .with_header("x-ratelimit-remaining", "0")
            .with_header("x-ratelimit-reset", "1030");
        let retry_after = HttpResponse::json(429, &serde_json::json!({})).with_header("Retry-After", "7");
        let (c, _, slept) = client(vec![("u", vec![Ok(limited), Ok(retry_after), Ok(ok())])]);
        assert_eq!(c.get(Provider::Users, "u").unwrap().status, 200);
        assert_eq!(
            *slept.lock().unwrap(),
            vec![Duration::from_secs(31), Duration::from_secs(7)]
        );
    }

    #[test]
    fn client_errors_are_returned_not_retried() {
        let (c, t, _) = client(vec![]);
        assert_eq!(c.get(Provider::Users, "missing").unwrap().status, 404);
        assert_eq!(t.calls.lock().unwrap().len(), 1);
        assert!(matches!(
            c.get_json(Provider::Users, "missing"),
            Err(IngestError::Status { status: 404, .. })
        ));
    }

    #[test]
    fn spacing_between_requests_to_one_host() {
        let t = Arc::new(ScriptedTransport::new(vec![]));
        let (sleeper, slept) = recorder();
        let mut cfg = IngestConfig::default();
        cfg.github.min_request_interval_ms = 500;
        let c = Client::new(Box::new(t), cfg).with_sleeper(sleeper);
        for _ in 0..3 {
            c.get(Provider::Users, "https://api.github.com/users/x").unwrap();
        }
        let slept = slept.lock().unwrap();
        assert_eq!(slept.len(), 2);
        assert!(slept.iter().all(|d| *d > Duration::from_millis(400)));
    }

    #[test]
    fn endpoint_urls() {
        let cfg = IngestConfig::default();
        assert_eq!(cfg.advisories_url(), "https://api.github.com/advisories?per_page=100");
        assert_eq!(
            cfg.nvd_cve_url("CVE-2021-44228"),
            "https://services.nvd.nist.gov/rest/json/cves/2.0?cveId=CVE-2021-44228"
        );
        assert_eq!(
            cfg.registry_version_url("npm", "@scope/pkg", "1.0.0"),
            "https://api.deps.dev/v3/systems/npm/packages/@scope%2Fpkg/versions/1.0.0"
        );
        assert_eq!(
            cfg.project_url("o/r"),
            "https://api.deps.dev/v3/projects/github.com%2Fo%2Fr"
        );
        assert_eq!(
            cfg.commits_url("rustsec/advisory-db", "crates/x/RUSTSEC-2021-0001.md"),
            "https://api.github.com/repos/rustsec/advisory-db/commits?path=crates%2Fx%2FRUSTSEC-2021-0001.md&per_page=100"
        );
    }

    #[test]
    fn config_file_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ingest.toml");
        std::fs::write(&path, toml::to_string(&IngestConfig::default()).unwrap()).unwrap();
        assert_eq!(IngestConfig::load(&path).unwrap(), IngestConfig::default());
        let mut bad = IngestConfig::default();
        bad.nvd.max_parallel_requests = 0;
        std::fs::write(&path, toml::to_string(&bad).unwrap()).unwrap();
        assert!(IngestConfig::load(&path).is_err());
    }
}
