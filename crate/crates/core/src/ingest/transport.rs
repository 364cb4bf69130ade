//! Raw GET transports: live HTTP and directory-backed fixture replay.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// External service family a request belongs to. Also the fixture
/// subdirectory name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    Advisories,
    Gra,
    Nvd,
    History,
    Registry,
    Users,
    Repos,
}

impl Provider {
    pub const ALL: [Provider; 7] = [
        Provider::Advisories,
        Provider::Gra,
        Provider::Nvd,
        Provider::History,
        Provider::Registry,
        Provider::Users,
        Provider::Repos,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Provider::Advisories => "advisories",
            Provider::Gra => "gra",
            Provider::Nvd => "nvd",
            Provider::History => "history",
            Provider::Registry => "registry",
            Provider::Users => "users",
            Provider::Repos => "repos",
        }
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A response as recorded: status, lowercase header names, body verbatim.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpResponse {
    pub status: u16,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

impl HttpResponse {
    pub fn json(status: u16, body: &serde_json::Value) -> Self {
        HttpResponse {
            status,
            headers: BTreeMap::new(),
            body: body.to_string(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(&name.to_ascii_lowercase()).map(String::as_str)
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }
}

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("GET {url} failed: {reason}")]
    Network { url: String, reason: String },
    #[error("no recorded {provider} response for GET {url} (expected {path})")]
    MissingFixture {
        provider: Provider,
        url: String,
        path: String,
    },
    #[error("unreadable fixture {path}: {reason}")]
    BadFixture { path: String, reason: String },
}

pub trait Transport: Send + Sync {
    fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, TransportError>;
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, TransportError> {
        (**self).get(provider, url)
    }
}

/// Hex SHA-256 of `GET <url>`.
pub fn request_digest(url: &str) -> String {
    hex::encode(Sha256::digest(format!("GET {url}").as_bytes()))
}

pub fn fixture_path(dir: &Path, provider: Provider, url: &str) -> PathBuf {
    dir.join(provider.as_str())
        .join(format!("{}.json", request_digest(url)))
}

/// Stored fixture: the URL is kept alongside the response for readability.
#[derive(Serialize, Deserialize)]
struct FixtureFile {
    url: String,
    #[serde(flatten)]
    response: HttpResponse,
}

pub fn write_fixture(dir: &Path, provider: Provider, url: &str, response: &HttpResponse) -> std::io::Result<()> {
    let path = fixture_path(dir, provider, url);
    std::fs::create_dir_all(path.parent().expect("fixture path has a parent"))?;
    let file = FixtureFile {
        url: url.to_string(),
        response: response.clone(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file).expect("plain data") + "\n")
}

/// Replays responses from `<dir>/<provider>/<digest>.json`.
#[derive(Clone, Debug)]
pub struct FixtureTransport {
    dir: PathBuf,
}

impl FixtureTransport {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FixtureTransport { dir: dir.into() }
    }
}

impl Transport for FixtureTransport {
    fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, TransportError> {
        let path = fixture_path(&self.dir, provider, url);
        let text = std::fs::read_to_string(&path).map_err(|_| TransportError::MissingFixture {
            provider,
            url: url.to_string(),
            path: path.display().to_string(),
        })?;
        let file: FixtureFile = serde_json::from_str(&text).map_err(|e| TransportError::BadFixture {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(file.response)
    }
}

/// Passes requests through and records every response as a fixture.
pub struct RecordingTransport<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: Transport> RecordingTransport<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        RecordingTransport { inner, dir: dir.into() }
    }
}

impl<T: Transport> Transport for RecordingTransport<T> {
    fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, TransportError> {
        let response = self.inner.get(provider, url)?;
        write_fixture(&self.dir, provider, url, &response).map_err(|e| TransportError::BadFixture {
            path: fixture_path(&self.dir, provider, url).display().to_string(),
            reason: e.to_string(),
        })?;
        Ok(response)
    }
}

#[cfg(feature = "live")]
pub use live::HttpTransport;

#[cfg(feature = "live")]
mod live {
    use std::collections::BTreeMap;
    use std::time::Duration;

    use super::{HttpResponse, Provider, Transport, TransportError};

    /// Blocking HTTPS client. Non-2xx statuses are returned, not raised.
    pub struct HttpTransport {
        agent: ureq::Agent,
        auth: BTreeMap<Provider, (String, String)>,
    }

    impl HttpTransport {
        pub fn new(timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .http_status_as_error(false)
                .timeout_global(Some(timeout))
                .user_agent("reviewq")
                .build()
                .into();
            HttpTransport {
                agent,
                auth: BTreeMap::new(),
            }
        }

        /// Sends `name: value` with every request to `provider`.
        pub fn with_auth(mut self, provider: Provider, name: &str, value: String) -> Self {
            self.auth.insert(provider, (name.to_string(), value));
            self
        }
    }

    impl Transport for HttpTransport {
        fn get(&self, provider: Provider, url: &str) -> Result<HttpResponse, TransportError> {
            let network = |reason: String| TransportError::Network {
                url: url.to_string(),
                reason,
            };
            let mut req = self.agent.get(url).header("Accept", "application/json");
            if let Some((name, value)) = self.auth.get(&provider) {
                req = req.header(name.as_str(), value.as_str());
            }
            let mut resp = req.call().map_err(|e| network(e.to_string()))?;
            let status = resp.status().as_u16();
            let headers = resp
                .headers()
                .iter()
                .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
                .collect();
            let body = resp.body_mut().read_to_string().map_err(|e| network(e.to_string()))?;
            Ok(HttpResponse { status, headers, body })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_stable() {
        assert_eq!(
            request_digest("https://api.github.com/advisories"),
            hex::encode(Sha256::digest(b"GET https://api.github.com/advisories"))
        );
        assert_eq!(request_digest("a").len(), 64);
    }

    #[test]
    fn fixtures_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let resp = HttpResponse::json(200, &serde_json::json!({"a": 1})).with_header("Link", "<x>; rel=\"next\"");
        write_fixture(dir.path(), Provider::Nvd, "https://nvd/x?cveId=1", &resp).unwrap();
        let t = FixtureTransport::new(dir.path());
        let back = t.get(Provider::Nvd, "https://nvd/x?cveId=1").unwrap();
        assert_eq!(back, resp);
        assert_eq!(back.header("LINK"), Some("<x>; rel=\"next\""));
        assert!(matches!(
            t.get(Provider::Gra, "https://nvd/x?cveId=1"),
            Err(TransportError::MissingFixture { .. })
        ));
    }

    #[test]
    fn recording_writes_what_it_returns() {
        let src = tempfile::tempdir().unwrap();
        let dst = tempfile::tempdir().unwrap();
        let resp = HttpResponse::json(404, &serde_json::json!({"message": "Not Found"}));
        write_fixture(src.path(), Provider::Users, "u", &resp).unwrap();
        let rec = RecordingTransport::new(FixtureTransport::new(src.path()), dst.path());
        assert_eq!(rec.get(Provider::Users, "u").unwrap(), resp);
        assert_eq!(
            FixtureTransport::new(dst.path()).get(Provider::Users, "u").unwrap(),
            resp
        );
    }
}
