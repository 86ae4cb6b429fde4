use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::identity::Identity;
use super::{Nanos, PipelineError};

/// What a single request produced.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ResponseKind {
    Ok(Vec<u8>),
    Redirect(String),
    /// The page does not exist or the host is gone.
    Dead,
    Timeout,
    RateLimited,
    /// The transport itself cannot operate (not a per-page failure).
    Unavailable(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Response {
    pub kind: ResponseKind,
    pub latency: Nanos,
}

pub trait Transport: Send + Sync {
    /// One request, without following redirects. `now` is the admission time
    /// and `attempt` counts fetch passes from 1.
    fn get(&self, url: &str, identity: &Identity, attempt: u32, now: Nanos) -> Response;
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum FixturePage {
    Ok { body: Vec<u8> },
    Redirect { location: String },
    Dead,
}

/// In-process stand-in for the web: fixed pages plus seeded transient
/// failures.
#[derive(Clone, Debug, PartialEq)]
pub struct FixtureServer {
    pub pages: BTreeMap<String, FixturePage>,
    /// Probability that a request fails transiently.
    pub failure_rate: f64,
    /// Attempts at or beyond this number never fail transiently.
    pub max_failures_per_url: u32,
    pub seed: u64,
    pub latency: Nanos,
    pub jitter: Nanos,
}

impl FixtureServer {
    pub fn new(pages: BTreeMap<String, FixturePage>) -> Self {
        FixtureServer { pages, failure_rate: 0.0, max_failures_per_url: 2, seed: 0, latency: 50_000_000, jitter: 0 }
    }

    pub fn with_failures(mut self, rate: f64, seed: u64) -> Self {
        self.failure_rate = rate;
        self.seed = seed;
        self
    }

    pub fn with_latency(mut self, latency: Nanos, jitter: Nanos) -> Self {
        self.latency = latency;
        self.jitter = jitter;
        self
    }

    fn draw(&self, url: &str, attempt: u32, salt: u8) -> u64 {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(attempt.to_le_bytes());
        h.update([salt]);
        h.update(url.as_bytes());
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
    }

    fn unit(&self, url: &str, attempt: u32, salt: u8) -> f64 {
        (self.draw(url, attempt, salt) >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Whether a request for `url` on `attempt` fails transiently.
    pub fn fails(&self, url: &str, attempt: u32) -> bool {
        attempt <= self.max_failures_per_url && self.unit(url, attempt, 0) < self.failure_rate
    }

    /// Writes `manifest.jsonl` plus one body file per Ok page.
    pub fn save(&self, dir: &Path) -> Result<(), PipelineError> {
        fs::create_dir_all(dir.join("pages"))?;
        let mut out = std::io::BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
        for (url, page) in &self.pages {
            let line = match page {
                FixturePage::Ok { body } => {
                    let file = format!("pages/{}.html", hex::encode(Sha256::digest(url.as_bytes())));
                    fs::write(dir.join(&file), body)?;
                    ManifestLine { url: url.clone(), status: "ok".into(), file: Some(file), location: None }
                }
                FixturePage::Redirect { location } => {
                    ManifestLine { url: url.clone(), status: "redirect".into(), file: None, location: Some(location.clone()) }
                }
                FixturePage::Dead => ManifestLine { url: url.clone(), status: "dead".into(), file: None, location: None },
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a directory written by [`FixtureServer::save`].
    pub fn load(dir: &Path) -> Result<Self, PipelineError> {
        let mut pages = BTreeMap::new();
        let file = fs::File::open(dir.join("manifest.jsonl"))?;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let m: ManifestLine = serde_json::from_str(&line)
                .map_err(|e| PipelineError::Fixture(format!("manifest line {}: {e}", i + 1)))?;
            let page = match (m.status.as_str(), m.file, m.location) {
                ("ok", Some(f), _) => FixturePage::Ok { body: fs::read(dir.join(f))? },
                ("redirect", _, Some(l)) => FixturePage::Redirect { location: l },
                ("dead", _, _) => FixturePage::Dead,
                (s, _, _) => return Err(PipelineError::Fixture(format!("manifest line {}: bad entry {s:?}", i + 1))),
            };
            pages.insert(m.url, page);
        }
        Ok(FixtureServer::new(pages))
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestLine {
    url: String,
    status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    location: Option<String>,
}

impl Transport for FixtureServer {
    fn get(&self, url: &str, _identity: &Identity, attempt: u32, _now: Nanos) -> Response {
        let jitter = if self.jitter == 0 { 0 } else { self.draw(url, attempt, 2) % (self.jitter + 1) };
        let latency = self.latency + jitter;
        if self.fails(url, attempt) {
            let kind = if self.unit(url, attempt, 1) < 0.5 { ResponseKind::Timeout } else { ResponseKind::RateLimited };
            return Response { kind, latency };
        }
        let kind = match self.pages.get(url) {
            Some(FixturePage::Ok { body }) => ResponseKind::Ok(body.clone()),
            Some(FixturePage::Redirect { location }) => ResponseKind::Redirect(location.clone()),
            Some(FixturePage::Dead) | None => ResponseKind::Dead,
        };
        Response { kind, latency }
    }
}

#[cfg(feature = "http")]
pub use http::HttpTransport;

#[cfg(feature = "http")]
mod http {
    use std::collections::HashMap;
    use std::time::{Duration, Instant};

    use super::{Identity, Nanos, PipelineError, Response, ResponseKind, Transport};

    /// Live HTTP(S) transport; identities with an endpoint go through that
    /// proxy (`socks5://`, `http://`).
    pub struct HttpTransport {
        agents: HashMap<usize, ureq::Agent>,
        direct: ureq::Agent,
        max_body: u64,
    }

    fn agent(proxy: Option<ureq::Proxy>, timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .proxy(proxy)
            .timeout_global(Some(timeout))
            .max_redirects(0)
            .http_status_as_error(false)
            .user_agent("atlas-crawler/0.1")
            .build()
            .into()
    }

    impl HttpTransport {
        pub fn new(identities: &[Identity], timeout: Duration) -> Result<Self, PipelineError> {
            let mut agents = HashMap::new();
            for id in identities {
                if let Some(ep) = &id.endpoint {
                    let proxy = ureq::Proxy::new(ep).map_err(|e| PipelineError::InvalidConfig(format!("proxy {ep}: {e}")))?;
                    agents.insert(id.id, agent(Some(proxy), timeout));
                }
            }
            Ok(HttpTransport { agents, direct: agent(None, timeout), max_body: 16 * 1024 * 1024 })
        }
    }

    impl Transport for HttpTransport {
        fn get(&self, url: &str, identity: &Identity, _attempt: u32, _now: Nanos) -> Response {
            let start = Instant::now();
            let agent = self.agents.get(&identity.id).unwrap_or(&self.direct);
            let kind = match agent.get(url).call() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    let location = resp.headers().get("location").and_then(|v| v.to_str().ok()).map(str::to_string);
                    match status {
                        200..=299 => match resp.body_mut().with_config().limit(self.max_body).read_to_vec() {
                            Ok(body) => ResponseKind::Ok(body),
                            Err(_) => ResponseKind::Timeout,
                        },
                        300..=399 => match location {
                            Some(l) => ResponseKind::Redirect(resolve(url, &l)),
                            None => ResponseKind::Dead,
                        },
                        429 | 503 => ResponseKind::RateLimited,
                        408 | 504 => ResponseKind::Timeout,
                        _ => ResponseKind::Dead,
                    }
                }
                Err(ureq::Error::Timeout(_)) => ResponseKind::Timeout,
                Err(ureq::Error::Io(e)) if e.kind() == std::io::ErrorKind::TimedOut => ResponseKind::Timeout,
                Err(ureq::Error::ConnectProxyFailed(_)) => ResponseKind::Timeout,
                Err(ureq::Error::InvalidProxyUrl) => ResponseKind::Unavailable("invalid proxy url".into()),
                Err(_) => ResponseKind::Dead,
            };
            Response { kind, latency: start.elapsed().as_nanos() as Nanos }
        }
    }

    /// Resolves a redirect target against the URL that produced it.
    pub(super) fn resolve(base: &str, location: &str) -> String {
        if location.contains("://") {
            return location.to_string();
        }
        let scheme_end = base.find("://").map_or(0, |i| i + 3);
        let host_end = base[scheme_end..].find('/').map_or(base.len(), |i| scheme_end + i);
        if let Some(rest) = location.strip_prefix("//") {
            return format!("{}{}", &base[..scheme_end], rest);
        }
        if location.starts_with('/') {
            return format!("{}{}", &base[..host_end], location);
        }
        let path = &base[host_end..];
        let dir = match path.rfind('/') {
            Some(i) => base[..host_end + i + 1].to_string(),
            None => format!("{}/", &base[..host_end]),
        };
        format!("{dir}{location}")
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failure_injection_is_seeded_and_capped() {
        let mut pages = BTreeMap::new();
        for i in 0..1000 {
            pages.insert(format!("http://f.test/{i}"), FixturePage::Ok { body: b"x".to_vec() });
        }
        let s = FixtureServer::new(pages).with_failures(0.1, 7);
        let first = s.pages.keys().filter(|u| s.fails(u, 1)).count();
        assert!((60..140).contains(&first), "{first}");
        assert!(s.pages.keys().all(|u| !s.fails(u, 3)));
        let again = s.pages.keys().filter(|u| s.fails(u, 1)).count();
        assert_eq!(first, again);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut pages = BTreeMap::new();
        pages.insert("http://a.test/p".to_string(), FixturePage::Ok { body: b"<p>hi</p>".to_vec() });
        pages.insert("http://a.test/r".to_string(), FixturePage::Redirect { location: "http://a.test/p".into() });
        pages.insert("http://a.test/d".to_string(), FixturePage::Dead);
        let s = FixtureServer::new(pages);
        s.save(dir.path()).unwrap();
        assert_eq!(FixtureServer::load(dir.path()).unwrap().pages, s.pages);
    }
}
