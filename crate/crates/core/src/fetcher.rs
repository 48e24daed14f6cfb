//! Policy document collection: direct HTTP with an archive fallback, plus
//! ingestion of pre-fetched HTML files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use log::{debug, info, warn};
use reqwest::blocking::Client;
use reqwest::redirect::Policy;
use reqwest::{StatusCode, Url};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Company;

pub const DEFAULT_ARCHIVE_ENDPOINT: &str = "https://archive.org/wayback/available";
pub const MAX_REDIRECTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMethod {
    DirectHttp,
    ArchiveFallback,
    LocalFixture,
}

/// A collected policy page before segmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawPolicyDocument {
    pub company: Company,
    pub source_url: String,
    /// URL after redirects, when different from `source_url`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_url: Option<String>,
    pub retrieval_method: RetrievalMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub archive_snapshot_url: Option<String>,
    /// Seconds since the Unix epoch.
    pub retrieved_at: u64,
    #[serde(skip)]
    pub body: String,
}

#[derive(Debug, Error)]
pub enum FetchError {
    #[error("invalid url `{0}`")]
    InvalidUrl(String),
    #[error("{url}: expected HTML, got content type `{content_type}`")]
    ContentType { url: String, content_type: String },
    #[error("{url}: unreachable (direct: {direct}; archive: {archive})")]
    Unreachable {
        url: String,
        direct: String,
        archive: String,
    },
    #[error("http client: {0}")]
    Client(String),
    #[error("{path}: {reason}")]
    Fixture { path: PathBuf, reason: String },
}

#[derive(Debug, Clone)]
pub struct FetchConfig {
    pub timeout: Duration,
    /// Extra attempts after the first, per endpoint.
    pub retries: u32,
    pub user_agent: String,
    pub archive_endpoint: String,
    pub retry_backoff: Duration,
    /// Minimum spacing between requests to one host.
    pub politeness_delay: Duration,
}

impl Default for FetchConfig {
    fn default() -> Self {
        FetchConfig {
            timeout: Duration::from_secs(30),
            retries: 2,
            user_agent: format!(
                "siloscan/{} (privacy-policy structure audit)",
                env!("CARGO_PKG_VERSION")
            ),
            archive_endpoint: DEFAULT_ARCHIVE_ENDPOINT.to_string(),
            retry_backoff: Duration::from_millis(500),
            politeness_delay: Duration::from_secs(1),
        }
    }
}

fn now_secs() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn is_retryable(status: StatusCode) -> bool {
    status == StatusCode::FORBIDDEN || status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

enum Attempt {
    Page { body: String, final_url: String },
    NotHtml(String),
    Failed(String),
}

/// Per-host request spacing shared between worker threads.
#[derive(Debug, Default)]
pub struct HostLimiter {
    delay: Duration,
    last: Mutex<HashMap<String, Instant>>,
}

impl HostLimiter {
    pub fn new(delay: Duration) -> Self {
        HostLimiter {
            delay,
            last: Mutex::new(HashMap::new()),
        }
    }

    pub(crate) fn wait(&self, url: &Url) {
        if self.delay.is_zero() {
            return;
        }
        let host = url.host_str().unwrap_or_default().to_string();
        let sleep_for = {
            let mut last = self.last.lock().unwrap();
            let now = Instant::now();
            let next = last.get(&host).map(|t| *t + self.delay).unwrap_or(now).max(now);
            last.insert(host, next);
            next - now
        };
        if !sleep_for.is_zero() {
            thread::sleep(sleep_for);
        }
    }
}

/// HTTP fetcher holding a configured client.
pub struct Fetcher {
    client: Client,
    config: FetchConfig,
    limiter: HostLimiter,
}

impl Fetcher {
    pub fn new(config: FetchConfig) -> Result<Self, FetchError> {
        let client = Client::builder()
            .timeout(config.timeout)
            .user_agent(config.user_agent.clone())
            .redirect(Policy::limited(MAX_REDIRECTS))
            .build()
            .map_err(|e| FetchError::Client(e.to_string()))?;
        let limiter = HostLimiter::new(config.politeness_delay);
        Ok(Fetcher {
            client,
            config,
            limiter,
        })
    }

    pub fn config(&self) -> &FetchConfig {
        &self.config
    }

    fn get_once(&self, url: &Url) -> Result<Attempt, String> {
        self.limiter.wait(url);
        let resp = self.client.get(url.clone()).send().map_err(|e| e.to_string())?;
        let status = resp.status();
        if !status.is_success() {
            let reason = format!("HTTP {}", status.as_u16());
            return if is_retryable(status) {
                Err(reason)
            } else {
                Ok(Attempt::Failed(reason))
            };
        }
        let final_url = resp.url().to_string();
        let content_type = resp
            .headers()
            .get(reqwest::header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .unwrap_or("")
            .to_ascii_lowercase();
        if !content_type.is_empty() && !content_type.contains("html") {
            return Ok(Attempt::NotHtml(content_type));
        }
        let body = resp.text().map_err(|e| e.to_string())?;
        if body.trim().is_empty() {
            return Ok(Attempt::Failed("empty body".into()));
        }
        Ok(Attempt::Page { body, final_url })
    }

    /// GET with up to `retries` extra attempts on 403/429/5xx and transport
    /// errors.
    fn get_with_retries(&self, url: &Url) -> Attempt {
        let mut last = String::new();
        for attempt in 0..=self.config.retries {
            if attempt > 0 {
                thread::sleep(self.config.retry_backoff);
            }
            match self.get_once(url) {
                Ok(result) => return result,
                Err(reason) => {
                    debug!("{url}: attempt {} failed: {reason}", attempt + 1);
                    last = reason;
                }
            }
        }
        Attempt::Failed(format!("{last} after {} attempts", self.config.retries + 1))
    }

    fn archive_snapshot(&self, url: &str) -> Result<String, String> {
        let mut query = Url::parse(&self.config.archive_endpoint).map_err(|e| e.to_string())?;
        query.query_pairs_mut().append_pair("url", url);
        let resp = self
            .client
            .get(query)
            .send()
            .map_err(|e| format!("availability query: {e}"))?;
        if !resp.status().is_success() {
            return Err(format!("availability query: HTTP {}", resp.status().as_u16()));
        }
        let parsed: Availability = resp.json().map_err(|e| format!("availability response: {e}"))?;
        parsed
            .archived_snapshots
            .closest
            .filter(|s| s.available)
            .map(|s| s.url)
            .ok_or_else(|| "no snapshot available".to_string())
    }

    /// Retrieve one policy page, falling back to the most recent archive
    /// snapshot when the site refuses direct access.
    pub fn fetch_policy(&self, url: &str, company: &Company) -> Result<RawPolicyDocument, FetchError> {
        let parsed = Url::parse(url).map_err(|_| FetchError::InvalidUrl(url.to_string()))?;
        if !matches!(parsed.scheme(), "http" | "https") {
            return Err(FetchError::InvalidUrl(url.to_string()));
        }

        let direct = match self.get_with_retries(&parsed) {
            Attempt::Page { body, final_url } => {
                return Ok(RawPolicyDocument {
                    company: company.clone(),
                    source_url: url.to_string(),
                    final_url: (final_url != parsed.as_str()).then_some(final_url),
                    retrieval_method: RetrievalMethod::DirectHttp,
                    archive_snapshot_url: None,
                    retrieved_at: now_secs(),
                    body,
                })
            }
            Attempt::NotHtml(content_type) => {
                return Err(FetchError::ContentType {
                    url: url.to_string(),
                    content_type,
                })
            }
            Attempt::Failed(reason) => reason,
        };
        info!("{url}: direct retrieval failed ({direct}); trying archive");

        let archive = match self.archive_snapshot(url) {
            Ok(snapshot) => match Url::parse(&snapshot) {
                Ok(snapshot_url) => match self.get_with_retries(&snapshot_url) {
                    Attempt::Page { body, .. } => {
                        return Ok(RawPolicyDocument {
                            company: company.clone(),
                            source_url: url.to_string(),
                            final_url: None,
                            retrieval_method: RetrievalMethod::ArchiveFallback,
                            archive_snapshot_url: Some(snapshot),
                            retrieved_at: now_secs(),
                            body,
                        })
                    }
                    Attempt::NotHtml(ct) => format!("snapshot content type `{ct}`"),
                    Attempt::Failed(reason) => format!("snapshot: {reason}"),
                },
                Err(e) => format!("snapshot url: {e}"),
            },
            Err(reason) => reason,
        };
        Err(FetchError::Unreachable {
            url: url.to_string(),
            direct,
            archive,
        })
    }

    /// Fetch many policies with at most `parallel` requests in flight.
    /// Results come back in input order.
    pub fn fetch_batch(
        &self,
        jobs: &[(Company, String)],
        parallel: usize,
    ) -> Vec<Result<RawPolicyDocument, FetchError>> {
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Result<RawPolicyDocument, FetchError>>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        thread::scope(|scope| {
            for _ in 0..parallel.max(1).min(jobs.len().max(1)) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((company, url)) = jobs.get(i) else { break };
                    let result = self.fetch_policy(url, company);
                    if let Err(e) = &result {
                        warn!("{}: {e}", company.name);
                    }
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });
        slots
            .into_iter()
            .map(|s| s.into_inner().unwrap().expect("every job ran"))
            .collect()
    }
}

#[derive(Debug, Deserialize)]
struct Availability {
    #[serde(default)]
    archived_snapshots: Snapshots,
}

#[derive(Debug, Default, Deserialize)]
struct Snapshots {
    closest: Option<Snapshot>,
}

#[derive(Debug, Deserialize)]
struct Snapshot {
    #[serde(default)]
    available: bool,
    url: String,
}

/// Wrap a saved HTML file as a policy document.
pub fn ingest_fixture(path: impl AsRef<Path>, company: &Company) -> Result<RawPolicyDocument, FetchError> {
    let path = path.as_ref();
    let body = std::fs::read_to_string(path).map_err(|e| FetchError::Fixture {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    if body.trim().is_empty() {
        return Err(FetchError::Fixture {
            path: path.to_path_buf(),
            reason: "file is empty".into(),
        });
    }
    Ok(RawPolicyDocument {
        company: company.clone(),
        source_url: format!("file://{}", path.display()),
        final_url: None,
        retrieval_method: RetrievalMethod::LocalFixture,
        archive_snapshot_url: None,
        retrieved_at: now_secs(),
        body,
    })
}

/// HTML files in `dir`, sorted by file name.
pub fn fixture_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, FetchError> {
    let dir = dir.as_ref();
    let entries = std::fs::read_dir(dir).map_err(|e| FetchError::Fixture {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("html") || e.eq_ignore_ascii_case("htm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Ingest every HTML file in `dir` in file-name order. `company_for` maps a
/// file stem to its company.
pub fn ingest_dir(
    dir: impl AsRef<Path>,
    mut company_for: impl FnMut(&str) -> Company,
) -> Result<Vec<RawPolicyDocument>, FetchError> {
    fixture_files(dir)?
        .into_iter()
        .map(|path| {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            ingest_fixture(&path, &company_for(&stem))
        })
        .collect()
}

/// Parse `company<TAB>industry<TAB>url` lines; `#` starts a comment line.
pub fn parse_url_list(text: &str) -> Result<Vec<(Company, String)>, String> {
    let mut jobs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() || raw.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        let [name, industry, url] = fields[..] else {
            return Err(format!("line {}: expected company, industry and url separated by tabs", idx + 1));
        };
        if name.is_empty() || url.is_empty() {
            return Err(format!("line {}: empty company or url", idx + 1));
        }
        jobs.push((Company::new(name, industry), url.to_string()));
    }
    Ok(jobs)
}

/// Lower-case, hyphen-separated form of a company name for file names and ids.
pub fn slug(name: &str) -> String {
    let mut out = String::new();
    for ch in name.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{StubResponse, StubServer};

    const PAGE: &str = "<html><body><h1>Privacy</h1><p>We collect data.</p></body></html>";

    #[test]
    fn url_list() {
        let jobs = parse_url_list("# name\tindustry\turl\nAcme\tGaming\thttps://acme.example/privacy\n\n").unwrap();
        assert_eq!(jobs.len(), 1);
        assert_eq!(jobs[0].0.name, "Acme");
        assert_eq!(jobs[0].1, "https://acme.example/privacy");
        assert!(parse_url_list("Acme https://acme.example").is_err());
    }

    fn quick_config(archive: &str) -> FetchConfig {
        FetchConfig {
            timeout: Duration::from_secs(5),
            retries: 2,
            archive_endpoint: format!("{archive}/wayback/available"),
            retry_backoff: Duration::from_millis(5),
            politeness_delay: Duration::ZERO,
            ..FetchConfig::default()
        }
    }

    fn acme() -> Company {
        Company::new("Acme", "Big Tech")
    }

    #[test]
    fn direct_success() {
        let site = StubServer::start(|_, _| StubResponse::html(200, PAGE));
        let fetcher = Fetcher::new(quick_config("http://127.0.0.1:9")).unwrap();
        let doc = fetcher.fetch_policy(&format!("{}/privacy", site.base), &acme()).unwrap();
        assert_eq!(doc.retrieval_method, RetrievalMethod::DirectHttp);
        assert_eq!(doc.body, PAGE);
        assert!(doc.archive_snapshot_url.is_none());
    }

    #[test]
    fn blocked_site_falls_back_to_archive() {
        let site = StubServer::start(|_, _| StubResponse::html(403, "denied"));
        let snapshots = StubServer::start(|_, _| StubResponse::html(200, PAGE));
        let snapshot = format!("{}/web/2026/snapshot", snapshots.base);
        let availability = StubServer::start(move |req, _| {
            assert!(req.path.starts_with("/wayback/available?url="));
            StubResponse::json(
                200,
                &format!(r#"{{"archived_snapshots":{{"closest":{{"available":true,"url":"{snapshot}","timestamp":"20260110"}}}}}}"#),
            )
        });
        let fetcher = Fetcher::new(quick_config(&availability.base)).unwrap();
        let doc = fetcher.fetch_policy(&format!("{}/privacy", site.base), &acme()).unwrap();
        assert_eq!(doc.retrieval_method, RetrievalMethod::ArchiveFallback);
        assert!(doc.archive_snapshot_url.unwrap().ends_with("/web/2026/snapshot"));
        assert_eq!(doc.body, PAGE);
        // first attempt plus two retries
        assert_eq!(site.hits(), 3);
        assert_eq!(snapshots.hits(), 1);
    }

    #[test]
    fn both_paths_exhausted() {
        let site = StubServer::start(|_, _| StubResponse::html(403, "denied"));
        let archive = StubServer::start(|_, _| StubResponse::json(404, "{}"));
        let fetcher = Fetcher::new(quick_config(&archive.base)).unwrap();
        let err = fetcher.fetch_policy(&format!("{}/privacy", site.base), &acme()).unwrap_err();
        match err {
            FetchError::Unreachable { direct, archive, .. } => {
                assert!(direct.contains("403"), "{direct}");
                assert!(archive.contains("404"), "{archive}");
            }
            other => panic!("unexpected {other}"),
        }
        assert_eq!(site.hits(), 3);
    }

    #[test]
    fn non_html_is_a_content_type_error() {
        let site = StubServer::start(|_, _| StubResponse::json(200, "{}"));
        let fetcher = Fetcher::new(quick_config("http://127.0.0.1:9")).unwrap();
        let err = fetcher.fetch_policy(&format!("{}/privacy", site.base), &acme()).unwrap_err();
        assert!(matches!(err, FetchError::ContentType { .. }));
    }

    #[test]
    fn not_found_skips_retries() {
        let site = StubServer::start(|_, _| StubResponse::html(404, "gone"));
        let archive = StubServer::start(|_, _| StubResponse::json(200, r#"{"archived_snapshots":{}}"#));
        let fetcher = Fetcher::new(quick_config(&archive.base)).unwrap();
        let err = fetcher.fetch_policy(&format!("{}/privacy", site.base), &acme()).unwrap_err();
        assert!(err.to_string().contains("no snapshot"));
        assert_eq!(site.hits(), 1);
    }

    #[test]
    fn invalid_url_rejected() {
        let fetcher = Fetcher::new(FetchConfig::default()).unwrap();
        assert!(matches!(
            fetcher.fetch_policy("not a url", &acme()),
            Err(FetchError::InvalidUrl(_))
        ));
        assert!(matches!(
            fetcher.fetch_policy("ftp://example.com/x", &acme()),
            Err(FetchError::InvalidUrl(_))
        ));
    }

    #[test]
    fn batch_preserves_input_order() {
        let site = StubServer::start(|req, _| StubResponse::html(200, &format!("<p>{}</p>", req.path)));
        let fetcher = Fetcher::new(quick_config("http://127.0.0.1:9")).unwrap();
        let jobs: Vec<_> = (0..6)
            .map(|i| (Company::new(format!("C{i}"), "Big Tech"), format!("{}/p{i}", site.base)))
            .collect();
        let docs = fetcher.fetch_batch(&jobs, 3);
        for (i, doc) in docs.into_iter().enumerate() {
            let doc = doc.unwrap();
            assert_eq!(doc.company.name, format!("C{i}"));
            assert_eq!(doc.body, format!("<p>/p{i}</p>"));
        }
    }

    #[test]
    fn fixture_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("acme.html");
        std::fs::write(&path, PAGE).unwrap();
        let doc = ingest_fixture(&path, &acme()).unwrap();
        assert_eq!(doc.retrieval_method, RetrievalMethod::LocalFixture);

        let empty = dir.path().join("empty.html");
        std::fs::write(&empty, "  \n").unwrap();
        assert!(ingest_fixture(&empty, &acme()).is_err());
        assert!(ingest_fixture(dir.path().join("missing.html"), &acme()).is_err());
    }

    #[test]
    fn directory_ingestion_is_sorted_by_file_name() {
        let dir = tempfile::tempdir().unwrap();
        let names = ["j", "c", "a", "h", "b", "i", "e", "d", "g", "f"];
        for n in names {
            std::fs::write(dir.path().join(format!("{n}.html")), PAGE).unwrap();
        }
        std::fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let docs = ingest_dir(dir.path(), |stem| Company::new(stem, "Big Tech")).unwrap();
        let got: Vec<_> = docs.iter().map(|d| d.company.name.clone()).collect();
        let mut expected: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "html"))
            .map(|p| p.file_stem().unwrap().to_str().unwrap().to_string())
            .collect();
        expected.sort();
        assert_eq!(got.len(), 10);
        assert_eq!(got, expected);
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Clearview AI"), "clearview-ai");
        assert_eq!(slug("  L3Harris!! "), "l3harris");
        assert_eq!(slug("23andMe"), "23andme");
    }

    #[test]
    fn limiter_spaces_same_host_requests() {
        let limiter = HostLimiter::new(Duration::from_millis(40));
        let url = Url::parse("http://example.com/a").unwrap();
        let start = Instant::now();
        limiter.wait(&url);
        limiter.wait(&url);
        limiter.wait(&url);
        assert!(start.elapsed() >= Duration::from_millis(80));
    }
}
