//! HTTP client for model-backed annotators.
//!
//! The request is a JSON object carrying the rendered prompt plus the raw
//! segment fields. The response must be exactly
//! `{"primary": TOKEN, "secondary": [TOKEN, ...]}`; anything else counts as
//! unparseable and is retried.

use std::thread;
use std::time::Duration;

use log::{debug, warn};
use reqwest::blocking::Client;
use reqwest::Url;
use serde::{Deserialize, Serialize};

use super::ClassifyError;
use crate::fetcher::HostLimiter;
use crate::model::{Category, PolicySegment};

#[derive(Debug, Clone)]
pub struct RemoteSettings {
    pub endpoint: String,
    pub prompt_template: String,
    pub max_retries: u32,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub retry_backoff: Duration,
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    prompt: String,
    segment_id: &'a str,
    heading_path: &'a [String],
    text: &'a str,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RemoteReply {
    primary: Category,
    secondary: Vec<Category>,
}

/// A parsed remote label and how many retries it took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteLabel {
    pub primary: Category,
    pub secondary: Vec<Category>,
    pub retries: u32,
}

pub struct RemoteClient {
    annotator_id: String,
    settings: RemoteSettings,
    endpoint: Url,
    client: Client,
    limiter: HostLimiter,
}

/// Substitute `{{heading_path}}` and `{{text}}` in the template.
pub fn render_prompt(template: &str, segment: &PolicySegment) -> String {
    template
        .replace("{{heading_path}}", &segment.heading_path.join(" > "))
        .replace("{{text}}", &segment.text)
}

impl RemoteClient {
    pub fn new(annotator_id: &str, settings: RemoteSettings, rate_limit: Duration) -> Result<Self, ClassifyError> {
        let endpoint = Url::parse(&settings.endpoint).map_err(|e| ClassifyError::Config {
            annotator: annotator_id.to_string(),
            message: format!("endpoint `{}`: {e}", settings.endpoint),
        })?;
        let client = Client::builder().timeout(settings.timeout).build().map_err(|e| ClassifyError::Config {
            annotator: annotator_id.to_string(),
            message: e.to_string(),
        })?;
        Ok(RemoteClient {
            annotator_id: annotator_id.to_string(),
            settings,
            endpoint,
            client,
            limiter: HostLimiter::new(rate_limit),
        })
    }

    /// Label one segment. Transport failures and unparseable replies are
    /// both retried up to `max_retries` times.
    pub fn classify(&self, segment: &PolicySegment) -> Result<RemoteLabel, ClassifyError> {
        let request = RemoteRequest {
            prompt: render_prompt(&self.settings.prompt_template, segment),
            segment_id: segment.segment_id.as_str(),
            heading_path: &segment.heading_path,
            text: &segment.text,
        };
        let attempts = self.settings.max_retries + 1;
        let mut transport_failures = 0;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                thread::sleep(self.settings.retry_backoff);
            }
            self.limiter.wait(&self.endpoint);
            let mut builder = self.client.post(self.endpoint.clone()).json(&request);
            if let Some(key) = &self.settings.api_key {
                builder = builder.bearer_auth(key);
            }
            let body = match builder.send().and_then(|r| r.error_for_status()).and_then(|r| r.text()) {
                Ok(body) => body,
                Err(e) => {
                    transport_failures += 1;
                    last = e.to_string();
                    debug!("{}: {} attempt {}: {last}", self.annotator_id, segment.segment_id, attempt + 1);
                    continue;
                }
            };
            match serde_json::from_str::<RemoteReply>(&body) {
                Ok(reply) => {
                    let mut secondary: Vec<Category> =
                        reply.secondary.into_iter().filter(|c| *c != reply.primary).collect();
                    secondary.sort();
                    secondary.dedup();
                    return Ok(RemoteLabel {
                        primary: reply.primary,
                        secondary,
                        retries: attempt,
                    });
                }
                Err(e) => {
                    last = e.to_string();
                    warn!("{}: {} rejected reply: {last}", self.annotator_id, segment.segment_id);
                }
            }
        }
        if transport_failures == attempts {
            Err(ClassifyError::Unavailable {
                annotator: self.annotator_id.clone(),
                attempts,
                last,
            })
        } else {
            Err(ClassifyError::Unparseable {
                annotator: self.annotator_id.clone(),
                segment_id: segment.segment_id.to_string(),
                attempts,
                last,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{StubResponse, StubServer};

    fn settings(base: &str, retries: u32, timeout_ms: u64) -> RemoteSettings {
        RemoteSettings {
            endpoint: format!("{base}/classify"),
            prompt_template: "Path: {{heading_path}}\nText: {{text}}".into(),
            max_retries: retries,
            api_key: Some("k".into()),
            timeout: Duration::from_millis(timeout_ms),
            retry_backoff: Duration::ZERO,
        }
    }

    fn segment() -> PolicySegment {
        PolicySegment::new(
            "Acme",
            "acme-0001",
            vec!["Policy".into(), "Cookies".into()],
            "We use cookies.",
        )
    }

    #[test]
    fn parses_strict_reply() {
        let server = StubServer::start(|req, _| {
            assert_eq!(req.method, "POST");
            assert_eq!(req.path, "/classify");
            let v: serde_json::Value = serde_json::from_str(&req.body).unwrap();
            assert_eq!(v["prompt"], "Path: Policy > Cookies\nText: We use cookies.");
            assert_eq!(v["segment_id"], "acme-0001");
            StubResponse::json(200, r#"{"primary":"TRACKING","secondary":[]}"#)
        });
        let client = RemoteClient::new("m1", settings(&server.base, 2, 2000), Duration::ZERO).unwrap();
        let label = client.classify(&segment()).unwrap();
        assert_eq!(label.primary, Category::Tracking);
        assert!(label.secondary.is_empty());
        assert_eq!(label.retries, 0);
    }

    #[test]
    fn invalid_token_is_retried() {
        let server = StubServer::start(|_, hit| {
            if hit == 0 {
                StubResponse::json(200, r#"{"primary":"COOKIES","secondary":[]}"#)
            } else {
                StubResponse::json(200, r#"{"primary":"TRACKING","secondary":["FIRST_PARTY"]}"#)
            }
        });
        let client = RemoteClient::new("m1", settings(&server.base, 2, 2000), Duration::ZERO).unwrap();
        let label = client.classify(&segment()).unwrap();
        assert_eq!(label.primary, Category::Tracking);
        assert_eq!(label.secondary, vec![Category::FirstParty]);
        assert_eq!(label.retries, 1);
        assert_eq!(server.hits(), 2);
    }

    #[test]
    fn free_text_is_never_mined() {
        let server = StubServer::start(|_, _| StubResponse::json(200, "The category is TRACKING."));
        let client = RemoteClient::new("m1", settings(&server.base, 1, 2000), Duration::ZERO).unwrap();
        let err = client.classify(&segment()).unwrap_err();
        assert!(matches!(err, ClassifyError::Unparseable { attempts: 2, .. }));
        // extra fields are also rejected
        let server = StubServer::start(|_, _| {
            StubResponse::json(200, r#"{"primary":"TRACKING","secondary":[],"why":"cookies"}"#)
        });
        let client = RemoteClient::new("m1", settings(&server.base, 0, 2000), Duration::ZERO).unwrap();
        assert!(matches!(client.classify(&segment()), Err(ClassifyError::Unparseable { .. })));
    }

    #[test]
    fn repeated_timeouts_make_annotator_unavailable() {
        let server = StubServer::start(|_, _| StubResponse {
            delay: Duration::from_millis(400),
            ..StubResponse::json(200, r#"{"primary":"TRACKING","secondary":[]}"#)
        });
        let client = RemoteClient::new("m1", settings(&server.base, 2, 100), Duration::ZERO).unwrap();
        let err = client.classify(&segment()).unwrap_err();
        assert!(matches!(err, ClassifyError::Unavailable { attempts: 3, .. }), "{err}");
        assert_eq!(server.hits(), 3);
    }

    #[test]
    fn bad_endpoint_is_config_error() {
        assert!(matches!(
            RemoteClient::new("m1", settings("not a url", 0, 10), Duration::ZERO),
            Err(ClassifyError::Config { .. })
        ));
    }
}
