//! Text-generation client contract shared by the remote decision maker, the
//! paraphraser and the remote judge.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub role: Role,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Turn {
            role: Role::Assistant,
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub system: String,
    pub turns: Vec<Turn>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server answered with status {0}")]
    Status(u16),
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("client misconfigured: {0}")]
    Config(String),
    #[error("gave up after {attempts} attempts, last error: {last}")]
    Exhausted { attempts: usize, last: Box<ClientError> },
}

impl ClientError {
    /// Whether repeating the same request may succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            ClientError::Timeout | ClientError::Transport(_) => true,
            ClientError::Status(code) => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}

pub trait TextGenerationClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError>;
}

impl<C: TextGenerationClient + ?Sized> TextGenerationClient for &C {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        (**self).generate(request)
    }
}

/// Endpoint settings. The bearer token is read from the named environment
/// variable, never from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientConfig {
    pub endpoint: String,
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Total attempts per request, including the first.
    #[serde(default = "default_max_retries")]
    pub max_retries: usize,
}

impl ClientConfig {
    /// Endpoint with default token variable, timeout and attempts.
    pub fn new(endpoint: impl Into<String>) -> Self {
        ClientConfig {
            endpoint: endpoint.into(),
            token_env: default_token_env(),
            timeout_secs: default_timeout(),
            max_retries: default_max_retries(),
        }
    }
}

fn default_token_env() -> String {
    "DME_API_TOKEN".to_string()
}

fn default_timeout() -> u64 {
    30
}

fn default_max_retries() -> usize {
    3
}

/// JSON-over-HTTP client. POSTs `{"system": .., "turns": [{"role", "text"}]}`
/// and expects `{"text": ".."}` back.
pub struct HttpClient {
    endpoint: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl HttpClient {
    pub fn from_config(cfg: &ClientConfig) -> Result<Self, ClientError> {
        if !(cfg.endpoint.starts_with("http://") || cfg.endpoint.starts_with("https://")) {
            return Err(ClientError::Config(format!(
                "endpoint '{}' is not an http(s) URL",
                cfg.endpoint
            )));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(HttpClient {
            endpoint: cfg.endpoint.clone(),
            token: std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty()),
            agent,
        })
    }
}

#[derive(Deserialize)]
struct GenerationResponse {
    text: String,
}

impl TextGenerationClient for HttpClient {
    fn generate(&self, request: &GenerationRequest) -> Result<String, ClientError> {
        let mut req = self.agent.post(&self.endpoint);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => ClientError::Timeout,
            other => ClientError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(ClientError::Status(status));
        }
        let body: GenerationResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| ClientError::Decode(e.to_string()))?;
        Ok(body.text)
    }
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    seq: u64,
    purpose: &'a str,
    attempt: usize,
    request: &'a GenerationRequest,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

/// Append-only JSONL log of every request/response pair.
pub struct AuditLog {
    path: PathBuf,
    inner: Mutex<(File, u64)>,
}

impl AuditLog {
    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(AuditLog {
            path,
            inner: Mutex::new((file, 0)),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn record(
        &self,
        purpose: &str,
        attempt: usize,
        request: &GenerationRequest,
        outcome: &Result<String, ClientError>,
    ) {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        let entry = AuditEntry {
            seq: guard.1,
            purpose,
            attempt,
            request,
            response: outcome.as_ref().ok().map(String::as_str),
            error: outcome.as_ref().err().map(ToString::to_string),
        };
        guard.1 += 1;
        let line = serde_json::to_string(&entry).expect("audit entry serializes");
        if let Err(e) = writeln!(guard.0, "{line}") {
            log::warn!("could not write audit log {}: {e}", self.path.display());
        }
    }
}

/// Sends a request, retrying retriable failures up to `max_attempts` total
/// attempts. Returns the response and the number of attempts used.
pub fn generate_with_retry(
    client: &dyn TextGenerationClient,
    request: &GenerationRequest,
    max_attempts: usize,
    audit: Option<&AuditLog>,
    purpose: &str,
) -> Result<(String, usize), ClientError> {
    let max_attempts = max_attempts.max(1);
    let mut attempt = 0;
    loop {
        attempt += 1;
        let outcome = client.generate(request);
        if let Some(log) = audit {
            log.record(purpose, attempt, request, &outcome);
        }
        match outcome {
            Ok(text) => return Ok((text, attempt)),
            Err(e) if e.is_retriable() && attempt < max_attempts => {
                log::warn!("{purpose}: attempt {attempt} failed ({e}), retrying");
            }
            Err(e) if e.is_retriable() => {
                return Err(ClientError::Exhausted {
                    attempts: attempt,
                    last: Box::new(e),
                })
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    struct Flaky {
        failures: Cell<usize>,
    }

    impl TextGenerationClient for Flaky {
        fn generate(&self, _: &GenerationRequest) -> Result<String, ClientError> {
            if self.failures.get() > 0 {
                self.failures.set(self.failures.get() - 1);
                Err(ClientError::Timeout)
            } else {
                Ok("ok".into())
            }
        }
    }

    fn req() -> GenerationRequest {
        GenerationRequest {
            system: "s".into(),
            turns: vec![Turn::user("hi")],
        }
    }

    #[test]
    fn retries_until_success() {
        let c = Flaky { failures: Cell::new(2) };
        assert_eq!(
            generate_with_retry(&c, &req(), 3, None, "t").unwrap(),
            ("ok".to_string(), 3)
        );
    }

    #[test]
    fn exhausts_after_max_attempts() {
        let c = Flaky { failures: Cell::new(5) };
        match generate_with_retry(&c, &req(), 3, None, "t") {
            Err(ClientError::Exhausted { attempts: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn audit_log_records_each_attempt() {
        let dir = tempfile::tempdir().unwrap();
        let log = AuditLog::open(dir.path().join("audit.jsonl")).unwrap();
        let c = Flaky { failures: Cell::new(1) };
        generate_with_retry(&c, &req(), 3, Some(&log), "test").unwrap();
        let text = std::fs::read_to_string(log.path()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].contains("\"error\""));
        assert!(lines[1].contains("\"response\":\"ok\""));
    }

    #[test]
    fn rejects_non_http_endpoint() {
        let cfg = ClientConfig {
            endpoint: "ftp://x".into(),
            token_env: default_token_env(),
            timeout_secs: 1,
            max_retries: 3,
        };
        assert!(matches!(HttpClient::from_config(&cfg), Err(ClientError::Config(_))));
    }
}
