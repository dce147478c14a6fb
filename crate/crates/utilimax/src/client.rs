//! Uniform blocking interface to chat-completion providers.
//!
//! `send` is blocking per call; `send_batch` is the concurrency boundary and
//! never exceeds `max_parallel` requests in flight. Transient failures
//! (timeout, 429, 5xx) are retried with exponential backoff; other HTTP
//! errors are not. Credentials come exclusively from environment variables so
//! evaluation configs stay committable.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{prompt_fingerprint, PromptArtifact};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("unknown provider: {0}")]
    UnknownProvider(String),
    #[error("missing credential: environment variable {0} is not set")]
    MissingCredential(String),
    #[error("malformed endpoint: {0}")]
    MalformedEndpoint(String),
    #[error("fixture file error: {0}")]
    Fixture(String),
    #[error("invalid provider config: {0}")]
    InvalidConfig(String),
}

/// Connection settings for one provider/model pair. No secrets: the
/// credential is named by environment variable only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// One of "mock", "openai", "anthropic"; anything else that looks like a
    /// chat-completions endpoint is treated as openai-compatible.
    pub provider_name: String,
    pub model_id: String,
    /// HTTP endpoint; for the mock provider this is the fixture file path.
    pub endpoint_url: String,
    #[serde(default)]
    pub credential_env_var: String,
    #[serde(default)]
    pub max_retries: u32,
    /// Per-request timeout in milliseconds.
    #[serde(default = "default_timeout_ms")]
    pub request_timeout_ms: u64,
    #[serde(default = "default_max_parallel")]
    pub max_parallel: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

fn default_timeout_ms() -> u64 {
    60_000
}

fn default_max_parallel() -> usize {
    1
}

impl ProviderConfig {
    pub fn mock(fixture_path: impl Into<String>) -> Self {
        ProviderConfig {
            provider_name: "mock".to_string(),
            model_id: "mock-model".to_string(),
            endpoint_url: fixture_path.into(),
            credential_env_var: String::new(),
            max_retries: 0,
            request_timeout_ms: default_timeout_ms(),
            max_parallel: 1,
            temperature: None,
        }
    }

    pub fn request_timeout(&self) -> Duration {
        Duration::from_millis(self.request_timeout_ms)
    }
}

/// What one query ultimately produced after retries.
#[derive(Debug, Clone, PartialEq)]
pub enum QueryOutcome {
    Ok(String),
    Timeout,
    HttpError(u16),
    RateLimited,
}

impl QueryOutcome {
    pub fn text(&self) -> Option<&str> {
        match self {
            QueryOutcome::Ok(t) => Some(t),
            _ => None,
        }
    }
}

/// Record of one logical query (all retries included).
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub prompt_fingerprint: String,
    pub attempt_count: u32,
    pub latency: Duration,
    pub outcome: QueryOutcome,
}

/// Result of a single attempt against a provider.
#[derive(Debug, Clone, PartialEq)]
pub enum AttemptOutcome {
    Ok(String),
    Timeout,
    Http(u16),
}

impl AttemptOutcome {
    fn retryable(&self) -> bool {
        match self {
            AttemptOutcome::Ok(_) => false,
            AttemptOutcome::Timeout => true,
            AttemptOutcome::Http(code) => *code == 429 || (500..600).contains(code),
        }
    }
}

/// One provider attempt; retry policy lives in [`Client`].
pub trait Provider: Send + Sync {
    fn attempt(&self, prompt_text: &str) -> AttemptOutcome;
}

impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn attempt(&self, prompt_text: &str) -> AttemptOutcome {
        (**self).attempt(prompt_text)
    }
}

// ---------------------------------------------------------------------------
// Mock provider
// ---------------------------------------------------------------------------

/// Fixture file: a JSON object mapping prompt fingerprints to response texts.
pub type MockFixture = BTreeMap<String, String>;

/// Deterministic offline provider. Responses come from a fingerprint-keyed
/// fixture map; an optional outcome script overrides the next attempts, which
/// is how retry behavior is exercised without a network.
pub struct MockProvider {
    responses: MockFixture,
    script: Mutex<Vec<AttemptOutcome>>,
    in_flight: AtomicUsize,
    max_in_flight_seen: AtomicUsize,
    /// Artificial per-attempt delay so parallelism tests can observe overlap.
    pub attempt_delay: Duration,
}

impl MockProvider {
    pub fn new(responses: MockFixture) -> Self {
        MockProvider {
            responses,
            script: Mutex::new(Vec::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight_seen: AtomicUsize::new(0),
            attempt_delay: Duration::ZERO,
        }
    }

    pub fn from_fixture_file(path: &str) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ClientError::Fixture(format!("{path}: {e}")))?;
        let responses: MockFixture =
            serde_json::from_str(&text).map_err(|e| ClientError::Fixture(format!("{path}: {e}")))?;
        Ok(MockProvider::new(responses))
    }

    /// Queue attempt outcomes consumed before the fixture map is consulted.
    pub fn scripted(outcomes: Vec<AttemptOutcome>) -> Self {
        let p = MockProvider::new(MockFixture::new());
        *p.script.lock().unwrap() = outcomes;
        p
    }

    pub fn push_script(&self, outcomes: Vec<AttemptOutcome>) {
        self.script.lock().unwrap().extend(outcomes);
    }

    /// Highest number of concurrently running attempts observed so far.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight_seen.load(Ordering::SeqCst)
    }
}

impl Provider for MockProvider {
    fn attempt(&self, prompt_text: &str) -> AttemptOutcome {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight_seen.fetch_max(now, Ordering::SeqCst);
        if !self.attempt_delay.is_zero() {
            std::thread::sleep(self.attempt_delay);
        }
        let outcome = {
            let mut script = self.script.lock().unwrap();
            if script.is_empty() {
                None
            } else {
                Some(script.remove(0))
            }
        }
        .unwrap_or_else(|| {
            let fp = prompt_fingerprint(prompt_text);
            match self.responses.get(&fp) {
                Some(text) => AttemptOutcome::Ok(text.clone()),
                None => AttemptOutcome::Http(404),
            }
        });
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        outcome
    }
}

// ---------------------------------------------------------------------------
// HTTP providers
// ---------------------------------------------------------------------------

enum HttpDialect {
    OpenAi,
    Anthropic,
}

struct HttpProvider {
    dialect: HttpDialect,
    endpoint: String,
    api_key: String,
    model_id: String,
    temperature: Option<f64>,
    http: reqwest::blocking::Client,
}

impl HttpProvider {
    fn new(cfg: &ProviderConfig, dialect: HttpDialect) -> Result<Self, ClientError> {
        let api_key = std::env::var(&cfg.credential_env_var)
            .map_err(|_| ClientError::MissingCredential(cfg.credential_env_var.clone()))?;
        let url: reqwest::Url = cfg
            .endpoint_url
            .parse()
            .map_err(|_| ClientError::MalformedEndpoint(cfg.endpoint_url.clone()))?;
        if !matches!(url.scheme(), "http" | "https") {
            return Err(ClientError::MalformedEndpoint(cfg.endpoint_url.clone()));
        }
        let http = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout())
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        Ok(HttpProvider {
            dialect,
            endpoint: cfg.endpoint_url.clone(),
            api_key,
            model_id: cfg.model_id.clone(),
            temperature: cfg.temperature,
            http,
        })
    }

    fn request_body(&self, prompt_text: &str) -> serde_json::Value {
        let mut body = match self.dialect {
            HttpDialect::OpenAi => serde_json::json!({
                "model": self.model_id,
                "messages": [{"role": "user", "content": prompt_text}],
            }),
            HttpDialect::Anthropic => serde_json::json!({
                "model": self.model_id,
                "max_tokens": 8192,
                "messages": [{"role": "user", "content": prompt_text}],
            }),
        };
        if let Some(t) = self.temperature {
            body["temperature"] = serde_json::json!(t);
        }
        body
    }

    fn extract_text(&self, value: &serde_json::Value) -> Option<String> {
        match self.dialect {
            HttpDialect::OpenAi => value["choices"][0]["message"]["content"]
                .as_str()
                .map(|s| s.to_string()),
            HttpDialect::Anthropic => value["content"][0]["text"].as_str().map(|s| s.to_string()),
        }
    }
}

impl Provider for HttpProvider {
    fn attempt(&self, prompt_text: &str) -> AttemptOutcome {
        let request = self.http.post(&self.endpoint).json(&self.request_body(prompt_text));
        let request = match self.dialect {
            HttpDialect::OpenAi => request.bearer_auth(&self.api_key),
            HttpDialect::Anthropic => request
                .header("x-api-key", &self.api_key)
                .header("anthropic-version", "2023-06-01"),
        };
        match request.send() {
            Err(e) if e.is_timeout() => AttemptOutcome::Timeout,
            Err(_) => AttemptOutcome::Http(0),
            Ok(resp) => {
                let status = resp.status().as_u16();
                if !(200..300).contains(&status) {
                    return AttemptOutcome::Http(status);
                }
                match resp.json::<serde_json::Value>() {
                    Ok(value) => match self.extract_text(&value) {
                        Some(text) => AttemptOutcome::Ok(text),
                        None => AttemptOutcome::Http(0),
                    },
                    Err(_) => AttemptOutcome::Http(0),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Client: retry + bounded-parallel batching
// ---------------------------------------------------------------------------

pub struct Client {
    provider: Box<dyn Provider>,
    max_retries: u32,
    max_parallel: usize,
    backoff_base: Duration,
}

impl Client {
    /// Build a client from configuration, resolving the provider adapter.
    pub fn new(cfg: &ProviderConfig) -> Result<Self, ClientError> {
        let provider: Box<dyn Provider> = match cfg.provider_name.as_str() {
            "mock" => Box::new(MockProvider::from_fixture_file(&cfg.endpoint_url)?),
            "anthropic" => Box::new(HttpProvider::new(cfg, HttpDialect::Anthropic)?),
            "openai" | "openai-compatible" | "gemini-openai" => {
                Box::new(HttpProvider::new(cfg, HttpDialect::OpenAi)?)
            }
            other => return Err(ClientError::UnknownProvider(other.to_string())),
        };
        Ok(Client::with_provider(provider, cfg))
    }

    /// Wrap an existing provider (tests inject scripted mocks this way).
    pub fn with_provider(provider: Box<dyn Provider>, cfg: &ProviderConfig) -> Self {
        Client {
            provider,
            max_retries: cfg.max_retries,
            max_parallel: cfg.max_parallel.max(1),
            backoff_base: Duration::from_millis(100),
        }
    }

    /// Override the retry backoff base (tests use a near-zero base).
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    /// Send one prompt, retrying transient failures with exponential backoff.
    pub fn send(&self, prompt: &PromptArtifact) -> QueryRecord {
        self.send_text(&prompt.text)
    }

    fn send_text(&self, text: &str) -> QueryRecord {
        let started = Instant::now();
        let mut attempt_count = 0;
        let outcome = loop {
            attempt_count += 1;
            let outcome = self.provider.attempt(text);
            if !outcome.retryable() || attempt_count > self.max_retries {
                break outcome;
            }
            let backoff = self.backoff_base * 2u32.saturating_pow(attempt_count - 1);
            std::thread::sleep(backoff);
        };
        QueryRecord {
            prompt_fingerprint: prompt_fingerprint(text),
            attempt_count,
            latency: started.elapsed(),
            outcome: match outcome {
                AttemptOutcome::Ok(text) => QueryOutcome::Ok(text),
                AttemptOutcome::Timeout => QueryOutcome::Timeout,
                AttemptOutcome::Http(429) => QueryOutcome::RateLimited,
                AttemptOutcome::Http(code) => QueryOutcome::HttpError(code),
            },
        }
    }

    /// Send a batch with at most `max_parallel` requests in flight. Output
    /// order matches input order regardless of completion order, and
    /// per-item failures never abort the batch.
    pub fn send_batch(&self, prompts: &[PromptArtifact]) -> Vec<QueryRecord> {
        let results: Vec<Mutex<Option<QueryRecord>>> =
            prompts.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.max_parallel.min(prompts.len().max(1));
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= prompts.len() {
                        break;
                    }
                    let record = self.send(&prompts[i]);
                    *results[i].lock().unwrap() = Some(record);
                });
            }
        });
        results
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::PromptVariant;

    fn artifact(text: &str) -> PromptArtifact {
        PromptArtifact {
            variant: PromptVariant::Basic,
            text: text.to_string(),
            diagram_fingerprint: String::new(),
            objective_rendering: String::new(),
        }
    }

    fn cfg(max_retries: u32, max_parallel: usize) -> ProviderConfig {
        ProviderConfig {
            provider_name: "mock".to_string(),
            model_id: "m".to_string(),
            endpoint_url: String::new(),
            credential_env_var: String::new(),
            max_retries,
            request_timeout_ms: 1000,
            max_parallel,
            temperature: None,
        }
    }

    fn fixture_for(texts: &[&str]) -> MockFixture {
        texts
            .iter()
            .map(|t| (prompt_fingerprint(t), format!("response to {t}")))
            .collect()
    }

    #[test]
    fn scripted_success_first_try() {
        let provider = MockProvider::new(fixture_for(&["hello"]));
        let client = Client::with_provider(Box::new(provider), &cfg(3, 1))
            .with_backoff_base(Duration::from_millis(1));
        let record = client.send(&artifact("hello"));
        assert_eq!(record.attempt_count, 1);
        assert_eq!(record.outcome, QueryOutcome::Ok("response to hello".to_string()));
    }

    #[test]
    fn retries_then_succeeds() {
        let provider = MockProvider::new(fixture_for(&["hello"]));
        provider.push_script(vec![AttemptOutcome::Http(500), AttemptOutcome::Timeout]);
        let client = Client::with_provider(Box::new(provider), &cfg(3, 1))
            .with_backoff_base(Duration::from_millis(1));
        let record = client.send(&artifact("hello"));
        assert_eq!(record.attempt_count, 3);
        assert!(matches!(record.outcome, QueryOutcome::Ok(_)));
    }

    #[test]
    fn rate_limit_exhausts_retries() {
        let provider = MockProvider::scripted(vec![
            AttemptOutcome::Http(429),
            AttemptOutcome::Http(429),
            AttemptOutcome::Http(429),
        ]);
        let client = Client::with_provider(Box::new(provider), &cfg(2, 1))
            .with_backoff_base(Duration::from_millis(1));
        let record = client.send(&artifact("hello"));
        assert_eq!(record.attempt_count, 3);
        assert_eq!(record.outcome, QueryOutcome::RateLimited);
    }

    #[test]
    fn non_retryable_4xx_fails_immediately() {
        let provider = MockProvider::scripted(vec![AttemptOutcome::Http(400)]);
        let client = Client::with_provider(Box::new(provider), &cfg(5, 1))
            .with_backoff_base(Duration::from_millis(1));
        let record = client.send(&artifact("hello"));
        assert_eq!(record.attempt_count, 1);
        assert_eq!(record.outcome, QueryOutcome::HttpError(400));
    }

    #[test]
    fn missing_fixture_is_a_404() {
        let provider = MockProvider::new(MockFixture::new());
        let client = Client::with_provider(Box::new(provider), &cfg(0, 1));
        let record = client.send(&artifact("unknown"));
        assert_eq!(record.outcome, QueryOutcome::HttpError(404));
    }

    #[test]
    fn batch_preserves_order() {
        let texts: Vec<String> = (0..20).map(|i| format!("prompt {i}")).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let provider = MockProvider::new(fixture_for(&refs));
        let client = Client::with_provider(Box::new(provider), &cfg(0, 4));
        let prompts: Vec<PromptArtifact> = texts.iter().map(|t| artifact(t)).collect();
        let records = client.send_batch(&prompts);
        assert_eq!(records.len(), 20);
        for (i, record) in records.iter().enumerate() {
            assert_eq!(
                record.outcome,
                QueryOutcome::Ok(format!("response to prompt {i}"))
            );
        }
    }

    #[test]
    fn batch_of_one() {
        let provider = MockProvider::new(fixture_for(&["only"]));
        let client = Client::with_provider(Box::new(provider), &cfg(0, 8));
        let records = client.send_batch(&[artifact("only")]);
        assert_eq!(records.len(), 1);
        assert!(matches!(records[0].outcome, QueryOutcome::Ok(_)));
    }

    #[test]
    fn batch_mixed_outcomes_stay_positional() {
        let mut fixture = fixture_for(&["a", "c"]);
        fixture.remove(&prompt_fingerprint("b")); // "b" absent -> 404
        let provider = MockProvider::new(fixture);
        let client = Client::with_provider(Box::new(provider), &cfg(0, 2));
        let records = client.send_batch(&[artifact("a"), artifact("b"), artifact("c")]);
        assert!(matches!(records[0].outcome, QueryOutcome::Ok(_)));
        assert_eq!(records[1].outcome, QueryOutcome::HttpError(404));
        assert!(matches!(records[2].outcome, QueryOutcome::Ok(_)));
    }

    #[test]
    fn parallelism_is_bounded_and_used() {
        let texts: Vec<String> = (0..12).map(|i| format!("p{i}")).collect();
        let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
        let mut inner = MockProvider::new(fixture_for(&refs));
        inner.attempt_delay = Duration::from_millis(20);
        let provider = std::sync::Arc::new(inner);
        let max_parallel = 3;
        let client = Client::with_provider(Box::new(provider.clone()), &cfg(0, max_parallel));
        let prompts: Vec<PromptArtifact> = texts.iter().map(|t| artifact(t)).collect();
        let _ = client.send_batch(&prompts);
        assert!(provider.max_in_flight() <= max_parallel);
        assert!(provider.max_in_flight() >= 2, "parallelism never materialized");
    }

    #[test]
    fn fixed_script_yields_identical_record_sequences() {
        let run = || {
            let provider = MockProvider::new(fixture_for(&["x", "y"]));
            provider.push_script(vec![AttemptOutcome::Http(503)]);
            let client = Client::with_provider(Box::new(provider), &cfg(1, 1))
                .with_backoff_base(Duration::from_millis(1));
            client
                .send_batch(&[artifact("x"), artifact("y")])
                .into_iter()
                .map(|r| (r.prompt_fingerprint, r.attempt_count, r.outcome))
                .collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn client_new_errors() {
        let mut cfg = cfg(0, 1);
        cfg.provider_name = "whatever".to_string();
        assert!(matches!(
            Client::new(&cfg),
            Err(ClientError::UnknownProvider(_))
        ));

        let mut cfg = ProviderConfig::mock("/definitely/not/here.json");
        cfg.provider_name = "mock".to_string();
        assert!(matches!(Client::new(&cfg), Err(ClientError::Fixture(_))));

        let cfg = ProviderConfig {
            provider_name: "openai".to_string(),
            model_id: "m".to_string(),
            endpoint_url: "https://example.invalid/v1/chat/completions".to_string(),
            credential_env_var: "UTILIMAX_TEST_NO_SUCH_VAR".to_string(),
            max_retries: 0,
            request_timeout_ms: 10,
            max_parallel: 1,
            temperature: None,
        };
        assert!(matches!(
            Client::new(&cfg),
            Err(ClientError::MissingCredential(_))
        ));

        std::env::set_var("UTILIMAX_TEST_DUMMY_KEY", "k");
        let cfg = ProviderConfig {
            provider_name: "openai".to_string(),
            model_id: "m".to_string(),
            endpoint_url: "not a url".to_string(),
            credential_env_var: "UTILIMAX_TEST_DUMMY_KEY".to_string(),
            max_retries: 0,
            request_timeout_ms: 10,
            max_parallel: 1,
            temperature: None,
        };
        assert!(matches!(
            Client::new(&cfg),
            Err(ClientError::MalformedEndpoint(_))
        ));
    }
}
