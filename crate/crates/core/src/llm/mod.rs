//! Provider-agnostic chat completion with retries, rate limiting and a
//! content-addressed response cache.

mod cache;
mod clock;
mod http;
mod mock;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::ResponseCache;
pub use clock::{Clock, RateLimiter, SystemClock, VirtualClock};
pub use http::HttpProvider;
pub use mock::{MockProvider, MockRule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.95, max_tokens: 8192 }
    }
}

impl Decoding {
    pub fn check(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p must lie in (0,1], got {}", self.top_p));
        }
        if self.max_tokens == 0 {
            return Err("max_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_name: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_name: impl Into<String>, messages: Vec<Message>, decoding: Decoding) -> Self {
        Self {
            model_name: model_name.into(),
            messages,
            temperature: decoding.temperature,
            top_p: decoding.top_p,
            max_tokens: decoding.max_tokens,
        }
    }

    pub fn check(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) && self.messages[0].role != Role::System {
            return Err(LlmError::InvalidRequest("system message must come first".into()));
        }
        Decoding { temperature: self.temperature, top_p: self.top_p, max_tokens: self.max_tokens }
            .check()
            .map_err(LlmError::InvalidRequest)
    }

    /// SHA-256 of the request's canonical JSON; keys the cache and mock fixtures.
    pub fn key(&self) -> String {
        let json = serde_json::to_string(self).expect("requests serialise");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// All message contents joined, used for rule matching.
    pub fn transcript(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
    }
}

/// One of the role-playing solver agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub index: usize,
    pub name: String,
    pub system_prompt: String,
}

/// The five default solver roles, indexed from 1.
pub fn default_personas() -> Vec<Persona> {
    [
        ("dp-expert", "an expert in dynamic programming who writes precise Bellman recursions"),
        ("or-professor", "an operations research professor who checks every modelling assumption"),
        ("or-student", "a diligent operations research student who reasons step by step"),
        ("uncertainty-researcher", "a researcher in decision making under uncertainty who is careful with probabilities"),
        ("mdp-specialist", "a Markov decision process specialist focused on states, actions and transitions"),
    ]
    .into_iter()
    .enumerate()
    .map(|(i, (name, who))| Persona {
        index: i + 1,
        name: name.to_string(),
        system_prompt: format!("PERSONA: {name}\nYou are {who}."),
    })
    .collect()
}

/// Take the first `k` default personas, or repeat with suffixed names when
/// more are requested.
pub fn personas(k: usize) -> Vec<Persona> {
    let base = default_personas();
    (0..k)
        .map(|i| {
            let mut p = base[i % base.len()].clone();
            p.index = i + 1;
            if i >= base.len() {
                p.name = format!("{}-{}", p.name, i / base.len() + 1);
                p.system_prompt = p.system_prompt.replacen(&base[i % base.len()].name, &p.name, 1);
            }
            p
        })
        .collect()
}

/// A failure reported by a provider for a single attempt.
#[derive(Debug, Clone, PartialEq)]
pub enum ProviderFailure {
    /// Worth retrying: rate limits, server errors, timeouts.
    Transient { status: Option<u16>, message: String },
    /// Not worth retrying.
    Fatal { status: Option<u16>, message: String },
    /// A scripted provider has nothing for this request.
    Exhausted,
}

impl ProviderFailure {
    /// Classifies an HTTP status code.
    pub fn from_status(status: u16, message: impl Into<String>) -> Self {
        let message = message.into();
        if status == 429 || status == 408 || (500..600).contains(&status) {
            ProviderFailure::Transient { status: Some(status), message }
        } else {
            ProviderFailure::Fatal { status: Some(status), message }
        }
    }
}

pub trait Provider: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<String, ProviderFailure>;
}

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("provider error (status {status:?}) after {attempts} attempt(s): {message}")]
    Provider { status: Option<u16>, attempts: u32, message: String },
    #[error("mock provider has no response for request {key}")]
    MockExhausted { key: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("response cache: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_tries: u32,
    pub base: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_tries: 5, base: Duration::from_secs(1), factor: 2 }
    }
}

impl RetryPolicy {
    /// Delay after the `n`th failed try (1-based).
    pub fn delay(&self, n: u32) -> Duration {
        self.base * self.factor.saturating_pow(n.saturating_sub(1))
    }
}

/// Thread-safe completion client.
pub struct Gateway {
    provider: Box<dyn Provider>,
    cache: Option<ResponseCache>,
    limiter: RateLimiter,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    model_name: String,
    decoding: Decoding,
    provider_calls: AtomicUsize,
}

impl Gateway {
    pub fn new(provider: impl Provider + 'static, model_name: impl Into<String>) -> Self {
        Self {
            provider: Box::new(provider),
            cache: None,
            limiter: RateLimiter::unlimited(),
            retry: RetryPolicy::default(),
            clock: Arc::new(SystemClock::new()),
            model_name: model_name.into(),
            decoding: Decoding::default(),
            provider_calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: ResponseCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: u32) -> Self {
        self.limiter = RateLimiter::new(requests_per_minute);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_decoding(mut self, decoding: Decoding) -> Self {
        self.decoding = decoding;
        self
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn decoding(&self) -> Decoding {
        self.decoding
    }

    pub fn limiter(&self) -> &RateLimiter {
        &self.limiter
    }

    /// Requests that reached the provider (cache hits excluded, retries included).
    pub fn provider_calls(&self) -> usize {
        self.provider_calls.load(Ordering::SeqCst)
    }

    /// Builds a request with the gateway defaults. A nonce, when given, is
    /// appended as a trailing system message so repeated samples get
    /// distinct cache keys.
    pub fn request(&self, mut messages: Vec<Message>, nonce: Option<&str>) -> ChatRequest {
        if let Some(nonce) = nonce {
            messages.push(Message::system(format!("sample: {nonce}")));
        }
        ChatRequest::new(self.model_name.clone(), messages, self.decoding)
    }

    pub fn chat(&self, messages: Vec<Message>, nonce: Option<&str>) -> Result<String, LlmError> {
        self.complete(&self.request(messages, nonce))
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String, LlmError> {
        request.check()?;
        let key = request.key();
        if let Some(cache) = &self.cache {
            if let Some(hit) = cache.get(&key)? {
                return Ok(hit);
            }
        }
        let mut tries = 0;
        loop {
            tries += 1;
            self.limiter.acquire(self.clock.as_ref());
            self.provider_calls.fetch_add(1, Ordering::SeqCst);
            match self.provider.send(request) {
                Ok(text) => {
                    if let Some(cache) = &self.cache {
                        cache.put(&key, &text)?;
                    }
                    return Ok(text);
                }
                Err(ProviderFailure::Exhausted) => return Err(LlmError::MockExhausted { key }),
                Err(ProviderFailure::Fatal { status, message }) => {
                    return Err(LlmError::Provider { status, attempts: tries, message })
                }
                Err(ProviderFailure::Transient { status, message }) => {
                    if tries >= self.retry.max_tries {
                        return Err(LlmError::Provider { status, attempts: tries, message });
                    }
                    log::debug!("transient provider failure {status:?}: {message}; retry {tries}");
                    self.clock.sleep(self.retry.delay(tries));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<Vec<u16>>,
        calls: AtomicUsize,
    }

    impl Provider for Flaky {
        fn send(&self, _: &ChatRequest) -> Result<String, ProviderFailure> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            match self.failures.lock().unwrap().pop() {
                Some(status) => Err(ProviderFailure::from_status(status, "injected")),
                None => Ok("fine".into()),
            }
        }
    }

    fn flaky(statuses: &[u16]) -> Flaky {
        Flaky { failures: Mutex::new(statuses.to_vec()), calls: AtomicUsize::new(0) }
    }

    #[test]
    fn two_rate_limits_then_success() {
        let clock = Arc::new(VirtualClock::new());
        let gw = Gateway::new(flaky(&[429, 429]), "m").with_clock(clock.clone());
        assert_eq!(gw.chat(vec![Message::user("hi")], None).unwrap(), "fine");
        assert_eq!(gw.provider_calls(), 3);
        // Backoff 1 s then 2 s.
        assert_eq!(clock.now(), Duration::from_secs(3));
    }

    #[test]
    fn retries_are_bounded() {
        let clock = Arc::new(VirtualClock::new());
        let gw = Gateway::new(flaky(&[503; 9]), "m").with_clock(clock.clone());
        match gw.chat(vec![Message::user("hi")], None) {
            Err(LlmError::Provider { status: Some(503), attempts: 5, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(clock.now(), Duration::from_secs(1 + 2 + 4 + 8));
    }

    #[test]
    fn client_errors_are_not_retried() {
        let gw = Gateway::new(flaky(&[401]), "m").with_clock(Arc::new(VirtualClock::new()));
        assert!(matches!(gw.chat(vec![Message::user("hi")], None), Err(LlmError::Provider { attempts: 1, .. })));
    }

    #[test]
    fn cached_request_is_replayed_without_calls() {
        let dir = tempfile::tempdir().unwrap();
        let mock = MockProvider::new().with_rule(MockRule::new(["hi"], "cached text"));
        let gw = Gateway::new(mock, "m").with_cache(ResponseCache::new(dir.path()).unwrap());
        let first = gw.chat(vec![Message::user("hi")], None).unwrap();
        let second = gw.chat(vec![Message::user("hi")], None).unwrap();
        assert_eq!(first, second);
        assert_eq!(gw.provider_calls(), 1);
    }

    #[test]
    fn nonce_changes_the_key() {
        let gw = Gateway::new(MockProvider::new(), "m");
        let a = gw.request(vec![Message::user("x")], Some("r0"));
        let b = gw.request(vec![Message::user("x")], Some("r1"));
        assert_ne!(a.key(), b.key());
        assert_eq!(a.key(), gw.request(vec![Message::user("x")], Some("r0")).key());
    }

    #[test]
    fn request_validation() {
        let gw = Gateway::new(MockProvider::new(), "m");
        assert!(matches!(gw.chat(vec![], None), Err(LlmError::InvalidRequest(_))));
        let bad = gw.with_decoding(Decoding { top_p: 0.0, ..Decoding::default() });
        assert!(matches!(bad.chat(vec![Message::user("x")], None), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn five_distinct_personas() {
        let p = default_personas();
        assert_eq!(p.len(), 5);
        assert_eq!(p.iter().map(|p| p.index).collect::<Vec<_>>(), [1, 2, 3, 4, 5]);
        let more = personas(7);
        assert_eq!(more[6].index, 7);
        assert_eq!(more[6].name, "or-professor-2");
        assert!(more[6].system_prompt.starts_with("PERSONA: or-professor-2\n"));
    }
}
