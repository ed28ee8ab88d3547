use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Provider, ProviderFailure};

/// Responds with `response` when every `contains` needle occurs somewhere in
/// the request's messages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: Vec<String>,
    pub response: String,
}

impl MockRule {
    pub fn new<I, S>(contains: I, response: impl Into<String>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { contains: contains.into_iter().map(Into::into).collect(), response: response.into() }
    }

    fn matches(&self, text: &str) -> bool {
        self.contains.iter().all(|n| text.contains(n.as_str()))
    }
}

/// Scripted offline provider. Exact request hashes win over rules; rules
/// are tried in order.
#[derive(Debug, Default)]
pub struct MockProvider {
    by_key: HashMap<String, String>,
    rules: Vec<MockRule>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, key: impl Into<String>, text: impl Into<String>) -> Self {
        self.by_key.insert(key.into(), text.into());
        self
    }

    pub fn with_rule(mut self, rule: MockRule) -> Self {
        self.rules.push(rule);
        self
    }

    pub fn with_rules(mut self, rules: impl IntoIterator<Item = MockRule>) -> Self {
        self.rules.extend(rules);
        self
    }

    /// Loads `<hash>.txt` fixtures and an optional `rules.json` array.
    pub fn from_dir(dir: &Path) -> io::Result<Self> {
        let mut mock = Self::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "txt") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    mock.by_key.insert(stem.to_string(), fs::read_to_string(&path)?);
                }
            }
        }
        let rules_path = dir.join("rules.json");
        if rules_path.exists() {
            let text = fs::read_to_string(&rules_path)?;
            let rules: Vec<MockRule> =
                serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            mock.rules.extend(rules);
        }
        Ok(mock)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Provider for MockProvider {
    fn send(&self, request: &ChatRequest) -> Result<String, ProviderFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        if let Some(text) = self.by_key.get(&request.key()) {
            return Ok(text.clone());
        }
        let transcript = request.transcript();
        self.rules
            .iter()
            .find(|r| r.matches(&transcript))
            .map(|r| r.response.clone())
            .ok_or(ProviderFailure::Exhausted)
    }
}

/// Lets callers share one mock between a gateway and assertions.
impl<P: Provider + ?Sized> Provider for std::sync::Arc<P> {
    fn send(&self, request: &ChatRequest) -> Result<String, ProviderFailure> {
        (**self).send(request)
    }
}
