//! Label-first, similarity-second few-shot example retrieval.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, text_similarity, CorpusError, ProblemRecord};
use crate::llm::{Gateway, LlmError};
use crate::mdp::SolutionCode;
use crate::prompts;

pub const FINITE_HORIZON: &str = "finite-horizon";
pub const INFINITE_DISCOUNTED: &str = "infinite-discounted";
pub const INFINITE_AVERAGE: &str = "infinite-average";

pub const HORIZON_LABELS: [&str; 3] = [FINITE_HORIZON, INFINITE_DISCOUNTED, INFINITE_AVERAGE];

/// Closed label vocabulary: horizon kind, stochasticity, structural tags.
pub const LABEL_VOCABULARY: [&str; 10] = [
    FINITE_HORIZON,
    INFINITE_DISCOUNTED,
    INFINITE_AVERAGE,
    "deterministic",
    "stochastic",
    "action-dependent transition probability",
    "optimal stopping problem",
    "truncation-required state space",
    "time-dependent state space",
    "continuous or non-integer state space",
];

pub const DEFAULT_FEW_SHOT: usize = 3;

pub fn is_known_label(label: &str) -> bool {
    LABEL_VOCABULARY.contains(&label)
}

/// The horizon label among `labels`, if any.
pub fn horizon_label(labels: &[String]) -> Option<&str> {
    labels.iter().map(String::as_str).find(|l| HORIZON_LABELS.contains(l))
}

/// A fully solved seed example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    #[serde(flatten)]
    pub problem: ProblemRecord,
    pub cot: String,
    pub model_text: String,
    pub code: SolutionCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<f64>,
}

impl LabeledExample {
    pub fn id(&self) -> &str {
        &self.problem.id
    }

    pub fn labels(&self) -> &[String] {
        &self.problem.labels
    }

    pub fn check(&self) -> Result<(), CorpusError> {
        self.problem.check()?;
        let fail = |detail: String| Err(CorpusError::InvalidRecord { id: self.problem.id.clone(), detail });
        if self.problem.labels.is_empty() {
            return fail("labels must be nonempty".into());
        }
        if let Some(bad) = self.problem.labels.iter().find(|l| !is_known_label(l)) {
            return fail(format!("unknown label '{bad}'"));
        }
        if self.cot.trim().is_empty() || self.model_text.trim().is_empty() || self.code.text.trim().is_empty() {
            return fail("solved fields must be present".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RetrievalError {
    #[error("example store is empty")]
    EmptyStore,
    #[error("k must be at least 1")]
    ZeroK,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("no recognised label in response {0:?}")]
pub struct LabelParseError(pub String);

/// Splits on commas, semicolons and newlines, strips list markers and
/// quotes, and keeps in-vocabulary labels in first-seen order.
pub fn parse_labels(text: &str) -> Result<Vec<String>, LabelParseError> {
    let mut out: Vec<String> = Vec::new();
    for raw in text.split([',', ';', '\n']) {
        let label = raw
            .trim()
            .trim_start_matches(|c: char| c == '-' || c == '*' || c == '.' || c.is_ascii_digit() || c.is_whitespace())
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '`' || c == '.' || c.is_whitespace())
            .to_lowercase();
        if is_known_label(&label) && !out.contains(&label) {
            out.push(label);
        }
    }
    if out.is_empty() {
        Err(LabelParseError(text.chars().take(120).collect()))
    } else {
        Ok(out)
    }
}

/// Asks the model for labels; retries once on an unparseable answer and
/// returns an empty list (unlabeled) after a second failure.
pub fn assign_labels(gateway: &Gateway, pnl: &str) -> Result<Vec<String>, LlmError> {
    for attempt in 0..2 {
        let nonce = (attempt > 0).then_some("label-retry");
        let text = gateway.chat(prompts::assign_labels(pnl, &LABEL_VOCABULARY), nonce)?;
        match parse_labels(&text) {
            Ok(labels) => return Ok(labels),
            Err(e) => log::debug!("label parse failed: {e}"),
        }
    }
    Ok(Vec::new())
}

fn dense_cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.is_empty() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (na > 0.0 && nb > 0.0).then(|| dot / (na * nb))
}

/// In-memory example store, read-only once built.
#[derive(Debug, Clone, Default)]
pub struct ExampleStore {
    examples: Vec<LabeledExample>,
    embeddings: BTreeMap<String, Vec<f64>>,
}

impl ExampleStore {
    pub fn new(examples: Vec<LabeledExample>) -> Self {
        Self { examples, embeddings: BTreeMap::new() }
    }

    /// Loads a JSON-lines store; `<path>.embeddings.json` (id -> vector) is
    /// read when present.
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let examples: Vec<LabeledExample> = corpus::read_jsonl(path)?;
        for e in &examples {
            e.check()?;
        }
        let mut store = Self::new(examples);
        let sidecar = path.with_extension("embeddings.json");
        if sidecar.exists() {
            let text = std::fs::read_to_string(&sidecar)
                .map_err(|source| CorpusError::Io { path: sidecar.display().to_string(), source })?;
            store.embeddings = serde_json::from_str(&text).map_err(|source| CorpusError::Json {
                path: sidecar.display().to_string(),
                line: 1,
                source,
            })?;
        }
        Ok(store)
    }

    pub fn with_embeddings(mut self, embeddings: BTreeMap<String, Vec<f64>>) -> Self {
        self.embeddings = embeddings;
        self
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LabeledExample> {
        self.examples.iter().find(|e| e.id() == id)
    }

    pub fn retrieve(&self, query_pnl: &str, query_labels: &[String], k: usize) -> Result<Vec<&LabeledExample>, RetrievalError> {
        self.retrieve_where(query_pnl, query_labels, None, k, |_| true)
    }

    /// Full form: optional query embedding and a candidate predicate (used
    /// to keep a seed out of its own few-shot set).
    pub fn retrieve_where(
        &self,
        query_pnl: &str,
        query_labels: &[String],
        query_embedding: Option<&[f64]>,
        k: usize,
        keep: impl Fn(&LabeledExample) -> bool,
    ) -> Result<Vec<&LabeledExample>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        let pool: Vec<&LabeledExample> = self.examples.iter().filter(|e| keep(e)).collect();
        if pool.is_empty() {
            return Err(RetrievalError::EmptyStore);
        }
        let horizon = horizon_label(query_labels);
        let matching: Vec<&LabeledExample> = match horizon {
            Some(h) => pool.iter().copied().filter(|e| horizon_label(e.labels()) == Some(h)).collect(),
            None => Vec::new(),
        };
        let candidates = if matching.is_empty() { pool } else { matching };

        let overlap = |e: &LabeledExample| {
            e.labels().iter().filter(|l| Some(l.as_str()) != horizon && query_labels.contains(l)).count()
        };
        let similarity = |e: &LabeledExample| {
            query_embedding
                .zip(self.embeddings.get(e.id()))
                .and_then(|(q, v)| dense_cosine(q, v))
                .unwrap_or_else(|| text_similarity(query_pnl, &e.problem.pnl))
        };
        let mut scored: Vec<(usize, f64, &LabeledExample)> =
            candidates.into_iter().map(|e| (overlap(e), similarity(e), e)).collect();
        scored.sort_by(|a, b| {
            b.0.cmp(&a.0)
                .then(b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal))
                .then_with(|| a.2.id().cmp(b.2.id()))
        });
        Ok(scored.into_iter().take(k).map(|(_, _, e)| e).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Provenance;
    use crate::llm::{MockProvider, MockRule};
    use crate::scenario::Category;

    pub(crate) fn example(id: &str, pnl: &str, labels: &[&str]) -> LabeledExample {
        LabeledExample {
            problem: ProblemRecord {
                id: id.into(),
                pnl: pnl.into(),
                labels: labels.iter().map(|s| s.to_string()).collect(),
                domain_category: Category::Others,
                provenance: Provenance::Seed,
                seed_id: None,
                scenario_id: None,
            },
            cot: "c".into(),
            model_text: "m".into(),
            code: SolutionCode::spec("{}"),
            answer: None,
        }
    }

    fn labels(ls: &[&str]) -> Vec<String> {
        ls.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn horizon_filter_dominates_text() {
        let store = ExampleStore::new(vec![
            example("a", "a machine is repaired or replaced each week", &[FINITE_HORIZON]),
            example("b", "a queue of jobs served forever", &[INFINITE_AVERAGE]),
        ]);
        let got = store
            .retrieve("a machine is repaired or replaced each week", &labels(&[INFINITE_AVERAGE]), 1)
            .unwrap();
        assert_eq!(got[0].id(), "b");
        // Absolute filter: asking for more still returns only matching examples.
        assert_eq!(store.retrieve("x", &labels(&[INFINITE_AVERAGE]), 5).unwrap().len(), 1);
    }

    #[test]
    fn oversized_k_returns_whole_store_ranked() {
        let store = ExampleStore::new(vec![
            example("a", "alpha beta", &[FINITE_HORIZON]),
            example("b", "gamma delta", &[INFINITE_AVERAGE]),
            example("c", "alpha", &[INFINITE_DISCOUNTED]),
        ]);
        let got = store.retrieve("alpha", &[], 10).unwrap();
        assert_eq!(got.iter().map(|e| e.id()).collect::<Vec<_>>(), ["c", "a", "b"]);
    }

    #[test]
    fn same_label_ranked_by_cosine() {
        // Query tokens: {inventory, of, widgets}. Cosine with "inventory of
        // widgets and gadgets" is 3/sqrt(3*5) = 0.7746; with "inventory
        // control" it is 1/sqrt(3*2) = 0.4082.
        let store = ExampleStore::new(vec![
            example("far", "inventory control", &[INFINITE_DISCOUNTED]),
            example("near", "inventory of widgets and gadgets", &[INFINITE_DISCOUNTED]),
        ]);
        let q = "inventory of widgets";
        assert!((text_similarity(q, "inventory of widgets and gadgets") - 3.0 / 15f64.sqrt()).abs() < 1e-12);
        assert!((text_similarity(q, "inventory control") - 1.0 / 6f64.sqrt()).abs() < 1e-12);
        let got = store.retrieve(q, &labels(&[INFINITE_DISCOUNTED]), 1).unwrap();
        assert_eq!(got[0].id(), "near");
    }

    #[test]
    fn structural_overlap_beats_similarity() {
        let store = ExampleStore::new(vec![
            example("plain", "stop or continue selling", &[FINITE_HORIZON]),
            example("stop", "unrelated words entirely", &[FINITE_HORIZON, "optimal stopping problem"]),
        ]);
        let got = store
            .retrieve("stop or continue selling", &labels(&[FINITE_HORIZON, "optimal stopping problem"]), 1)
            .unwrap();
        assert_eq!(got[0].id(), "stop");
    }

    #[test]
    fn embeddings_used_when_both_sides_have_them() {
        let store = ExampleStore::new(vec![example("a", "same text", &[FINITE_HORIZON]), example("b", "other", &[FINITE_HORIZON])])
            .with_embeddings(BTreeMap::from([("a".into(), vec![1.0, 0.0]), ("b".into(), vec![0.0, 1.0])]));
        let got = store.retrieve_where("same text", &[], Some(&[0.1, 0.9]), 1, |_| true).unwrap();
        assert_eq!(got[0].id(), "b");
    }

    #[test]
    fn errors() {
        let empty = ExampleStore::default();
        assert_eq!(empty.retrieve("q", &[], 1).unwrap_err(), RetrievalError::EmptyStore);
        let store = ExampleStore::new(vec![example("a", "x", &[FINITE_HORIZON])]);
        assert_eq!(store.retrieve("q", &[], 0).unwrap_err(), RetrievalError::ZeroK);
        assert_eq!(store.retrieve_where("q", &[], None, 1, |e| e.id() != "a").unwrap_err(), RetrievalError::EmptyStore);
    }

    #[test]
    fn label_parsing() {
        assert_eq!(parse_labels("infinite-discounted, stochastic").unwrap(), labels(&[INFINITE_DISCOUNTED, "stochastic"]));
        assert_eq!(
            parse_labels("- Stochastic\n- quantum horizon\n- \"optimal stopping problem\"").unwrap(),
            labels(&["stochastic", "optimal stopping problem"])
        );
        assert!(parse_labels("no idea").is_err());
    }

    #[test]
    fn assign_labels_retries_then_gives_up() {
        let gw = Gateway::new(MockProvider::new().with_rule(MockRule::new(["TASK: assign-labels"], "unsure")), "m");
        assert_eq!(assign_labels(&gw, "p").unwrap(), Vec::<String>::new());
        assert_eq!(gw.provider_calls(), 2);
        let ok = Gateway::new(
            MockProvider::new().with_rule(MockRule::new(["TASK: assign-labels"], "infinite-discounted, stochastic")),
            "m",
        );
        assert_eq!(assign_labels(&ok, "p").unwrap(), labels(&[INFINITE_DISCOUNTED, "stochastic"]));
    }

    #[test]
    fn example_check() {
        assert!(example("a", "x", &[FINITE_HORIZON]).check().is_ok());
        assert!(example("a", "x", &[]).check().is_err());
        assert!(example("a", "x", &["weird"]).check().is_err());
    }
}
