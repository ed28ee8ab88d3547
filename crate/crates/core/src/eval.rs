//! Benchmark evaluation: answer extraction, scoring, pass@k and
//! self-consistency, and the report computed from a transcript.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::RunHeader;
use crate::forward::majority_vote;
use crate::llm::{Decoding, Gateway};
use crate::mdp::{parse_single_number, Executor};
use crate::prompts;
use crate::retrieval::ExampleStore;
use crate::{Tolerance, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub id: String,
    pub question: String,
    pub answer: f64,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("k = {k} exceeds the {n} samples available")]
    KTooLarge { k: usize, n: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no items to evaluate")]
    Empty,
    #[error("item {0} has a non-finite answer")]
    BadItem(String),
    #[error("rag mode needs a nonempty example store")]
    NoStore,
}

/// Spec or script block executed, else `FINAL ANSWER:`, else the last
/// standalone number.
pub fn extract_answer(completion: &str, executor: &Executor) -> Option<f64> {
    if prompts::has_code_block(completion) {
        let code = prompts::extract_code(completion);
        if let Some(y) = executor.execute(&code).answer {
            return Some(y);
        }
    }
    if let Some(y) = final_answer_line(completion) {
        return Some(y);
    }
    last_number(completion)
}

fn final_answer_line(text: &str) -> Option<f64> {
    const MARK: &str = "FINAL ANSWER:";
    text.lines().rev().find_map(|line| {
        let at = line.find(MARK)?;
        let rest = line[at + MARK.len()..].trim().trim_end_matches(['.', ',']);
        let rest = rest.trim_start_matches('$').replace(',', "");
        parse_single_number(&rest)
    })
}

fn last_number(text: &str) -> Option<f64> {
    text.split_whitespace().rev().find_map(|tok| {
        let t = tok.trim_matches(|c: char| matches!(c, ',' | '.' | ';' | ':' | '(' | ')' | '[' | ']' | '$' | '%' | '*' | '"'));
        if t.is_empty() || !t.chars().any(|c| c.is_ascii_digit()) {
            return None;
        }
        t.parse::<f64>().ok().filter(|v| v.is_finite())
    })
}

pub fn score(predicted: Option<f64>, truth: f64, tol: Tolerance) -> bool {
    tol.matches_opt(predicted, truth)
}

fn check_k(k: usize, rows: impl Iterator<Item = usize>) -> Result<(), EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    if let Some(n) = rows.min() {
        if k > n {
            return Err(EvalError::KTooLarge { k, n });
        }
    }
    Ok(())
}

/// Share of items with a correct answer among their first `k` samples.
pub fn pass_at_k(results: &[Vec<bool>], k: usize) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::Empty);
    }
    check_k(k, results.iter().map(Vec::len))?;
    let hits = results.iter().filter(|row| row[..k].iter().any(|&b| b)).count();
    Ok(hits as f64 / results.len() as f64)
}

/// Share of items whose majority vote over the first `k` answers is correct.
pub fn self_consistency_at_k(answers: &[Vec<Option<f64>>], truths: &[f64], k: usize, tol: Tolerance) -> Result<f64, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::Empty);
    }
    check_k(k, answers.iter().map(Vec::len))?;
    let hits = answers
        .iter()
        .zip(truths)
        .filter(|(row, &t)| score(majority_vote(&row[..k], tol), t, tol))
        .count();
    Ok(hits as f64 / answers.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    #[default]
    Zero,
    Rag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLog {
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub predicted: Option<f64>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub item_id: String,
    pub difficulty: Difficulty,
    #[serde(default)]
    pub labels: Vec<String>,
    pub truth: f64,
    pub samples: Vec<SampleLog>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub total: usize,
    pub percent: f64,
}

impl Accuracy {
    pub fn new(correct: usize, total: usize) -> Self {
        let percent = if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 };
        Self { correct, total, percent }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub model: String,
    pub mode: PromptMode,
    pub samples: usize,
    pub decoding: Decoding,
    pub tolerance: Tolerance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub header: Option<RunHeader>,
    pub meta: RunMeta,
    pub per_difficulty: BTreeMap<Difficulty, Accuracy>,
    pub micro: f64,
    pub macro_avg: f64,
    pub pass_at_k: Vec<(usize, f64)>,
    pub self_consistency_at_k: Vec<(usize, f64)>,
    pub per_label: BTreeMap<String, Accuracy>,
}

/// Micro and macro percentages from per-difficulty counts.
pub fn micro_macro(per_difficulty: &BTreeMap<Difficulty, Accuracy>) -> (f64, f64) {
    let correct: usize = per_difficulty.values().map(|a| a.correct).sum();
    let total: usize = per_difficulty.values().map(|a| a.total).sum();
    let micro = Accuracy::new(correct, total).percent;
    let present: Vec<f64> = per_difficulty.values().filter(|a| a.total > 0).map(|a| a.percent).collect();
    let macro_avg = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    (micro, macro_avg)
}

/// Pure function of the transcript: accuracy uses each item's first
/// sample; curves cover k = 1..n.
pub fn report_from_transcript(entries: &[TranscriptEntry], meta: RunMeta, header: Option<RunHeader>) -> Result<MetricsReport, EvalError> {
    if entries.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = entries.iter().map(|e| e.samples.len()).min().unwrap_or(0);
    if n == 0 {
        return Err(EvalError::ZeroK);
    }
    let mut per_difficulty: BTreeMap<Difficulty, Accuracy> = BTreeMap::new();
    let mut per_label: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for e in entries {
        let ok = e.samples[0].correct;
        let acc = per_difficulty.entry(e.difficulty).or_insert(Accuracy::new(0, 0));
        *acc = Accuracy::new(acc.correct + ok as usize, acc.total + 1);
        for l in &e.labels {
            let c = per_label.entry(l.clone()).or_insert((0, 0));
            c.0 += ok as usize;
            c.1 += 1;
        }
    }
    let (micro, macro_avg) = micro_macro(&per_difficulty);
    let results: Vec<Vec<bool>> = entries.iter().map(|e| e.samples.iter().map(|s| s.correct).collect()).collect();
    let answers: Vec<Vec<Option<f64>>> = entries.iter().map(|e| e.samples.iter().map(|s| s.predicted).collect()).collect();
    let truths: Vec<f64> = entries.iter().map(|e| e.truth).collect();
    let mut pass = Vec::with_capacity(n);
    let mut sc = Vec::with_capacity(n);
    for k in 1..=n {
        pass.push((k, 100.0 * pass_at_k(&results, k)?));
        sc.push((k, 100.0 * self_consistency_at_k(&answers, &truths, k, meta.tolerance)?));
    }
    Ok(MetricsReport {
        schema_version: SCHEMA_VERSION,
        header,
        meta,
        per_difficulty,
        micro,
        macro_avg,
        pass_at_k: pass,
        self_consistency_at_k: sc,
        per_label: per_label.into_iter().map(|(k, (c, t))| (k, Accuracy::new(c, t))).collect(),
    })
}

impl MetricsReport {
    /// Recomputes micro and macro from the per-difficulty counts.
    pub fn is_consistent(&self) -> bool {
        let (micro, macro_avg) = micro_macro(&self.per_difficulty);
        micro == self.micro && macro_avg == self.macro_avg
    }

    pub fn percent(&self, d: Difficulty) -> f64 {
        self.per_difficulty.get(&d).map(|a| a.percent).unwrap_or(0.0)
    }
}

pub const TABLE_HEADER: &str = "| Model | Easy (%) | Hard (%) | Micro (%) | Macro (%) |";

/// Markdown table with one row per (model label, report).
pub fn render_table(rows: &[(&str, &MetricsReport)]) -> String {
    let mut out = String::new();
    out.push_str(TABLE_HEADER);
    out.push('\n');
    out.push_str("|---|---:|---:|---:|---:|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {} | {:.1} | {:.1} | {:.1} | {:.1} |\n",
            name,
            r.percent(Difficulty::Easy),
            r.percent(Difficulty::Hard),
            r.micro,
            r.macro_avg
        ));
    }
    out
}

/// Samples `n` completions per item and scores them. Provider failures
/// become null predictions.
pub fn run_eval(
    gateway: &Gateway,
    executor: &Executor,
    items: &[BenchmarkItem],
    n: usize,
    mode: PromptMode,
    store: Option<&ExampleStore>,
    few_shot: usize,
    tol: Tolerance,
) -> Result<Vec<TranscriptEntry>, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    if n == 0 {
        return Err(EvalError::ZeroK);
    }
    if let Some(bad) = items.iter().find(|i| !i.answer.is_finite()) {
        return Err(EvalError::BadItem(bad.id.clone()));
    }
    let store = match mode {
        PromptMode::Rag => Some(store.filter(|s| !s.is_empty()).ok_or(EvalError::NoStore)?),
        PromptMode::Zero => None,
    };
    Ok(items
        .par_iter()
        .map(|item| {
            let examples = store
                .and_then(|s| s.retrieve(&item.question, &item.labels, few_shot.max(1)).ok())
                .unwrap_or_default();
            let samples = (0..n)
                .map(|i| {
                    let nonce = format!("s{i}");
                    match gateway.chat(prompts::solve(&item.question, &examples), Some(&nonce)) {
                        Ok(text) => {
                            let predicted = extract_answer(&text, executor);
                            SampleLog { completion: Some(text), error: None, predicted, correct: score(predicted, item.answer, tol) }
                        }
                        Err(e) => SampleLog { completion: None, error: Some(e.to_string()), predicted: None, correct: false },
                    }
                })
                .collect();
            TranscriptEntry {
                item_id: item.id.clone(),
                difficulty: item.difficulty,
                labels: item.labels.clone(),
                truth: item.answer,
                samples,
            }
        })
        .collect())
}
