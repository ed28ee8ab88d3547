//! Problem and solution records shared by every pipeline stage, the
//! masked-token similarity used for novelty filtering, JSON-lines storage,
//! and SFT corpus assembly.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::mdp::{ExecStatus, Executor, SolutionCode};
use crate::scenario::Category;
use crate::{Tolerance, SCHEMA_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("nothing to assemble: every input is empty")]
    EmptyCorpus,
    #[error("novelty threshold must lie in (0,1), got {0}")]
    BadThreshold(f64),
    #[error("mix fraction for {0} must lie in (0,1], got {1}")]
    BadMix(&'static str, f64),
    #[error("record {id}: {detail}")]
    InvalidRecord { id: String, detail: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Seed,
    Forward,
    Backward,
}

/// A natural-language problem with its structural labels and lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub id: String,
    pub pnl: String,
    #[serde(default)]
    pub labels: Vec<String>,
    pub domain_category: Category,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_id: Option<String>,
}

impl ProblemRecord {
    pub fn check(&self) -> Result<(), CorpusError> {
        let fail = |detail: &str| Err(CorpusError::InvalidRecord { id: self.id.clone(), detail: detail.into() });
        if self.pnl.trim().is_empty() {
            return fail("empty problem text");
        }
        match self.provenance {
            Provenance::Seed if self.scenario_id.is_some() => fail("seed problems carry no scenario"),
            Provenance::Forward | Provenance::Backward
                if self.seed_id.is_none() || self.scenario_id.is_none() =>
            {
                fail("generated problems must name their seed and scenario")
            }
            _ => Ok(()),
        }
    }
}

/// One (reasoning, model, code, answer) tuple produced by one persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionAttempt {
    pub cot: String,
    pub model_text: String,
    pub code: SolutionCode,
    pub answer: Option<f64>,
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub role_index: usize,
    pub attempt_index: usize,
}

impl SolutionAttempt {
    pub fn check(&self) -> bool {
        self.answer.is_some() == (self.status == ExecStatus::Ok)
    }
}

/// The attempt sequence of one persona on one problem, ending in the
/// verified answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub attempts: Vec<SolutionAttempt>,
    pub final_answer: f64,
    pub recovered: bool,
}

impl Trajectory {
    pub fn check(&self, max_reflections: usize, tol: Tolerance) -> Result<(), String> {
        let last = self.attempts.last().ok_or("empty trajectory")?;
        if !tol.matches_opt(last.answer, self.final_answer) {
            return Err("last attempt does not reach the final answer".into());
        }
        if self.attempts.len() > max_reflections + 1 {
            return Err(format!("{} attempts exceed the reflection cap", self.attempts.len()));
        }
        if self.recovered != (self.attempts.len() > 1) {
            return Err("recovered flag disagrees with attempt count".into());
        }
        Ok(())
    }
}

/// A single accepted solution: forward records and first-try backward records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord {
    pub id: String,
    pub problem: ProblemRecord,
    pub attempt: SolutionAttempt,
    /// The consensus or reference answer the attempt was accepted against.
    pub accepted_answer: f64,
}

/// A reflected trajectory recovered by backward generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub id: String,
    pub problem: ProblemRecord,
    pub trajectory: Trajectory,
}

/// One line of a generated dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
pub enum DatasetRecord {
    Solution(SolutionRecord),
    Trajectory(TrajectoryRecord),
}

impl DatasetRecord {
    pub fn id(&self) -> &str {
        match self {
            DatasetRecord::Solution(r) => &r.id,
            DatasetRecord::Trajectory(r) => &r.id,
        }
    }

    pub fn problem(&self) -> &ProblemRecord {
        match self {
            DatasetRecord::Solution(r) => &r.problem,
            DatasetRecord::Trajectory(r) => &r.problem,
        }
    }

    /// The code whose execution must reproduce [`Self::stored_answer`].
    pub fn final_code(&self) -> &SolutionCode {
        match self {
            DatasetRecord::Solution(r) => &r.attempt.code,
            DatasetRecord::Trajectory(r) => &r.trajectory.attempts.last().expect("nonempty").code,
        }
    }

    pub fn stored_answer(&self) -> Option<f64> {
        match self {
            DatasetRecord::Solution(r) => r.attempt.answer,
            DatasetRecord::Trajectory(r) => Some(r.trajectory.final_answer),
        }
    }
}

/// Wrapper adding `schema_version` to every persisted line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub schema_version: u32,
    #[serde(flatten)]
    pub record: T,
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&Versioned { schema_version: SCHEMA_VERSION, record: r })
            .expect("records serialise");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Append-only variant used by single-writer stores.
pub fn append_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(&Versioned { schema_version: SCHEMA_VERSION, record: r })
            .expect("records serialise");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads one record per nonblank line. A `schema_version` field, when
/// present, is ignored by the record type.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut value: serde_json::Value = serde_json::from_str(&line).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        if let Some(obj) = value.as_object_mut() {
            obj.remove("schema_version");
        }
        let record = serde_json::from_value(value).map_err(|source| CorpusError::Json {
            path: path.display().to_string(),
            line: i + 1,
            source,
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CorpusError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("serialisable");
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

// ---------------------------------------------------------------------------
// Similarity

const NUMBER_TOKEN: &str = "<num>";

/// Lowercased alphanumeric tokens; any token containing a digit becomes a
/// shared number placeholder.
pub fn masked_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.chars().any(|c| c.is_ascii_digit()) {
                NUMBER_TOKEN.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

pub fn token_frequencies(text: &str) -> BTreeMap<String, f64> {
    let mut freq = BTreeMap::new();
    for t in masked_tokens(text) {
        *freq.entry(t).or_insert(0.0) += 1.0;
    }
    freq
}

fn sparse_cosine(a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> f64 {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let dot: f64 = a.iter().filter_map(|(k, x)| b.get(k).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

/// Cosine similarity of masked token-frequency vectors, in `[0, 1]`.
pub fn text_similarity(a: &str, b: &str) -> f64 {
    sparse_cosine(&token_frequencies(a), &token_frequencies(b))
}

pub const DEFAULT_NOVELTY_THRESHOLD: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Novelty {
    Accept { similarity: f64 },
    Reject { similarity: f64 },
}

impl Novelty {
    pub fn accepted(&self) -> bool {
        matches!(self, Novelty::Accept { .. })
    }

    pub fn similarity(&self) -> f64 {
        match *self {
            Novelty::Accept { similarity } | Novelty::Reject { similarity } => similarity,
        }
    }
}

/// Rejects candidates that are near-copies of their seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoveltyFilter {
    threshold: f64,
}

impl Default for NoveltyFilter {
    fn default() -> Self {
        Self { threshold: DEFAULT_NOVELTY_THRESHOLD }
    }
}

impl NoveltyFilter {
    pub fn new(threshold: f64) -> Result<Self, CorpusError> {
        if threshold > 0.0 && threshold < 1.0 {
            Ok(Self { threshold })
        } else {
            Err(CorpusError::BadThreshold(threshold))
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn check_text(&self, candidate: &str, seed: &str) -> Novelty {
        let similarity = text_similarity(candidate, seed);
        if similarity > self.threshold {
            Novelty::Reject { similarity }
        } else {
            Novelty::Accept { similarity }
        }
    }

    pub fn check(&self, candidate: &ProblemRecord, seed: &ProblemRecord) -> Novelty {
        self.check_text(&candidate.pnl, &seed.pnl)
    }
}

// ---------------------------------------------------------------------------
// SFT assembly

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Standard,
    Reflected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftSample {
    pub id: String,
    pub provenance: Provenance,
    pub kind: SampleKind,
    pub problem: String,
    pub target: String,
}

fn fmt_answer(y: f64) -> String {
    let s = format!("{y}");
    if s.contains('e') {
        format!("{y:.10}")
    } else {
        s
    }
}

fn render_attempt(out: &mut String, attempt: &SolutionAttempt) {
    out.push_str("## Reasoning\n");
    out.push_str(attempt.cot.trim());
    out.push_str("\n\n## Model\n");
    out.push_str(attempt.model_text.trim());
    out.push_str("\n\n## Code\n```");
    out.push_str(attempt.code.fence_language());
    out.push('\n');
    out.push_str(attempt.code.text.trim_end());
    out.push_str("\n```\n");
}

/// Standard target: reasoning, model, code and the final answer line.
pub fn render_standard(attempt: &SolutionAttempt, answer: f64) -> String {
    let mut out = String::new();
    render_attempt(&mut out, attempt);
    out.push_str(&format!("\nFINAL ANSWER: {}\n", fmt_answer(answer)));
    out
}

/// Reflected target: every attempt in order, each later one introduced as a
/// revision of the previous, then the final answer line.
pub fn render_trajectory(trajectory: &Trajectory) -> String {
    let mut out = String::new();
    let last = trajectory.attempts.len().saturating_sub(1);
    for (i, attempt) in trajectory.attempts.iter().enumerate() {
        if i == 0 {
            out.push_str("# Attempt 1\n");
        } else {
            out.push_str(&format!("\n# Reflection and revision {i}\n"));
        }
        render_attempt(&mut out, attempt);
        if i < last {
            let outcome = match attempt.answer {
                Some(y) => format!("produced {}", fmt_answer(y)),
                None => format!("failed with {}", attempt.status),
            };
            out.push_str(&format!("\nResult: this attempt {outcome}, which does not check out.\n"));
        }
    }
    out.push_str(&format!("\nFINAL ANSWER: {}\n", fmt_answer(trajectory.final_answer)));
    out
}

pub fn sample_from_record(record: &DatasetRecord) -> SftSample {
    match record {
        DatasetRecord::Solution(r) => SftSample {
            id: r.id.clone(),
            provenance: r.problem.provenance,
            kind: SampleKind::Standard,
            problem: r.problem.pnl.clone(),
            target: render_standard(&r.attempt, r.attempt.answer.unwrap_or(r.accepted_answer)),
        },
        DatasetRecord::Trajectory(r) => {
            let reflected = r.trajectory.attempts.len() >= 2;
            SftSample {
                id: r.id.clone(),
                provenance: r.problem.provenance,
                kind: if reflected { SampleKind::Reflected } else { SampleKind::Standard },
                problem: r.problem.pnl.clone(),
                target: if reflected {
                    render_trajectory(&r.trajectory)
                } else {
                    render_standard(&r.trajectory.attempts[0], r.trajectory.final_answer)
                },
            }
        }
    }
}

/// Fraction of each source kept, taken from the front in input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mix {
    pub forward: f64,
    pub backward: f64,
    pub reflected: f64,
}

impl Default for Mix {
    fn default() -> Self {
        Self { forward: 1.0, backward: 1.0, reflected: 1.0 }
    }
}

impl Mix {
    fn check(&self) -> Result<(), CorpusError> {
        for (name, f) in [("forward", self.forward), ("backward", self.backward), ("reflected", self.reflected)] {
            if !(f > 0.0 && f <= 1.0) {
                return Err(CorpusError::BadMix(name, f));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftCounts {
    pub forward: usize,
    pub backward: usize,
    pub reflected: usize,
}

impl SftCounts {
    pub fn total(&self) -> usize {
        self.forward + self.backward + self.reflected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub rng_seed: u64,
    pub command: String,
}

impl RunHeader {
    pub fn new(config_hash: impl Into<String>, rng_seed: u64, command: impl Into<String>) -> Self {
        Self {
            tool: "dpgen".into(),
            version: crate::VERSION.into(),
            config_hash: config_hash.into(),
            rng_seed,
            command: command.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftManifest {
    pub schema_version: u32,
    pub header: RunHeader,
    pub mix: Mix,
    pub counts: SftCounts,
    pub total: usize,
}

/// Render every input record into one SFT sample. Forward records count as
/// `forward`; backward single attempts as `backward`; trajectories with two
/// or more attempts as `reflected`.
pub fn assemble_sft(records: &[DatasetRecord], mix: Mix) -> Result<(Vec<SftSample>, SftCounts), CorpusError> {
    mix.check()?;
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let mut forward = Vec::new();
    let mut backward = Vec::new();
    let mut reflected = Vec::new();
    for r in records {
        let sample = sample_from_record(r);
        match (sample.kind, sample.provenance) {
            (SampleKind::Reflected, _) => reflected.push(sample),
            (SampleKind::Standard, Provenance::Forward) => forward.push(sample),
            (SampleKind::Standard, _) => backward.push(sample),
        }
    }
    let keep = |v: &mut Vec<SftSample>, f: f64| {
        let n = (v.len() as f64 * f).ceil() as usize;
        v.truncate(n);
    };
    keep(&mut forward, mix.forward);
    keep(&mut backward, mix.backward);
    keep(&mut reflected, mix.reflected);
    let counts = SftCounts { forward: forward.len(), backward: backward.len(), reflected: reflected.len() };
    let mut all = forward;
    all.extend(backward);
    all.extend(reflected);
    Ok((all, counts))
}

/// Write `sft.jsonl` and `sft_manifest.json` into `dir`.
pub fn write_sft(dir: &Path, samples: &[SftSample], counts: &SftCounts, mix: Mix, header: RunHeader) -> Result<SftManifest, CorpusError> {
    write_jsonl(&dir.join("sft.jsonl"), samples)?;
    let manifest = SftManifest {
        schema_version: SCHEMA_VERSION,
        header,
        mix,
        counts: counts.clone(),
        total: counts.total(),
    };
    write_json(&dir.join("sft_manifest.json"), &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripFailure {
    pub id: String,
    pub stored: Option<f64>,
    pub executed: Option<f64>,
    pub status: ExecStatus,
}

/// Re-execute every record's final code and compare with its stored answer.
/// Returns the failures; an empty vector means the whole file verified.
pub fn verify_round_trip(records: &[DatasetRecord], executor: &Executor, tol: Tolerance) -> Vec<RoundTripFailure> {
    records
        .iter()
        .filter_map(|r| {
            let result = executor.execute(r.final_code());
            let ok = match (r.stored_answer(), result.answer) {
                (Some(stored), Some(_)) => tol.matches_opt(result.answer, stored),
                _ => false,
            };
            (!ok).then(|| RoundTripFailure {
                id: r.id().to_string(),
                stored: r.stored_answer(),
                executed: result.answer,
                status: result.status,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn problem(id: &str, provenance: Provenance) -> ProblemRecord {
        let generated = provenance != Provenance::Seed;
        ProblemRecord {
            id: id.into(),
            pnl: format!("problem {id}"),
            labels: vec![],
            domain_category: Category::ManufacturingAndInventory,
            provenance,
            seed_id: generated.then(|| "seed".into()),
            scenario_id: generated.then(|| "scn".into()),
        }
    }

    fn attempt(answer: Option<f64>, attempt_index: usize) -> SolutionAttempt {
        SolutionAttempt {
            cot: "think".into(),
            model_text: "model".into(),
            code: SolutionCode::spec("{}"),
            answer,
            status: if answer.is_some() { ExecStatus::Ok } else { ExecStatus::InvalidSpec },
            detail: None,
            role_index: 1,
            attempt_index,
        }
    }

    fn solution(id: &str, provenance: Provenance) -> DatasetRecord {
        DatasetRecord::Solution(SolutionRecord {
            id: id.into(),
            problem: problem(id, provenance),
            attempt: attempt(Some(1.0), 0),
            accepted_answer: 1.0,
        })
    }

    fn trajectory(id: &str, len: usize) -> DatasetRecord {
        let mut attempts: Vec<_> = (0..len - 1).map(|i| attempt(None, i)).collect();
        attempts.push(attempt(Some(2.0), len - 1));
        DatasetRecord::Trajectory(TrajectoryRecord {
            id: id.into(),
            problem: problem(id, Provenance::Backward),
            trajectory: Trajectory { problem_id: id.into(), attempts, final_answer: 2.0, recovered: len > 1 },
        })
    }

    #[test]
    fn identical_and_disjoint_texts() {
        assert_eq!(text_similarity("a warehouse holds stock", "a warehouse holds stock"), 1.0);
        assert_eq!(text_similarity("alpha beta", "gamma delta"), 0.0);
        assert_eq!(text_similarity("", ""), 1.0);
        assert_eq!(text_similarity("", "word"), 0.0);
    }

    #[test]
    fn numbers_are_masked() {
        let seed = "A warehouse has an end-of-period capacity of 3 units and a $4 setup cost; discount 0.8.";
        let renumbered = "A warehouse has an end-of-period capacity of 7 units and a $12 setup cost; discount 0.95.";
        assert!((text_similarity(seed, renumbered) - 1.0).abs() < 1e-12);
        let filter = NoveltyFilter::default();
        assert!(!filter.check_text(renumbered, seed).accepted());
    }

    #[test]
    fn punctuation_and_case_are_ignored() {
        assert!((text_similarity("Hello, World!", "hello world") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_bounds() {
        assert!(NoveltyFilter::new(0.0).is_err());
        assert!(NoveltyFilter::new(1.0).is_err());
        assert!(NoveltyFilter::new(0.5).is_ok());
    }

    #[test]
    fn provenance_invariants() {
        assert!(problem("a", Provenance::Seed).check().is_ok());
        assert!(problem("b", Provenance::Forward).check().is_ok());
        let mut bad = problem("c", Provenance::Backward);
        bad.scenario_id = None;
        assert!(bad.check().is_err());
        let mut empty = problem("d", Provenance::Seed);
        empty.pnl = "  ".into();
        assert!(empty.check().is_err());
    }

    #[test]
    fn desk_scale_manifest_counts() {
        let mut records: Vec<_> = (0..7).map(|i| solution(&format!("f{i}"), Provenance::Forward)).collect();
        records.extend((0..3).map(|i| solution(&format!("b{i}"), Provenance::Backward)));
        records.push(trajectory("r0", 3));
        let (samples, counts) = assemble_sft(&records, Mix::default()).unwrap();
        assert_eq!(counts, SftCounts { forward: 7, backward: 3, reflected: 1 });
        assert_eq!(samples.len(), records.len());
        assert_eq!(counts.total(), samples.len());
        let reflected = samples.iter().find(|s| s.id == "r0").unwrap();
        assert_eq!(reflected.kind, SampleKind::Reflected);
        assert!(reflected.target.contains("# Reflection and revision 2"));
        assert!(reflected.target.ends_with("FINAL ANSWER: 2\n"));
    }

    #[test]
    fn single_attempt_trajectory_is_standard() {
        let (samples, counts) = assemble_sft(&[trajectory("t", 1)], Mix::default()).unwrap();
        assert_eq!(samples[0].kind, SampleKind::Standard);
        assert_eq!(counts.backward, 1);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(assemble_sft(&[], Mix::default()), Err(CorpusError::EmptyCorpus)));
    }

    #[test]
    fn mix_truncates_in_order() {
        let records: Vec<_> = (0..4).map(|i| solution(&format!("f{i}"), Provenance::Forward)).collect();
        let (samples, counts) =
            assemble_sft(&records, Mix { forward: 0.5, backward: 1.0, reflected: 1.0 }).unwrap();
        assert_eq!(counts.forward, 2);
        assert_eq!(samples[1].id, "f1");
    }

    #[test]
    fn standard_render_layout() {
        let text = render_standard(&attempt(Some(3.5), 0), 3.5);
        assert_eq!(text, "## Reasoning\nthink\n\n## Model\nmodel\n\n## Code\n```json\n{}\n```\n\nFINAL ANSWER: 3.5\n");
    }

    #[test]
    fn jsonl_round_trip_with_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let records = vec![solution("x", Provenance::Forward), trajectory("y", 2)];
        write_jsonl(&path, &records).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.lines().all(|l| l.starts_with("{\"schema_version\":1,")));
        let back: Vec<DatasetRecord> = read_jsonl(&path).unwrap();
        assert_eq!(back, records);
    }
}
