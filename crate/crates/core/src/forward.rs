//! Problem-first generation: rewrite a seed into a new scenario, solve it
//! with several personas, and keep the solutions that agree with the
//! majority.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::align::SampledProblem;
use crate::config::AppConfig;
use crate::corpus::{DatasetRecord, NoveltyFilter, ProblemRecord, Provenance, SolutionAttempt, SolutionRecord};
use crate::llm::{Gateway, LlmError, Persona};
use crate::mdp::{ExecStatus, Executor};
use crate::prompts;
use crate::retrieval::{assign_labels, ExampleStore, LabeledExample};
use crate::scenario::{pair, Pairing, Scenario};
use crate::Tolerance;

/// Everything a solve step needs, shared read-only across workers.
#[derive(Clone, Copy)]
pub struct SolverContext<'a> {
    pub gateway: &'a Gateway,
    pub store: &'a ExampleStore,
    pub personas: &'a [Persona],
    pub executor: &'a Executor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub repeats: usize,
    pub max_reflections: usize,
    pub novelty_threshold: f64,
    pub workers: usize,
    pub few_shot: usize,
    pub tolerance: Tolerance,
    pub pairing: Pairing,
    pub rng_seed: u64,
    pub validity_prompt: String,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_app(&AppConfig::default())
    }
}

impl PipelineConfig {
    pub fn from_app(cfg: &AppConfig) -> Self {
        let p = &cfg.pipeline;
        Self {
            repeats: p.repeats,
            max_reflections: p.max_reflections,
            novelty_threshold: p.novelty_threshold,
            workers: p.workers,
            few_shot: p.few_shot,
            tolerance: cfg.tolerance,
            pairing: p.pairing,
            rng_seed: cfg.rng_seed,
            validity_prompt: p.validity_prompt.clone(),
        }
    }

    pub fn check(&self, personas: usize) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::Config(m.to_string()));
        if personas < 2 {
            return bad("at least two personas are needed for a majority vote");
        }
        if self.repeats < 1 || self.max_reflections < 1 || self.workers < 1 || self.few_shot < 1 {
            return bad("repeats, max_reflections, workers and few_shot must all be >= 1");
        }
        NoveltyFilter::new(self.novelty_threshold).map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.validity_prompt.trim().is_empty() {
            return bad("validity_prompt must not be empty");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("pipeline configuration: {0}")]
    Config(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

pub(crate) fn pool(workers: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| PipelineError::Pool(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Rejection {
    Similarity { similarity: f64 },
    Validity { verdict: String },
}

/// Novelty threshold plus the validity judge's system prompt.
#[derive(Debug, Clone, Copy)]
pub struct Screen<'a> {
    pub novelty: NoveltyFilter,
    pub validity_prompt: &'a str,
}

impl<'a> Screen<'a> {
    pub fn from_config(cfg: &'a PipelineConfig) -> Result<Self, PipelineError> {
        let novelty = NoveltyFilter::new(cfg.novelty_threshold).map_err(|e| PipelineError::Config(e.to_string()))?;
        Ok(Self { novelty, validity_prompt: &cfg.validity_prompt })
    }
}

/// Novelty filter then LLM validity check.
pub(crate) fn screen(gateway: &Gateway, gate: Screen<'_>, candidate: &str, seed: &str) -> Result<Option<Rejection>, LlmError> {
    let novelty = gate.novelty.check_text(candidate, seed);
    if !novelty.accepted() {
        return Ok(Some(Rejection::Similarity { similarity: novelty.similarity() }));
    }
    let verdict = gateway.chat(prompts::validity_check(gate.validity_prompt, candidate), None)?;
    if prompts::parse_verdict(&verdict) {
        Ok(None)
    } else {
        Ok(Some(Rejection::Validity { verdict: verdict.lines().next().unwrap_or("").trim().to_string() }))
    }
}

pub fn forward_problem_id(seed_id: &str, scenario_id: &str, repeat: usize) -> String {
    format!("fwd-{seed_id}-{scenario_id}-r{repeat}")
}

/// Rewrites a seed into a scenario; the repeat index is the sampling nonce.
pub fn rewrite_problem(
    gateway: &Gateway,
    gate: Screen<'_>,
    seed: &ProblemRecord,
    scenario: &Scenario,
    repeat: usize,
) -> Result<Result<ProblemRecord, Rejection>, LlmError> {
    let nonce = format!("r{repeat}");
    let text = gateway.chat(prompts::rewrite_problem(&seed.pnl, scenario), Some(&nonce))?;
    let text = text.trim().to_string();
    if let Some(rejection) = screen(gateway, gate, &text, &seed.pnl)? {
        return Ok(Err(rejection));
    }
    Ok(Ok(ProblemRecord {
        id: forward_problem_id(&seed.id, &scenario.id, repeat),
        pnl: text,
        labels: Vec::new(),
        domain_category: scenario.category,
        provenance: Provenance::Forward,
        seed_id: Some(seed.id.clone()),
        scenario_id: Some(scenario.id.clone()),
    }))
}

/// Model and code steps after a reasoning text, then execution.
pub(crate) fn complete_attempt(
    ctx: &SolverContext<'_>,
    pnl: &str,
    examples: &[&LabeledExample],
    persona: &Persona,
    cot: String,
    attempt_index: usize,
) -> Result<SolutionAttempt, LlmError> {
    let model_text = ctx.gateway.chat(prompts::model(persona, pnl, &cot, examples), None)?;
    let code_text = ctx.gateway.chat(prompts::code(persona, pnl, &cot, &model_text, examples), None)?;
    let code = prompts::extract_code(&code_text);
    let result = ctx.executor.execute(&code);
    Ok(SolutionAttempt {
        cot,
        model_text,
        code,
        answer: result.answer,
        status: result.status,
        detail: result.detail,
        role_index: persona.index,
        attempt_index,
    })
}

/// Chain of thought, model, code, execute. Content failures produce a
/// null-answer attempt, never an error.
pub fn solve_dp(
    ctx: &SolverContext<'_>,
    problem: &ProblemRecord,
    examples: &[&LabeledExample],
    persona: &Persona,
) -> Result<SolutionAttempt, LlmError> {
    let cot = ctx.gateway.chat(prompts::chain_of_thought(persona, &problem.pnl, examples), None)?;
    complete_attempt(ctx, &problem.pnl, examples, persona, cot, 0)
}

#[derive(Debug, thiserror::Error)]
pub enum RefineError {
    #[error("refinement requires a failed attempt with a repairable status, got {0}")]
    Precondition(ExecStatus),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

pub fn is_refinable(status: ExecStatus) -> bool {
    matches!(
        status,
        ExecStatus::InvalidSpec | ExecStatus::RuntimeError | ExecStatus::ParseError | ExecStatus::NonNumericOutput
    )
}

/// One repair prompt and re-execution.
pub fn refine_code(
    ctx: &SolverContext<'_>,
    problem: &ProblemRecord,
    attempt: &SolutionAttempt,
    persona: &Persona,
) -> Result<SolutionAttempt, RefineError> {
    if attempt.answer.is_some() || !is_refinable(attempt.status) {
        return Err(RefineError::Precondition(attempt.status));
    }
    let text = ctx.gateway.chat(prompts::refine_code(persona, &problem.pnl, attempt), None)?;
    let code = prompts::extract_code(&text);
    let result = ctx.executor.execute(&code);
    Ok(SolutionAttempt {
        code,
        answer: result.answer,
        status: result.status,
        detail: result.detail,
        attempt_index: attempt.attempt_index + 1,
        ..attempt.clone()
    })
}

/// Groups answers by tolerant equality against each cluster's first-seen
/// value. Returns (representative, size) in first-seen order.
pub fn answer_clusters(answers: &[Option<f64>], tol: Tolerance) -> Vec<(f64, usize)> {
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for a in answers.iter().flatten() {
        match clusters.iter_mut().find(|(rep, _)| tol.matches(*rep, *a)) {
            Some(c) => c.1 += 1,
            None if a.is_finite() => clusters.push((*a, 1)),
            None => {}
        }
    }
    clusters
}

/// Representative of the strictly largest cluster; `None` on a tie for
/// largest or when no answer is present.
pub fn majority_vote(answers: &[Option<f64>], tol: Tolerance) -> Option<f64> {
    let clusters = answers_sorted_by_size(answer_clusters(answers, tol));
    match clusters.as_slice() {
        [] => None,
        [(rep, _)] => Some(*rep),
        [(rep, a), (_, b), ..] if a > b => Some(*rep),
        _ => None,
    }
}

fn answers_sorted_by_size(mut clusters: Vec<(f64, usize)>) -> Vec<(f64, usize)> {
    // Stable: equal sizes keep first-seen order.
    clusters.sort_by(|x, y| y.1.cmp(&x.1));
    clusters
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ForwardStats {
    pub tasks: usize,
    pub rejected_similarity: usize,
    pub rejected_validity: usize,
    pub provider_failures: usize,
    pub problems_solved: usize,
    pub attempts: usize,
    pub attempts_failed_initially: usize,
    pub refinements: usize,
    pub refinement_successes: usize,
    pub no_consensus: usize,
    pub accepted_problems: usize,
    pub records_emitted: usize,
    /// Size of the largest agreeing cluster -> number of problems.
    pub agreement_histogram: BTreeMap<usize, usize>,
    pub errors: Vec<String>,
}

impl ForwardStats {
    fn absorb(&mut self, other: ForwardStats) {
        self.tasks += other.tasks;
        self.rejected_similarity += other.rejected_similarity;
        self.rejected_validity += other.rejected_validity;
        self.provider_failures += other.provider_failures;
        self.problems_solved += other.problems_solved;
        self.attempts += other.attempts;
        self.attempts_failed_initially += other.attempts_failed_initially;
        self.refinements += other.refinements;
        self.refinement_successes += other.refinement_successes;
        self.no_consensus += other.no_consensus;
        self.accepted_problems += other.accepted_problems;
        self.records_emitted += other.records_emitted;
        for (k, v) in other.agreement_histogram {
            *self.agreement_histogram.entry(k).or_insert(0) += v;
        }
        self.errors.extend(other.errors);
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardOutput {
    pub records: Vec<DatasetRecord>,
    /// Every attempt on every consensus problem, for preference building.
    pub sampled: Vec<SampledProblem>,
    pub stats: ForwardStats,
}

struct TaskOutput {
    records: Vec<DatasetRecord>,
    sampled: Option<SampledProblem>,
    stats: ForwardStats,
}

fn forward_task(
    ctx: &SolverContext<'_>,
    cfg: &PipelineConfig,
    gate: Screen<'_>,
    seed: &LabeledExample,
    scenario: &Scenario,
    repeat: usize,
) -> Result<TaskOutput, LlmError> {
    let mut stats = ForwardStats { tasks: 1, ..Default::default() };
    let mut problem = match rewrite_problem(ctx.gateway, gate, &seed.problem, scenario, repeat)? {
        Ok(p) => p,
        Err(r) => {
            match r {
                Rejection::Similarity { .. } => stats.rejected_similarity += 1,
                Rejection::Validity { .. } => stats.rejected_validity += 1,
            }
            return Ok(TaskOutput { records: Vec::new(), sampled: None, stats });
        }
    };
    problem.labels = assign_labels(ctx.gateway, &problem.pnl)?;
    let examples = ctx
        .store
        .retrieve_where(&problem.pnl, &problem.labels, None, cfg.few_shot, |e| e.id() != seed.id())
        .unwrap_or_default();
    stats.problems_solved = 1;

    let mut attempts = Vec::with_capacity(ctx.personas.len());
    for persona in ctx.personas {
        let mut attempt = solve_dp(ctx, &problem, &examples, persona)?;
        stats.attempts += 1;
        if attempt.answer.is_none() {
            stats.attempts_failed_initially += 1;
            if is_refinable(attempt.status) {
                stats.refinements += 1;
                attempt = match refine_code(ctx, &problem, &attempt, persona) {
                    Ok(a) => a,
                    Err(RefineError::Llm(e)) => return Err(e),
                    Err(RefineError::Precondition(_)) => unreachable!("checked refinable"),
                };
                if attempt.answer.is_some() {
                    stats.refinement_successes += 1;
                }
            }
        }
        attempts.push(attempt);
    }

    let answers: Vec<Option<f64>> = attempts.iter().map(|a| a.answer).collect();
    let largest = answer_clusters(&answers, cfg.tolerance).iter().map(|c| c.1).max().unwrap_or(0);
    *stats.agreement_histogram.entry(largest).or_insert(0) += 1;
    let Some(consensus) = majority_vote(&answers, cfg.tolerance) else {
        stats.no_consensus += 1;
        return Ok(TaskOutput { records: Vec::new(), sampled: None, stats });
    };
    stats.accepted_problems = 1;
    let records: Vec<DatasetRecord> = attempts
        .iter()
        .filter(|a| cfg.tolerance.matches_opt(a.answer, consensus))
        .map(|a| {
            DatasetRecord::Solution(SolutionRecord {
                id: format!("{}-k{}", problem.id, a.role_index),
                problem: problem.clone(),
                attempt: a.clone(),
                accepted_answer: consensus,
            })
        })
        .collect();
    stats.records_emitted = records.len();
    let sampled = SampledProblem {
        problem_id: problem.id.clone(),
        prompt: problem.pnl.clone(),
        ground_truth: consensus,
        attempts,
    };
    Ok(TaskOutput { records, sampled: Some(sampled), stats })
}

/// Runs every (seed, scenario, repeat) task on a pool of `cfg.workers`
/// threads. Output order follows task order, so results are reproducible.
pub fn run_forward(
    ctx: &SolverContext<'_>,
    seeds: &[LabeledExample],
    scenarios: &[Scenario],
    cfg: &PipelineConfig,
) -> Result<ForwardOutput, PipelineError> {
    cfg.check(ctx.personas.len())?;
    let gate = Screen::from_config(cfg)?;
    let categories: Vec<_> = seeds.iter().map(|s| s.problem.domain_category).collect();
    let tasks: Vec<(usize, usize, usize)> = pair(&categories, scenarios, cfg.pairing, cfg.rng_seed)
        .into_iter()
        .flat_map(|(i, j)| (0..cfg.repeats).map(move |r| (i, j, r)))
        .collect();
    let results: Vec<(String, Result<TaskOutput, LlmError>)> = pool(cfg.workers)?.install(|| {
        tasks
            .par_iter()
            .map(|&(i, j, r)| {
                let id = forward_problem_id(seeds[i].id(), &scenarios[j].id, r);
                (id, forward_task(ctx, cfg, gate, &seeds[i], &scenarios[j], r))
            })
            .collect()
    });
    let mut out = ForwardOutput::default();
    for (id, result) in results {
        match result {
            Ok(task) => {
                out.records.extend(task.records);
                out.sampled.extend(task.sampled);
                out.stats.absorb(task.stats);
            }
            Err(e) => {
                out.stats.tasks += 1;
                out.stats.provider_failures += 1;
                out.stats.errors.push(format!("{id}: {e}"));
            }
        }
    }
    Ok(out)
}
