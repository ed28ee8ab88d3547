//! Solution-first generation: perturb a verified seed model, write a new
//! problem for it, and check that personas recover the known answer,
//! reflecting against the reference when they do not.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rayon::prelude::*;

use crate::corpus::{
    DatasetRecord, ProblemRecord, Provenance, SolutionAttempt, Trajectory, TrajectoryRecord,
};
use crate::forward::{complete_attempt, pool, screen, Screen, solve_dp, PipelineConfig, PipelineError, Rejection, SolverContext};
use crate::llm::LlmError;
use crate::mdp::{solve, validate_spec, CodeKind, DPSpec, Horizon, Initial, SolutionCode};
use crate::prompts;
use crate::retrieval::LabeledExample;
use crate::scenario::{pair, Scenario};
use crate::Tolerance;

pub const PERTURB_RETRIES: u32 = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardJitter {
    /// Multiplier drawn from `U(lo, hi)`.
    pub scale: (f64, f64),
    /// Shift `U(-1, 1) * shift * mean |reward|`.
    pub shift: f64,
}

/// Which problem data to perturb and how far. `None` leaves a field alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    pub rewards: Option<RewardJitter>,
    /// Dirichlet concentration; larger means closer to the original row.
    pub transitions: Option<f64>,
    /// Relative change of `T`, e.g. 0.5 for +-50%.
    pub horizon: Option<f64>,
    /// Additive jitter of gamma, result clamped to [0.05, 0.95].
    pub gamma: Option<f64>,
    pub initial_state: bool,
    pub seed: u64,
}

impl Default for PerturbationPlan {
    fn default() -> Self {
        Self {
            rewards: Some(RewardJitter { scale: (0.5, 2.0), shift: 1.0 }),
            transitions: Some(50.0),
            horizon: Some(0.5),
            gamma: Some(0.2),
            initial_state: false,
            seed: 0,
        }
    }
}

impl PerturbationPlan {
    pub fn identity() -> Self {
        Self { rewards: None, transitions: None, horizon: None, gamma: None, initial_state: false, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PerturbError {
    #[error("seed spec is invalid: {0}")]
    InvalidSeed(String),
    #[error("no valid perturbation after {attempts} draws: {last}")]
    InvalidAfterPerturb { attempts: u32, last: String },
}

fn jitter_rows(spec: &mut DPSpec, concentration: f64, rng: &mut ChaCha8Rng) {
    for row in &mut spec.transitions {
        let support: Vec<(String, f64)> = row.next.iter().filter(|(_, &p)| p > 0.0).map(|(k, &p)| (k.clone(), p)).collect();
        if support.len() < 2 {
            continue;
        }
        let total: f64 = support.iter().map(|(_, p)| p).sum();
        let draws: Vec<f64> = support
            .iter()
            .map(|(_, p)| {
                let shape = (concentration * p / total).max(1e-3);
                Gamma::new(shape, 1.0).expect("positive shape").sample(rng).max(1e-12)
            })
            .collect();
        let sum: f64 = draws.iter().sum();
        for ((state, _), d) in support.iter().zip(draws) {
            row.next.insert(state.clone(), d / sum);
        }
    }
}

fn apply_once(spec: &DPSpec, plan: &PerturbationPlan, rng: &mut ChaCha8Rng) -> DPSpec {
    let mut out = spec.clone();
    if let Some(j) = plan.rewards {
        let mags: Vec<f64> = out.rewards.iter().map(|r| r.reward.abs()).chain(out.terminal_rewards.values().map(|v| v.abs())).collect();
        let mean = if mags.is_empty() { 1.0 } else { mags.iter().sum::<f64>() / mags.len() as f64 };
        let scale = if mean > 0.0 { mean } else { 1.0 };
        let mut draw = |x: f64| {
            let m = if j.scale.0 < j.scale.1 { rng.random_range(j.scale.0..j.scale.1) } else { j.scale.0 };
            let s = if j.shift > 0.0 { rng.random_range(-1.0..1.0) * j.shift * scale } else { 0.0 };
            x * m + s
        };
        for r in &mut out.rewards {
            r.reward = draw(r.reward);
        }
        for v in out.terminal_rewards.values_mut() {
            *v = draw(*v);
        }
    }
    if let Some(c) = plan.transitions {
        jitter_rows(&mut out, c, rng);
    }
    match (&mut out.horizon, plan.horizon, plan.gamma) {
        (Horizon::Finite { periods }, Some(frac), _) if frac > 0.0 => {
            let epoch_indexed = !spec.epoch_actions.is_empty()
                || spec.transitions.iter().any(|t| t.epoch.is_some())
                || spec.rewards.iter().any(|r| r.epoch.is_some());
            if !epoch_indexed && *periods >= 2 {
                let factor = 1.0 + rng.random_range(-frac..frac);
                *periods = ((*periods as f64 * factor).round() as u32).max(2);
            }
        }
        (Horizon::Discounted { gamma }, _, Some(m)) if m > 0.0 => {
            *gamma = (*gamma + rng.random_range(-m..m)).clamp(0.05, 0.95);
        }
        _ => {}
    }
    if plan.initial_state {
        if let Initial::State(_) = out.initial {
            let i = rng.random_range(0..out.states.len());
            out.initial = Initial::State(out.states[i].clone());
        }
    }
    out
}

/// Perturbs the numeric data of a valid spec while keeping state ids,
/// action sets and transition supports. Retries with fresh draws when a
/// result fails validation.
pub fn perturb(spec: &DPSpec, plan: &PerturbationPlan) -> Result<DPSpec, PerturbError> {
    validate_spec(spec).map_err(|e| PerturbError::InvalidSeed(e.to_string()))?;
    let mut last = String::new();
    for attempt in 0..PERTURB_RETRIES {
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed.wrapping_add(attempt as u64));
        let candidate = apply_once(spec, plan, &mut rng);
        match validate_spec(&candidate) {
            Ok(_) => return Ok(candidate),
            Err(e) => last = e.to_string(),
        }
    }
    Err(PerturbError::InvalidAfterPerturb { attempts: PERTURB_RETRIES, last })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum CodeRejection {
    Invalid { detail: String },
    Degenerate { detail: String },
    Unsolvable { detail: String },
}

/// The code-level filter: valid, not degenerate, finite answer.
pub fn code_filter(spec: &DPSpec) -> Result<f64, CodeRejection> {
    let v = validate_spec(spec).map_err(|e| CodeRejection::Invalid { detail: e.to_string() })?;
    if let Some(detail) = v.degeneracy() {
        return Err(CodeRejection::Degenerate { detail });
    }
    match solve(&v) {
        Ok(o) if o.value.is_finite() => Ok(o.value),
        Ok(o) => Err(CodeRejection::Unsolvable { detail: format!("non-finite answer {}", o.value) }),
        Err(e) => Err(CodeRejection::Unsolvable { detail: e.to_string() }),
    }
}

pub fn backward_problem_id(seed_id: &str, scenario_id: &str, repeat: usize) -> String {
    format!("bwd-{seed_id}-{scenario_id}-r{repeat}")
}

/// Writes a problem for `code`; screened for novelty against the seed's
/// text and for validity.
pub fn synthesize_problem(
    ctx: &SolverContext<'_>,
    gate: Screen<'_>,
    seed: &ProblemRecord,
    code: &SolutionCode,
    scenario: &Scenario,
    repeat: usize,
) -> Result<Result<ProblemRecord, Rejection>, LlmError> {
    let nonce = format!("r{repeat}");
    let text = ctx.gateway.chat(prompts::backward_problem(code, scenario), Some(&nonce))?;
    let text = text.trim().to_string();
    if let Some(r) = screen(ctx.gateway, gate, &text, &seed.pnl)? {
        return Ok(Err(r));
    }
    Ok(Ok(ProblemRecord {
        id: backward_problem_id(&seed.id, &scenario.id, repeat),
        pnl: text,
        labels: seed.labels.clone(),
        domain_category: scenario.category,
        provenance: Provenance::Backward,
        seed_id: Some(seed.id.clone()),
        scenario_id: Some(scenario.id.clone()),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verification {
    /// Every persona whose first attempt matched, each as a one-attempt trajectory.
    FirstTry(Vec<Trajectory>),
    Recovered(Trajectory),
    /// Per-persona attempt sequences kept for diagnosis.
    Rejected(Vec<Vec<SolutionAttempt>>),
}

/// All personas try once; on total failure each persona in turn reflects
/// against the reference for up to `max_reflections` rounds and the first
/// to match is kept.
pub fn verify_and_recover(
    ctx: &SolverContext<'_>,
    problem: &ProblemRecord,
    examples: &[&LabeledExample],
    reference: &SolutionCode,
    y_star: f64,
    max_reflections: usize,
    tol: Tolerance,
) -> Result<Verification, LlmError> {
    let mut first = Vec::with_capacity(ctx.personas.len());
    for persona in ctx.personas {
        first.push(solve_dp(ctx, problem, examples, persona)?);
    }
    let matches: Vec<Trajectory> = first
        .iter()
        .filter(|a| tol.matches_opt(a.answer, y_star))
        .map(|a| Trajectory { problem_id: problem.id.clone(), attempts: vec![a.clone()], final_answer: y_star, recovered: false })
        .collect();
    if !matches.is_empty() {
        return Ok(Verification::FirstTry(matches));
    }

    let mut archive = Vec::with_capacity(ctx.personas.len());
    for (persona, a0) in ctx.personas.iter().zip(first) {
        let mut attempts = vec![a0];
        for round in 1..=max_reflections {
            let last = attempts.last().expect("nonempty");
            let cot = ctx
                .gateway
                .chat(prompts::reflection(persona, &problem.pnl, last, reference, round, max_reflections), None)?;
            let attempt = complete_attempt(ctx, &problem.pnl, examples, persona, cot, round)?;
            let hit = tol.matches_opt(attempt.answer, y_star);
            attempts.push(attempt);
            if hit {
                return Ok(Verification::Recovered(Trajectory {
                    problem_id: problem.id.clone(),
                    attempts,
                    final_answer: y_star,
                    recovered: true,
                }));
            }
        }
        archive.push(attempts);
    }
    Ok(Verification::Rejected(archive))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub tasks: usize,
    pub seeds_without_spec: usize,
    pub filtered_perturbation: usize,
    pub filtered_code: usize,
    pub rejected_similarity: usize,
    pub rejected_validity: usize,
    pub provider_failures: usize,
    /// Problems that reached verification.
    pub problems: usize,
    pub first_try: usize,
    pub recovered: usize,
    pub rejected: usize,
    pub standard_records: usize,
    pub reflected_records: usize,
    /// recovered / (recovered + rejected).
    pub recovered_among_failed: f64,
    /// rejected / (recovered + rejected).
    pub never_recovered_among_failed: f64,
    /// recovered / problems.
    pub recovered_share_of_problems: f64,
    /// reflected records / all emitted records.
    pub recovered_share_of_samples: f64,
    pub errors: Vec<String>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

impl RecoveryReport {
    fn absorb(&mut self, o: RecoveryReport) {
        self.tasks += o.tasks;
        self.seeds_without_spec += o.seeds_without_spec;
        self.filtered_perturbation += o.filtered_perturbation;
        self.filtered_code += o.filtered_code;
        self.rejected_similarity += o.rejected_similarity;
        self.rejected_validity += o.rejected_validity;
        self.provider_failures += o.provider_failures;
        self.problems += o.problems;
        self.first_try += o.first_try;
        self.recovered += o.recovered;
        self.rejected += o.rejected;
        self.standard_records += o.standard_records;
        self.reflected_records += o.reflected_records;
        self.errors.extend(o.errors);
    }

    pub fn finalize(&mut self) {
        let failed = self.recovered + self.rejected;
        self.recovered_among_failed = ratio(self.recovered, failed);
        self.never_recovered_among_failed = ratio(self.rejected, failed);
        self.recovered_share_of_problems = ratio(self.recovered, self.problems);
        self.recovered_share_of_samples = ratio(self.reflected_records, self.standard_records + self.reflected_records);
    }

    /// Outcome counts partition the verified problems.
    pub fn is_consistent(&self) -> bool {
        self.first_try + self.recovered + self.rejected == self.problems
            && self.tasks
                == self.seeds_without_spec
                    + self.filtered_perturbation
                    + self.filtered_code
                    + self.rejected_similarity
                    + self.rejected_validity
                    + self.provider_failures
                    + self.problems
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BackwardOutput {
    pub records: Vec<DatasetRecord>,
    pub rejected: Vec<(String, Vec<Vec<SolutionAttempt>>)>,
    pub report: RecoveryReport,
}

struct TaskOutput {
    records: Vec<DatasetRecord>,
    rejected: Option<(String, Vec<Vec<SolutionAttempt>>)>,
    report: RecoveryReport,
}

fn task_seed(rng_seed: u64, id: &str) -> u64 {
    let d = Sha256::digest(format!("{rng_seed}:{id}").as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[allow(clippy::too_many_arguments)]
fn backward_task(
    ctx: &SolverContext<'_>,
    cfg: &PipelineConfig,
    plan: &PerturbationPlan,
    gate: Screen<'_>,
    seed: &LabeledExample,
    scenario: &Scenario,
    repeat: usize,
) -> Result<TaskOutput, LlmError> {
    let mut report = RecoveryReport { tasks: 1, ..Default::default() };
    let done = |report| Ok(TaskOutput { records: Vec::new(), rejected: None, report });
    let id = backward_problem_id(seed.id(), &scenario.id, repeat);
    let seed_spec = match (seed.code.kind, DPSpec::from_json(&seed.code.text)) {
        (CodeKind::Spec, Ok(s)) => s,
        _ => {
            report.seeds_without_spec += 1;
            return done(report);
        }
    };
    let perturbed = match perturb(&seed_spec, &plan.with_seed(task_seed(cfg.rng_seed, &id))) {
        Ok(s) => s,
        Err(_) => {
            report.filtered_perturbation += 1;
            return done(report);
        }
    };
    let y_star = match code_filter(&perturbed) {
        Ok(y) => y,
        Err(_) => {
            report.filtered_code += 1;
            return done(report);
        }
    };
    let reference = SolutionCode::from_spec(&perturbed);
    let problem = match synthesize_problem(ctx, gate, &seed.problem, &reference, scenario, repeat)? {
        Ok(p) => p,
        Err(Rejection::Similarity { .. }) => {
            report.rejected_similarity += 1;
            return done(report);
        }
        Err(Rejection::Validity { .. }) => {
            report.rejected_validity += 1;
            return done(report);
        }
    };
    let examples = ctx
        .store
        .retrieve_where(&problem.pnl, &problem.labels, None, cfg.few_shot, |e| e.id() != seed.id())
        .unwrap_or_default();
    report.problems = 1;
    let verification = verify_and_recover(ctx, &problem, &examples, &reference, y_star, cfg.max_reflections, cfg.tolerance)?;
    let mut records = Vec::new();
    let mut rejected = None;
    match verification {
        Verification::FirstTry(trajectories) => {
            report.first_try = 1;
            for t in trajectories {
                records.push(DatasetRecord::Trajectory(TrajectoryRecord {
                    id: format!("{}-k{}", problem.id, t.attempts[0].role_index),
                    problem: problem.clone(),
                    trajectory: t,
                }));
            }
            report.standard_records = records.len();
        }
        Verification::Recovered(t) => {
            report.recovered = 1;
            report.reflected_records = 1;
            records.push(DatasetRecord::Trajectory(TrajectoryRecord {
                id: format!("{}-k{}-reflected", problem.id, t.attempts[0].role_index),
                problem: problem.clone(),
                trajectory: t,
            }));
        }
        Verification::Rejected(archive) => {
            report.rejected = 1;
            rejected = Some((problem.id.clone(), archive));
        }
    }
    Ok(TaskOutput { records, rejected, report })
}

/// Runs every (seed, scenario, repeat) task; output order follows task order.
pub fn run_backward(
    ctx: &SolverContext<'_>,
    seeds: &[LabeledExample],
    scenarios: &[Scenario],
    cfg: &PipelineConfig,
    plan: &PerturbationPlan,
) -> Result<BackwardOutput, PipelineError> {
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
                let id = backward_problem_id(seeds[i].id(), &scenarios[j].id, r);
                (id, backward_task(ctx, cfg, plan, gate, &seeds[i], &scenarios[j], r))
            })
            .collect()
    });
    let mut out = BackwardOutput::default();
    for (id, result) in results {
        match result {
            Ok(t) => {
                out.records.extend(t.records);
                out.rejected.extend(t.rejected);
                out.report.absorb(t.report);
            }
            Err(e) => {
                out.report.tasks += 1;
                out.report.provider_failures += 1;
                out.report.errors.push(format!("{id}: {e}"));
            }
        }
    }
    out.report.finalize();
    Ok(out)
}
