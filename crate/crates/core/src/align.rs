//! Reward shaping, group-relative advantages, the clipped surrogate, the
//! pairwise preference loss, and the preference and RL dataset builders.
//! Pure functions only; nothing here trains a model.

use serde::{Deserialize, Serialize};

use crate::corpus::{render_standard, DatasetRecord, Provenance, SolutionAttempt};
use crate::mdp::{ExecStatus, ExecutionResult, Executor, SolutionCode};
use crate::retrieval::LabeledExample;
use crate::{Tolerance, SCHEMA_VERSION};

pub const FORMAT_REWARD: f64 = 0.2;
pub const ANSWER_REWARD: f64 = 0.8;
/// KL penalty coefficient of the group-relative objective.
pub const KL_COEFFICIENT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_reward: f64,
    pub answer_reward: f64,
    pub total: f64,
}

/// Format credit for any successful execution, answer credit for a match.
pub fn compute_reward(execution: &ExecutionResult, ground_truth: f64, tol: Tolerance) -> RewardBreakdown {
    let executable = execution.status == ExecStatus::Ok && execution.answer.is_some();
    let correct = executable && tol.matches_opt(execution.answer, ground_truth);
    let format_reward = if executable { FORMAT_REWARD } else { 0.0 };
    let answer_reward = if correct { ANSWER_REWARD } else { 0.0 };
    // Correct implies executable, so a lone answer reward cannot occur.
    debug_assert!(!(answer_reward > 0.0 && format_reward == 0.0));
    RewardBreakdown { format_reward, answer_reward, total: format_reward + answer_reward }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvantageVector {
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AlignError {
    #[error("group needs at least 2 rewards, got {0}")]
    GroupTooSmall(usize),
    #[error("record {id} failed verification: stored {stored:?}, executed {executed:?} ({status})")]
    VerificationFailure { id: String, stored: Option<f64>, executed: Option<f64>, status: ExecStatus },
    #[error("nothing to build: inputs are empty")]
    Empty,
}

/// `(r_i - mean) / std` with the population standard deviation; a group
/// with no spread gets all-zero advantages.
pub fn grpo_advantages(rewards: &[f64]) -> Result<AdvantageVector, AlignError> {
    let k = rewards.len();
    if k < 2 {
        return Err(AlignError::GroupTooSmall(k));
    }
    let n = k as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let advantages = if std > 0.0 { rewards.iter().map(|r| (r - mean) / std).collect() } else { vec![0.0; k] };
    Ok(AdvantageVector { rewards: rewards.to_vec(), advantages })
}

/// `min(ratio * A, clip(ratio, 1-eps, 1+eps) * A)`.
pub fn grpo_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// Per-token KL estimate `pi_ref/pi - log(pi_ref/pi) - 1` from caller
/// supplied log-probabilities, scaled by `beta`. Always nonnegative.
pub fn kl_penalty(logp_policy: f64, logp_ref: f64, beta: f64) -> f64 {
    let d = logp_ref - logp_policy;
    beta * (d.exp() - d - 1.0)
}

/// `-log(sigmoid(x))`, stable for large |x|.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Preference loss with reference-relative log-ratios. Passing zero for
/// both reference log-probabilities gives the reference-free form.
pub fn dpo_loss(
    logp_policy_chosen: f64,
    logp_policy_rejected: f64,
    logp_ref_chosen: f64,
    logp_ref_rejected: f64,
    beta: f64,
) -> f64 {
    let margin = (logp_policy_chosen - logp_ref_chosen) - (logp_policy_rejected - logp_ref_rejected);
    neg_log_sigmoid(beta * margin)
}

/// A problem with several sampled attempts and its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledProblem {
    pub problem_id: String,
    pub prompt: String,
    pub ground_truth: f64,
    pub attempts: Vec<SolutionAttempt>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub problem_id: String,
    pub chosen_answer: Option<f64>,
    pub rejected_answer: Option<f64>,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub meta: PairMeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    #[default]
    FirstPair,
    AllPairs,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairStats {
    pub problems: usize,
    pub pairs: usize,
    pub skipped_all_correct: usize,
    pub skipped_all_incorrect: usize,
}

/// Attempt text as seen by a preference trainer.
pub fn render_attempt(attempt: &SolutionAttempt) -> String {
    match attempt.answer {
        Some(y) => render_standard(attempt, y),
        None => {
            let s = render_standard(attempt, 0.0);
            let cut = s.rfind("\nFINAL ANSWER:").unwrap_or(s.len());
            format!("{}\nFINAL ANSWER: none\n", &s[..cut])
        }
    }
}

/// Pairs correct with incorrect attempts by answer correctness alone.
pub fn build_preference_pairs(problems: &[SampledProblem], mode: PairMode, tol: Tolerance) -> (Vec<PreferencePair>, PairStats) {
    let mut stats = PairStats::default();
    let mut pairs = Vec::new();
    for p in problems {
        stats.problems += 1;
        let (good, bad): (Vec<&SolutionAttempt>, Vec<&SolutionAttempt>) =
            p.attempts.iter().partition(|a| tol.matches_opt(a.answer, p.ground_truth));
        if bad.is_empty() {
            stats.skipped_all_correct += 1;
            continue;
        }
        if good.is_empty() {
            stats.skipped_all_incorrect += 1;
            continue;
        }
        let combos: Vec<(&SolutionAttempt, &SolutionAttempt)> = match mode {
            PairMode::FirstPair => vec![(good[0], bad[0])],
            PairMode::AllPairs => good.iter().flat_map(|g| bad.iter().map(move |b| (*g, *b))).collect(),
        };
        for (g, b) in combos {
            pairs.push(PreferencePair {
                prompt: p.prompt.clone(),
                chosen: render_attempt(g),
                rejected: render_attempt(b),
                meta: PairMeta {
                    problem_id: p.problem_id.clone(),
                    chosen_answer: g.answer,
                    rejected_answer: b.answer,
                    ground_truth: p.ground_truth,
                },
            });
        }
    }
    stats.pairs = pairs.len();
    (pairs, stats)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlItem {
    pub id: String,
    pub prompt: String,
    pub ground_truth: f64,
    pub provenance: Provenance,
    pub code: SolutionCode,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RlCounts {
    pub recovered: usize,
    pub seed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RlManifest {
    pub schema_version: u32,
    pub counts: RlCounts,
    pub total: usize,
}

fn verify(id: &str, code: &SolutionCode, stored: Option<f64>, executor: &Executor, tol: Tolerance) -> Result<f64, AlignError> {
    let result = executor.execute(code);
    match (stored, result.answer) {
        (Some(s), Some(_)) if tol.matches_opt(result.answer, s) => Ok(s),
        (None, Some(y)) => Ok(y),
        _ => Err(AlignError::VerificationFailure { id: id.to_string(), stored, executed: result.answer, status: result.status }),
    }
}

/// Merges reflected (hard-recovered) backward problems with the seeds. Each
/// item's code is re-executed; any mismatch aborts the build.
pub fn build_rl_corpus(
    backward: &[DatasetRecord],
    seeds: &[LabeledExample],
    executor: &Executor,
    tol: Tolerance,
) -> Result<(Vec<RlItem>, RlManifest), AlignError> {
    let mut items = Vec::new();
    let mut counts = RlCounts::default();
    for r in backward {
        let DatasetRecord::Trajectory(t) = r else { continue };
        if !t.trajectory.recovered {
            continue;
        }
        let code = r.final_code().clone();
        let y = verify(&t.id, &code, r.stored_answer(), executor, tol)?;
        items.push(RlItem { id: t.id.clone(), prompt: t.problem.pnl.clone(), ground_truth: y, provenance: Provenance::Backward, code });
        counts.recovered += 1;
    }
    for s in seeds {
        let y = verify(s.id(), &s.code, s.answer, executor, tol)?;
        items.push(RlItem { id: s.id().to_string(), prompt: s.problem.pnl.clone(), ground_truth: y, provenance: Provenance::Seed, code: s.code.clone() });
        counts.seed += 1;
    }
    if items.is_empty() {
        return Err(AlignError::Empty);
    }
    let manifest = RlManifest { schema_version: SCHEMA_VERSION, total: items.len(), counts };
    Ok((items, manifest))
}
