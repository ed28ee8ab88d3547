use serde::{Deserialize, Serialize};

use super::linalg::solve_dense;
use super::model::{Choice, InvalidSpec, Stage, ValidatedSpec};
use super::spec::HorizonKind;

pub const DEFAULT_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_MAX_ITERATIONS: u64 = 1_000_000;

/// Self-transition weight of the aperiodicity transform used by relative
/// value iteration. Gains are unchanged by the transform.
const APERIODICITY_WEIGHT: f64 = 0.5;

/// Near-ties in greedy extraction from approximate values resolve to the
/// smaller action index.
const GREEDY_TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolveError {
    #[error("{0}")]
    InvalidSpec(#[from] InvalidSpec),
    #[error("solver expects a {expected} horizon, spec is {found}")]
    HorizonMismatch { expected: &'static str, found: HorizonKind },
    #[error("no convergence after {iterations} iterations")]
    NonConvergence { iterations: u64 },
    #[error("policy evaluation system is numerically singular")]
    SingularEvaluation,
    #[error("policy enumeration needs {count} candidates, above the limit of {limit}")]
    TooLarge { count: u128, limit: u128 },
}

/// The action chosen in every state (ordered like the spec's states) for one
/// decision epoch, or for all epochs when `epoch` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub actions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub rules: Vec<DecisionRule>,
}

impl Policy {
    pub fn is_stationary(&self) -> bool {
        self.rules.len() == 1 && self.rules[0].epoch.is_none()
    }

    pub(crate) fn from_indices(spec: &ValidatedSpec, picks: &[Vec<usize>]) -> Self {
        let finite = spec.periods().is_some();
        let rules = spec
            .stages()
            .iter()
            .zip(picks)
            .enumerate()
            .map(|(i, (stage, picks))| DecisionRule {
                epoch: finite.then_some(i as u32 + 1),
                actions: stage
                    .choices
                    .iter()
                    .zip(picks)
                    .map(|(choices, &a)| choices[a].action.clone())
                    .collect(),
            })
            .collect();
        Policy { rules }
    }
}

/// Per-state values for one epoch (finite horizon) or the stationary values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageValues {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epoch: Option<u32>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub stages: Vec<StageValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    /// The queried scalar: value at the initial state or distribution, or
    /// the optimal gain for average-reward models.
    pub value: f64,
    pub policy: Policy,
    pub values: ValueFunction,
    pub iterations: u64,
    /// Final sup-norm (or span) change; zero for exact methods.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationOptions {
    pub tol: f64,
    pub max_iterations: u64,
}

impl Default for IterationOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOLERANCE, max_iterations: DEFAULT_MAX_ITERATIONS }
    }
}

fn require(spec: &ValidatedSpec, kind: HorizonKind) -> Result<(), SolveError> {
    if spec.kind() == kind {
        return Ok(());
    }
    let expected = match kind {
        HorizonKind::Finite => "finite",
        HorizonKind::Discounted => "discounted",
        HorizonKind::Average => "average",
    };
    Err(SolveError::HorizonMismatch { expected, found: spec.kind() })
}

/// Exact optimisation over one stage with smallest-index tie-breaking.
fn bellman(spec: &ValidatedSpec, choices: &[Choice], values: &[f64], scale: f64) -> (f64, usize) {
    let mut best = f64::NAN;
    let mut pick = 0;
    for (a, c) in choices.iter().enumerate() {
        let q = c.reward + scale * c.expected(values);
        if a == 0 || spec.better(q, best) {
            best = q;
            pick = a;
        }
    }
    (best, pick)
}

/// Greedy action with a relative tie band, for values that are themselves
/// approximate or that come from a linear solve.
fn greedy_pick(spec: &ValidatedSpec, choices: &[Choice], values: &[f64], scale: f64) -> usize {
    let qs: Vec<f64> = choices.iter().map(|c| c.reward + scale * c.expected(values)).collect();
    let best = qs
        .iter()
        .copied()
        .fold(qs[0], |m, q| if spec.better(q, m) { q } else { m });
    let band = GREEDY_TIE_TOLERANCE * best.abs().max(1.0);
    qs.iter().position(|&q| (q - best).abs() <= band).unwrap_or(0)
}

fn stationary(spec: &ValidatedSpec) -> &Stage {
    &spec.stages()[0]
}

/// Finite-horizon backward induction from the terminal boundary condition.
pub fn backward_induction(spec: &ValidatedSpec) -> Result<SolveOutcome, SolveError> {
    require(spec, HorizonKind::Finite)?;
    let periods = spec.periods().expect("finite");
    let stages = spec.stages();
    let mut next = spec.terminal().to_vec();
    let mut by_epoch = vec![StageValues { epoch: Some(periods), values: next.clone() }];
    let mut picks = vec![Vec::new(); stages.len()];
    for (i, stage) in stages.iter().enumerate().rev() {
        let mut current = Vec::with_capacity(next.len());
        let mut rule = Vec::with_capacity(next.len());
        for choices in &stage.choices {
            let (v, a) = bellman(spec, choices, &next, 1.0);
            current.push(v);
            rule.push(a);
        }
        picks[i] = rule;
        by_epoch.push(StageValues { epoch: Some(i as u32 + 1), values: current.clone() });
        next = current;
    }
    by_epoch.reverse();
    Ok(SolveOutcome {
        value: spec.at_initial(&next),
        policy: Policy::from_indices(spec, &picks),
        values: ValueFunction { stages: by_epoch },
        iterations: stages.len() as u64,
        residual: 0.0,
    })
}

/// Sup-norm threshold on successive iterates that guarantees the returned
/// values are within `tol / 2` of the optimum.
pub fn value_iteration_threshold(tol: f64, gamma: f64) -> f64 {
    tol * (1.0 - gamma) / (2.0 * gamma)
}

/// Discounted value iteration from `v = 0`.
pub fn value_iteration(spec: &ValidatedSpec, opts: IterationOptions) -> Result<SolveOutcome, SolveError> {
    require(spec, HorizonKind::Discounted)?;
    let gamma = spec.gamma().expect("discounted");
    let stage = stationary(spec);
    let threshold = value_iteration_threshold(opts.tol, gamma);
    let mut v = vec![0.0; spec.state_count()];
    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iterations {
            return Err(SolveError::NonConvergence { iterations });
        }
        iterations += 1;
        let updated: Vec<f64> = stage
            .choices
            .iter()
            .map(|choices| bellman(spec, choices, &v, gamma).0)
            .collect();
        let delta = updated
            .iter()
            .zip(&v)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = updated;
        if delta < threshold {
            let picks: Vec<usize> = stage
                .choices
                .iter()
                .map(|choices| greedy_pick(spec, choices, &v, gamma))
                .collect();
            return Ok(SolveOutcome {
                value: spec.at_initial(&v),
                policy: Policy::from_indices(spec, &[picks]),
                values: ValueFunction { stages: vec![StageValues { epoch: None, values: v }] },
                iterations,
                residual: delta,
            });
        }
    }
}

/// Exact discounted evaluation of a stationary decision rule: solves
/// `(I - gamma P) v = r`.
pub(crate) fn evaluate_discounted(
    spec: &ValidatedSpec,
    picks: &[usize],
    gamma: f64,
) -> Result<Vec<f64>, SolveError> {
    let n = spec.state_count();
    let stage = stationary(spec);
    let mut a = vec![vec![0.0; n]; n];
    let mut b = vec![0.0; n];
    for s in 0..n {
        let c = &stage.choices[s][picks[s]];
        a[s][s] += 1.0;
        for &(j, p) in &c.next {
            a[s][j] -= gamma * p;
        }
        b[s] = c.reward;
    }
    solve_dense(a, b).ok_or(SolveError::SingularEvaluation)
}

/// Howard policy iteration. The starting rule is greedy on immediate reward.
pub fn policy_iteration(spec: &ValidatedSpec) -> Result<SolveOutcome, SolveError> {
    require(spec, HorizonKind::Discounted)?;
    let gamma = spec.gamma().expect("discounted");
    let stage = stationary(spec);
    let zeros = vec![0.0; spec.state_count()];
    let mut picks: Vec<usize> = stage
        .choices
        .iter()
        .map(|choices| greedy_pick(spec, choices, &zeros, 0.0))
        .collect();
    let mut iterations = 0;
    // Each round strictly improves or stops; the cap only guards float noise.
    let cap = 10_000;
    loop {
        iterations += 1;
        let v = evaluate_discounted(spec, &picks, gamma)?;
        let improved: Vec<usize> = stage
            .choices
            .iter()
            .map(|choices| greedy_pick(spec, choices, &v, gamma))
            .collect();
        if improved == picks {
            return Ok(SolveOutcome {
                value: spec.at_initial(&v),
                policy: Policy::from_indices(spec, &[picks]),
                values: ValueFunction { stages: vec![StageValues { epoch: None, values: v }] },
                iterations,
                residual: 0.0,
            });
        }
        if iterations >= cap {
            return Err(SolveError::NonConvergence { iterations });
        }
        picks = improved;
    }
}

/// Relative value iteration for the long-run average criterion.
///
/// Transitions are mixed with a self-loop of weight one half so periodic
/// chains converge; the reference state is the first declared state. The
/// returned `value` is the optimal gain and `values` holds the relative
/// (bias) values of the transformed chain.
pub fn relative_value_iteration(
    spec: &ValidatedSpec,
    opts: IterationOptions,
) -> Result<SolveOutcome, SolveError> {
    require(spec, HorizonKind::Average)?;
    let stage = stationary(spec);
    let n = spec.state_count();
    let tau = APERIODICITY_WEIGHT;
    let apply = |h: &[f64], choices: &[Choice], s: usize| -> Vec<f64> {
        choices
            .iter()
            .map(|c| c.reward + tau * h[s] + (1.0 - tau) * c.expected(h))
            .collect()
    };
    let mut h = vec![0.0; n];
    let mut iterations = 0;
    loop {
        if iterations >= opts.max_iterations {
            return Err(SolveError::NonConvergence { iterations });
        }
        iterations += 1;
        let mut th = Vec::with_capacity(n);
        for (s, choices) in stage.choices.iter().enumerate() {
            let qs = apply(&h, choices, s);
            let best = qs
                .iter()
                .copied()
                .fold(qs[0], |m, q| if spec.better(q, m) { q } else { m });
            th.push(best);
        }
        let (lo, hi) = th
            .iter()
            .zip(&h)
            .map(|(a, b)| a - b)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| (lo.min(d), hi.max(d)));
        let span = hi - lo;
        if span < opts.tol {
            let picks: Vec<usize> = stage
                .choices
                .iter()
                .enumerate()
                .map(|(s, choices)| {
                    let qs = apply(&h, choices, s);
                    let best = qs
                        .iter()
                        .copied()
                        .fold(qs[0], |m, q| if spec.better(q, m) { q } else { m });
                    let band = GREEDY_TIE_TOLERANCE * best.abs().max(1.0);
                    qs.iter().position(|&q| (q - best).abs() <= band).unwrap_or(0)
                })
                .collect();
            return Ok(SolveOutcome {
                value: 0.5 * (lo + hi),
                policy: Policy::from_indices(spec, &[picks]),
                values: ValueFunction { stages: vec![StageValues { epoch: None, values: h }] },
                iterations,
                residual: span,
            });
        }
        let reference = th[0];
        h = th.into_iter().map(|v| v - reference).collect();
    }
}

/// Dispatch to the horizon-appropriate exact solver: backward induction,
/// policy iteration, or relative value iteration.
pub fn solve(spec: &ValidatedSpec) -> Result<SolveOutcome, SolveError> {
    match spec.kind() {
        HorizonKind::Finite => backward_induction(spec),
        HorizonKind::Discounted => policy_iteration(spec),
        HorizonKind::Average => relative_value_iteration(spec, IterationOptions::default()),
    }
}
