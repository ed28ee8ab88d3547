//! Brute-force policy enumeration: the independent oracle the iterative
//! solvers are checked against.

use super::linalg::solve_dense;
use super::model::{Stage, ValidatedSpec};
use super::solve::{evaluate_discounted, Policy, SolveError, SolveOutcome, StageValues, ValueFunction};
use super::spec::HorizonKind;

pub const ENUMERATION_LIMIT: u128 = 1_000_000;

/// Number of deterministic policies the enumeration would visit.
pub fn policy_count(spec: &ValidatedSpec) -> u128 {
    spec.stages()
        .iter()
        .flat_map(|stage| stage.choices.iter())
        .fold(1u128, |acc, c| acc.saturating_mul(c.len() as u128))
}

/// Evaluate every deterministic policy exactly and return the best one.
///
/// Finite horizon enumerates epoch-indexed policies and evaluates each by
/// the expectation recursion; discounted enumerates stationary policies and
/// evaluates each with a linear solve; average-reward enumerates stationary
/// policies and scores each by its stationary-distribution gain.
pub fn enumerate_policies(spec: &ValidatedSpec) -> Result<SolveOutcome, SolveError> {
    let count = policy_count(spec);
    if count > ENUMERATION_LIMIT {
        return Err(SolveError::TooLarge { count, limit: ENUMERATION_LIMIT });
    }
    match spec.kind() {
        HorizonKind::Finite => enumerate_finite(spec, count),
        HorizonKind::Discounted => enumerate_stationary(spec, count, |picks| {
            let gamma = spec.gamma().expect("discounted");
            let v = evaluate_discounted(spec, picks, gamma)?;
            Ok((spec.at_initial(&v), v))
        }),
        HorizonKind::Average => enumerate_stationary(spec, count, |picks| {
            let g = stationary_gain(spec, picks)?;
            Ok((g, vec![g; spec.state_count()]))
        }),
    }
}

struct Best {
    value: f64,
    picks: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

fn enumerate_finite(spec: &ValidatedSpec, count: u128) -> Result<SolveOutcome, SolveError> {
    let stages = spec.stages();
    let periods = spec.periods().expect("finite");
    let mut best: Option<Best> = None;
    let mut picks = vec![Vec::new(); stages.len()];
    let mut values = vec![Vec::new(); stages.len()];
    if stages.is_empty() {
        let v = spec.terminal().to_vec();
        best = Some(Best { value: spec.at_initial(&v), picks: Vec::new(), values: Vec::new() });
    } else {
        descend(spec, stages.len() - 1, spec.terminal(), &mut picks, &mut values, &mut best);
    }
    let best = best.expect("at least one policy");
    let mut stage_values: Vec<StageValues> = best
        .values
        .into_iter()
        .enumerate()
        .map(|(i, values)| StageValues { epoch: Some(i as u32 + 1), values })
        .collect();
    stage_values.push(StageValues { epoch: Some(periods), values: spec.terminal().to_vec() });
    Ok(SolveOutcome {
        value: best.value,
        policy: Policy::from_indices(spec, &best.picks),
        values: ValueFunction { stages: stage_values },
        iterations: count as u64,
        residual: 0.0,
    })
}

/// Walk every decision rule of stage `t` given the already-fixed later
/// stages, then recurse toward epoch 1.
fn descend(
    spec: &ValidatedSpec,
    t: usize,
    next: &[f64],
    picks: &mut Vec<Vec<usize>>,
    values: &mut Vec<Vec<f64>>,
    best: &mut Option<Best>,
) {
    let stage = &spec.stages()[t];
    let mut rule = vec![0usize; stage.choices.len()];
    loop {
        let current = evaluate_rule(stage, &rule, next);
        picks[t] = rule.clone();
        values[t] = current.clone();
        if t == 0 {
            let value = spec.at_initial(&current);
            if best.as_ref().is_none_or(|b| spec.better(value, b.value)) {
                *best = Some(Best { value, picks: picks.clone(), values: values.clone() });
            }
        } else {
            descend(spec, t - 1, &current, picks, values, best);
        }
        if !advance(stage, &mut rule) {
            break;
        }
    }
}

fn evaluate_rule(stage: &Stage, rule: &[usize], next: &[f64]) -> Vec<f64> {
    stage
        .choices
        .iter()
        .zip(rule)
        .map(|(choices, &a)| {
            let c = &choices[a];
            c.reward + c.expected(next)
        })
        .collect()
}

/// Mixed-radix increment; false once every combination has been visited.
fn advance(stage: &Stage, rule: &mut [usize]) -> bool {
    for (digit, choices) in rule.iter_mut().zip(&stage.choices) {
        *digit += 1;
        if *digit < choices.len() {
            return true;
        }
        *digit = 0;
    }
    false
}

fn enumerate_stationary(
    spec: &ValidatedSpec,
    count: u128,
    mut evaluate: impl FnMut(&[usize]) -> Result<(f64, Vec<f64>), SolveError>,
) -> Result<SolveOutcome, SolveError> {
    let stage = &spec.stages()[0];
    let mut rule = vec![0usize; stage.choices.len()];
    let mut best: Option<(f64, Vec<usize>, Vec<f64>)> = None;
    loop {
        let (value, values) = evaluate(&rule)?;
        if best.as_ref().is_none_or(|b| spec.better(value, b.0)) {
            best = Some((value, rule.clone(), values));
        }
        if !advance(stage, &mut rule) {
            break;
        }
    }
    let (value, picks, values) = best.expect("at least one policy");
    Ok(SolveOutcome {
        value,
        policy: Policy::from_indices(spec, &[picks]),
        values: ValueFunction { stages: vec![StageValues { epoch: None, values }] },
        iterations: count as u64,
        residual: 0.0,
    })
}

/// Long-run average reward of a stationary rule on a unichain model:
/// `mu P = mu`, `sum(mu) = 1`, gain `= mu . r`.
pub(crate) fn stationary_gain(spec: &ValidatedSpec, picks: &[usize]) -> Result<f64, SolveError> {
    let n = spec.state_count();
    let stage = &spec.stages()[0];
    // Row i of the system is the balance equation for state i; the last one
    // is replaced by normalisation.
    let mut a = vec![vec![0.0; n]; n];
    for (s, choices) in stage.choices.iter().enumerate() {
        for &(j, p) in &choices[picks[s]].next {
            a[j][s] += p;
        }
        a[s][s] -= 1.0;
    }
    let mut b = vec![0.0; n];
    a[n - 1] = vec![1.0; n];
    b[n - 1] = 1.0;
    let mu = solve_dense(a, b).ok_or(SolveError::SingularEvaluation)?;
    Ok(stage
        .choices
        .iter()
        .zip(picks)
        .zip(&mu)
        .map(|((choices, &a), m)| m * choices[a].reward)
        .sum())
}
