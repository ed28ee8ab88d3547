use std::collections::{HashMap, HashSet};
use std::fmt;

use super::spec::{DPSpec, Horizon, HorizonKind, Initial, Objective};

/// Probability rows and initial distributions must sum to one within this bound.
pub const PROBABILITY_TOLERANCE: f64 = 1e-9;

/// Every invariant a document violates, in discovery order.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct InvalidSpec {
    pub details: Vec<String>,
}

impl InvalidSpec {
    pub fn single(detail: impl Into<String>) -> Self {
        Self { details: vec![detail.into()] }
    }
}

impl fmt::Display for InvalidSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid spec: {}", self.details.join("; "))
    }
}

/// One admissible action in one state at one stage, fully resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub action: String,
    pub reward: f64,
    /// `(next state index, probability)`, zero-probability entries removed.
    pub next: Vec<(usize, f64)>,
}

impl Choice {
    pub(crate) fn expected(&self, values: &[f64]) -> f64 {
        self.next.iter().map(|&(j, p)| p * values[j]).sum()
    }
}

/// Admissible choices per state for one decision epoch (or the stationary rule).
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub choices: Vec<Vec<Choice>>,
}

/// A document that satisfied every invariant, with probability mass
/// normalised and the model compiled to index form.
#[derive(Debug, Clone)]
pub struct ValidatedSpec {
    spec: DPSpec,
    maximize: bool,
    stages: Vec<Stage>,
    terminal: Vec<f64>,
    initial: Vec<f64>,
}

impl ValidatedSpec {
    /// The normalised document.
    pub fn spec(&self) -> &DPSpec {
        &self.spec
    }

    pub fn into_spec(self) -> DPSpec {
        self.spec
    }

    pub fn horizon(&self) -> Horizon {
        self.spec.horizon
    }

    pub fn kind(&self) -> HorizonKind {
        self.spec.horizon.kind()
    }

    pub fn maximize(&self) -> bool {
        self.maximize
    }

    pub fn state_count(&self) -> usize {
        self.spec.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.spec.states
    }

    /// Decision stages. Finite horizon: index `i` is epoch `i + 1`, so there
    /// are `T - 1` of them. Otherwise exactly one stationary stage.
    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn gamma(&self) -> Option<f64> {
        match self.spec.horizon {
            Horizon::Discounted { gamma } => Some(gamma),
            _ => None,
        }
    }

    pub fn periods(&self) -> Option<u32> {
        match self.spec.horizon {
            Horizon::Finite { periods } => Some(periods),
            _ => None,
        }
    }

    pub(crate) fn better(&self, candidate: f64, incumbent: f64) -> bool {
        if self.maximize {
            candidate > incumbent
        } else {
            candidate < incumbent
        }
    }

    /// Weighted sum of per-state values under the initial distribution.
    pub fn at_initial(&self, values: &[f64]) -> f64 {
        self.initial.iter().zip(values).map(|(p, v)| p * v).sum()
    }

    /// Flags a state with at least two actions whose rows and rewards are all
    /// identical, i.e. a decision that cannot matter. Returns a description
    /// of the first such state.
    pub fn degeneracy(&self) -> Option<String> {
        for (stage_index, stage) in self.stages.iter().enumerate() {
            for (s, choices) in stage.choices.iter().enumerate() {
                if choices.len() < 2 {
                    continue;
                }
                let first = &choices[0];
                if choices[1..]
                    .iter()
                    .all(|c| c.reward == first.reward && c.next == first.next)
                {
                    let at = match self.periods() {
                        Some(_) => format!(" at epoch {}", stage_index + 1),
                        None => String::new(),
                    };
                    return Some(format!(
                        "all actions in state '{}'{at} are identical",
                        self.spec.states[s]
                    ));
                }
            }
        }
        None
    }
}

pub(crate) fn fmt_num(x: f64) -> String {
    let s = format!("{x:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

type Key = (Option<u32>, String, String);

/// Check every document invariant and compile the model.
///
/// Probability rows and initial distributions within [`PROBABILITY_TOLERANCE`]
/// of unit mass are rescaled to sum to exactly one.
pub fn validate_spec(spec: &DPSpec) -> Result<ValidatedSpec, InvalidSpec> {
    let mut errs = Vec::new();
    let mut spec = spec.clone();

    if spec.states.is_empty() {
        errs.push("states must be nonempty".to_string());
    }
    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, s) in spec.states.iter().enumerate() {
        if index.insert(s.as_str(), i).is_some() {
            errs.push(format!("duplicate state '{s}'"));
        }
    }

    let periods = match spec.horizon {
        Horizon::Finite { periods } => {
            if periods < 1 {
                errs.push("finite horizon requires T >= 1".to_string());
            }
            Some(periods)
        }
        Horizon::Discounted { gamma } => {
            if !(gamma > 0.0 && gamma < 1.0) {
                errs.push("gamma out of (0,1)".to_string());
            }
            None
        }
        Horizon::Average => None,
    };
    let epoch_ok = |e: u32| periods.is_some_and(|t| e >= 1 && e < t);

    // Admissible action lists.
    for s in &spec.states {
        match spec.actions.get(s) {
            None => errs.push(format!("state '{s}' has no action list")),
            Some(list) if list.is_empty() => errs.push(format!("state '{s}' has an empty action list")),
            Some(list) => {
                let mut seen = HashSet::new();
                for a in list {
                    if !seen.insert(a) {
                        errs.push(format!("duplicate action '{a}' in state '{s}'"));
                    }
                }
            }
        }
    }
    for s in spec.actions.keys() {
        if !index.contains_key(s.as_str()) {
            errs.push(format!("actions listed for unknown state '{s}'"));
        }
    }
    let mut overrides: HashMap<(u32, &str), &Vec<String>> = HashMap::new();
    for o in &spec.epoch_actions {
        if periods.is_none() {
            errs.push("epoch-indexed actions require a finite horizon".to_string());
            break;
        }
        if !epoch_ok(o.epoch) {
            errs.push(format!("epoch {} out of decision range for actions of '{}'", o.epoch, o.state));
        }
        if !index.contains_key(o.state.as_str()) {
            errs.push(format!("epoch actions for unknown state '{}'", o.state));
        }
        if o.actions.is_empty() {
            errs.push(format!("empty epoch {} action list for state '{}'", o.epoch, o.state));
        }
        if overrides.insert((o.epoch, o.state.as_str()), &o.actions).is_some() {
            errs.push(format!("duplicate epoch {} action list for state '{}'", o.epoch, o.state));
        }
    }
    let admissible_somewhere = |s: &str, a: &String| {
        spec.actions.get(s).is_some_and(|l| l.contains(a))
            || spec.epoch_actions.iter().any(|o| o.state == s && o.actions.contains(a))
    };
    let admissible_at = |e: u32, s: &str, a: &String| match overrides.get(&(e, s)) {
        Some(list) => list.contains(a),
        None => spec.actions.get(s).is_some_and(|l| l.contains(a)),
    };

    // Transition rows.
    let mut rows: HashMap<Key, Vec<(usize, f64)>> = HashMap::new();
    for row in spec.transitions.iter_mut() {
        let label = format!("state '{}', action '{}'", row.state, row.action);
        if let Some(e) = row.epoch {
            if periods.is_none() {
                errs.push(format!("epoch-indexed transition for {label} requires a finite horizon"));
                continue;
            }
            if !epoch_ok(e) {
                errs.push(format!("transition epoch {e} out of decision range for {label}"));
                continue;
            }
        }
        if !index.contains_key(row.state.as_str()) {
            errs.push(format!("transition from unknown state '{}'", row.state));
            continue;
        }
        let known = match row.epoch {
            Some(e) => admissible_at(e, &row.state, &row.action),
            None => admissible_somewhere(&row.state, &row.action),
        };
        if !known {
            errs.push(format!("transition for inadmissible {label}"));
            continue;
        }
        let mut ok = true;
        let mut total = 0.0;
        for (next, &p) in &row.next {
            if !index.contains_key(next.as_str()) {
                errs.push(format!("transition for {label} references unknown state '{next}'"));
                ok = false;
            }
            if !p.is_finite() || p < 0.0 {
                errs.push(format!("negative or non-finite probability {p} for {label}"));
                ok = false;
            }
            total += p;
        }
        if ok && (total - 1.0).abs() > PROBABILITY_TOLERANCE {
            errs.push(format!("row sums to {} for {label}", fmt_num(total)));
            ok = false;
        }
        if !ok {
            continue;
        }
        for p in row.next.values_mut() {
            *p /= total;
        }
        let compiled: Vec<(usize, f64)> = row
            .next
            .iter()
            .filter(|(_, &p)| p > 0.0)
            .map(|(n, &p)| (index[n.as_str()], p))
            .collect();
        let key = (row.epoch, row.state.clone(), row.action.clone());
        if rows.insert(key, compiled).is_some() {
            errs.push(format!("duplicate transition row for {label}"));
        }
    }

    // Rewards; missing entries default to zero.
    let mut rewards: HashMap<Key, f64> = HashMap::new();
    for r in &spec.rewards {
        let label = format!("state '{}', action '{}'", r.state, r.action);
        if !r.reward.is_finite() {
            errs.push(format!("non-finite reward for {label}"));
        }
        if let Some(e) = r.epoch {
            if !epoch_ok(e) {
                errs.push(format!("reward epoch {e} out of decision range for {label}"));
                continue;
            }
        }
        let known = index.contains_key(r.state.as_str())
            && match r.epoch {
                Some(e) => admissible_at(e, &r.state, &r.action),
                None => admissible_somewhere(&r.state, &r.action),
            };
        if !known {
            errs.push(format!("reward for inadmissible {label}"));
            continue;
        }
        if rewards.insert((r.epoch, r.state.clone(), r.action.clone()), r.reward).is_some() {
            errs.push(format!("duplicate reward for {label}"));
        }
    }

    let mut terminal = vec![0.0; spec.states.len()];
    if !spec.terminal_rewards.is_empty() && periods.is_none() {
        errs.push("terminal rewards require a finite horizon".to_string());
    }
    for (s, &v) in &spec.terminal_rewards {
        match index.get(s.as_str()) {
            Some(&i) if v.is_finite() => terminal[i] = v,
            Some(_) => errs.push(format!("non-finite terminal reward for '{s}'")),
            None => errs.push(format!("terminal reward for unknown state '{s}'")),
        }
    }

    let mut initial = vec![0.0; spec.states.len()];
    match &mut spec.initial {
        Initial::State(s) => match index.get(s.as_str()) {
            Some(&i) => initial[i] = 1.0,
            None => errs.push(format!("initial state '{s}' is unknown")),
        },
        Initial::Distribution(dist) => {
            let mut total = 0.0;
            let mut ok = true;
            for (s, &p) in dist.iter() {
                if !index.contains_key(s.as_str()) {
                    errs.push(format!("initial distribution references unknown state '{s}'"));
                    ok = false;
                }
                if !p.is_finite() || p < 0.0 {
                    errs.push(format!("negative or non-finite initial probability for '{s}'"));
                    ok = false;
                }
                total += p;
            }
            if ok && (total - 1.0).abs() > PROBABILITY_TOLERANCE {
                errs.push(format!("initial distribution sums to {}", fmt_num(total)));
                ok = false;
            }
            if ok {
                for (s, p) in dist.iter_mut() {
                    *p /= total;
                    initial[index[s.as_str()]] = *p;
                }
            }
        }
    }

    if !errs.is_empty() {
        return Err(InvalidSpec { details: errs });
    }

    // Resolve stages.
    let decision_epochs: Vec<Option<u32>> = match periods {
        Some(t) => (1..t).map(Some).collect(),
        None => vec![None],
    };
    let mut stages = Vec::with_capacity(decision_epochs.len());
    for epoch in decision_epochs {
        let mut choices = Vec::with_capacity(spec.states.len());
        for s in &spec.states {
            let list = epoch
                .and_then(|e| overrides.get(&(e, s.as_str())).copied())
                .unwrap_or(&spec.actions[s]);
            let mut here = Vec::with_capacity(list.len());
            for a in list {
                let specific = epoch.and_then(|e| rows.get(&(Some(e), s.clone(), a.clone())));
                let next = match specific.or_else(|| rows.get(&(None, s.clone(), a.clone()))) {
                    Some(next) => next.clone(),
                    None => {
                        let at = epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default();
                        errs.push(format!("missing transition row for state '{s}', action '{a}'{at}"));
                        continue;
                    }
                };
                let reward = epoch
                    .and_then(|e| rewards.get(&(Some(e), s.clone(), a.clone())))
                    .or_else(|| rewards.get(&(None, s.clone(), a.clone())))
                    .copied()
                    .unwrap_or(0.0);
                here.push(Choice { action: a.clone(), reward, next });
            }
            choices.push(here);
        }
        stages.push(Stage { choices });
    }
    if !errs.is_empty() {
        return Err(InvalidSpec { details: errs });
    }

    Ok(ValidatedSpec {
        maximize: spec.objective == Objective::Maximize,
        spec,
        stages,
        terminal,
        initial,
    })
}

/// Parse and validate a JSON document in one step.
pub fn parse_and_validate(text: &str) -> Result<ValidatedSpec, InvalidSpec> {
    let spec = DPSpec::from_json(text).map_err(|e| InvalidSpec::single(format!("parse error: {e}")))?;
    validate_spec(&spec)
}
