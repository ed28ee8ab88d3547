use serde_json::json;

use super::*;

fn parse(value: serde_json::Value) -> DPSpec {
    serde_json::from_value(value).expect("well-formed document")
}

fn flip_stay() -> DPSpec {
    parse(json!({
        "horizon": {"kind": "finite", "T": 2},
        "objective": "maximize",
        "states": ["0", "1"],
        "actions": {"0": ["stay", "flip"], "1": ["stay"]},
        "transitions": [
            {"state": "0", "action": "stay", "next": {"0": 1.0}},
            {"state": "0", "action": "flip", "next": {"1": 1.0}},
            {"state": "1", "action": "stay", "next": {"1": 1.0}}
        ],
        "rewards": [{"state": "0", "action": "flip", "reward": -0.3}],
        "terminal_rewards": {"0": 0.0, "1": 1.0},
        "initial": "0"
    }))
}

fn single_state(gamma: f64) -> DPSpec {
    parse(json!({
        "horizon": {"kind": "discounted", "gamma": gamma},
        "objective": "maximize",
        "states": ["s"],
        "actions": {"s": ["a"]},
        "transitions": [{"state": "s", "action": "a", "next": {"s": 1.0}}],
        "rewards": [{"state": "s", "action": "a", "reward": 1.0}],
        "initial": "s"
    }))
}

fn two_cycle() -> DPSpec {
    parse(json!({
        "horizon": {"kind": "average"},
        "objective": "maximize",
        "states": ["1", "2"],
        "actions": {"1": ["go"], "2": ["go"]},
        "transitions": [
            {"state": "1", "action": "go", "next": {"2": 1.0}},
            {"state": "2", "action": "go", "next": {"1": 1.0}}
        ],
        "rewards": [
            {"state": "1", "action": "go", "reward": 0.0},
            {"state": "2", "action": "go", "reward": 2.0}
        ],
        "initial": "1"
    }))
}

fn with_row(probs: &[f64]) -> DPSpec {
    let mut spec = single_state(0.5);
    spec.states.push("t".into());
    spec.actions.insert("t".into(), vec!["a".into()]);
    spec.transitions[0].next = [("s".to_string(), probs[0]), ("t".to_string(), probs[1])].into_iter().collect();
    spec.transitions.push(TransitionRow {
        epoch: None,
        state: "t".into(),
        action: "a".into(),
        next: [("t".to_string(), 1.0)].into_iter().collect(),
    });
    spec
}

#[test]
fn balanced_row_is_accepted_unchanged() {
    let spec = with_row(&[0.5, 0.5]);
    let v = validate_spec(&spec).unwrap();
    assert_eq!(v.spec(), &spec);
}

#[test]
fn overfull_row_is_rejected() {
    let err = validate_spec(&with_row(&[0.7, 0.4])).unwrap_err();
    assert!(err.details.iter().any(|d| d.contains("row sums to 1.1")), "{err}");
}

#[test]
fn near_unit_row_is_normalised() {
    let v = validate_spec(&with_row(&[0.5, 0.5 + 5e-10])).unwrap();
    let total: f64 = v.spec().transitions[0].next.values().sum();
    assert!((total - 1.0).abs() < 1e-15);
}

#[test]
fn gamma_boundary_is_excluded() {
    for gamma in [1.0, 0.0, -0.1, 1.5] {
        let err = validate_spec(&single_state(gamma)).unwrap_err();
        assert!(err.details.iter().any(|d| d == "gamma out of (0,1)"));
    }
}

#[test]
fn structural_violations_are_all_reported() {
    let spec = parse(json!({
        "horizon": {"kind": "finite", "T": 0},
        "objective": "minimize",
        "states": ["a", "a", "b"],
        "actions": {"a": ["x"], "b": [], "ghost": ["y"]},
        "transitions": [
            {"state": "a", "action": "x", "next": {"nowhere": 1.0}},
            {"state": "a", "action": "z", "next": {"a": 1.0}}
        ],
        "initial": {"a": 0.6, "b": 0.6}
    }));
    let err = validate_spec(&spec).unwrap_err();
    let text = err.to_string();
    for needle in [
        "duplicate state 'a'",
        "T >= 1",
        "empty action list",
        "unknown state 'ghost'",
        "unknown state 'nowhere'",
        "inadmissible state 'a', action 'z'",
        "initial distribution sums to 1.2",
    ] {
        assert!(text.contains(needle), "missing {needle:?} in {text}");
    }
}

#[test]
fn missing_row_is_rejected() {
    let mut spec = single_state(0.5);
    spec.actions.get_mut("s").unwrap().push("b".into());
    let err = validate_spec(&spec).unwrap_err();
    assert!(err.to_string().contains("missing transition row for state 's', action 'b'"));
}

#[test]
fn epoch_entries_need_finite_horizon() {
    let mut spec = single_state(0.5);
    spec.transitions[0].epoch = Some(1);
    assert!(validate_spec(&spec).is_err());
}

#[test]
fn flip_beats_stay() {
    let v = validate_spec(&flip_stay()).unwrap();
    let out = backward_induction(&v).unwrap();
    assert!((out.value - 0.7).abs() < 1e-15);
    assert_eq!(out.policy.rules.len(), 1);
    assert_eq!(out.policy.rules[0].epoch, Some(1));
    assert_eq!(out.policy.rules[0].actions, vec!["flip", "stay"]);
    let oracle = enumerate_policies(&v).unwrap();
    assert_eq!(oracle.value, out.value);
    assert_eq!(oracle.policy, out.policy);
}

#[test]
fn minimising_flip_stay_prefers_stay() {
    let mut spec = flip_stay();
    spec.objective = Objective::Minimize;
    let out = backward_induction(&validate_spec(&spec).unwrap()).unwrap();
    assert_eq!(out.value, 0.0);
    assert_eq!(out.policy.rules[0].actions[0], "stay");
}

#[test]
fn single_period_is_terminal_reward() {
    let mut spec = flip_stay();
    spec.horizon = Horizon::Finite { periods: 1 };
    spec.initial = Initial::State("1".into());
    let v = validate_spec(&spec).unwrap();
    let out = backward_induction(&v).unwrap();
    assert_eq!(out.value, 1.0);
    assert!(out.policy.rules.is_empty());
    assert_eq!(enumerate_policies(&v).unwrap().value, 1.0);
}

#[test]
fn epoch_overrides_apply() {
    let mut spec = flip_stay();
    spec.horizon = Horizon::Finite { periods: 3 };
    // Flipping is only allowed at epoch 2; at epoch 1 the state must stay.
    spec.epoch_actions = vec![EpochActions { epoch: 1, state: "0".into(), actions: vec!["stay".into()] }];
    let v = validate_spec(&spec).unwrap();
    let out = backward_induction(&v).unwrap();
    assert!((out.value - 0.7).abs() < 1e-15);
    assert_eq!(out.policy.rules[0].actions[0], "stay");
    assert_eq!(out.policy.rules[1].actions[0], "flip");
    assert_eq!(enumerate_policies(&v).unwrap().value, out.value);
}

#[test]
fn geometric_series() {
    let v = validate_spec(&single_state(0.5)).unwrap();
    let vi = value_iteration(&v, IterationOptions::default()).unwrap();
    assert!((vi.value - 2.0).abs() < 1e-9);
    let pi = policy_iteration(&v).unwrap();
    assert!((pi.value - 2.0).abs() < 1e-12);
    assert_eq!(pi.iterations, 1);
    assert_eq!(pi.residual, 0.0);
}

#[test]
fn already_optimal_start_stops_after_one_evaluation() {
    // Immediate-reward greedy already picks the optimal action.
    let spec = parse(json!({
        "horizon": {"kind": "discounted", "gamma": 0.9},
        "objective": "maximize",
        "states": ["s", "t"],
        "actions": {"s": ["good", "bad"], "t": ["only"]},
        "transitions": [
            {"state": "s", "action": "good", "next": {"s": 1.0}},
            {"state": "s", "action": "bad", "next": {"t": 1.0}},
            {"state": "t", "action": "only", "next": {"t": 1.0}}
        ],
        "rewards": [
            {"state": "s", "action": "good", "reward": 2.0},
            {"state": "s", "action": "bad", "reward": 1.0}
        ],
        "initial": "s"
    }));
    let out = policy_iteration(&validate_spec(&spec).unwrap()).unwrap();
    assert_eq!(out.iterations, 1);
    assert!((out.value - 20.0).abs() < 1e-9);
}

#[test]
fn value_iteration_respects_iteration_cap() {
    let v = validate_spec(&single_state(0.99)).unwrap();
    let err = value_iteration(&v, IterationOptions { tol: 1e-12, max_iterations: 5 }).unwrap_err();
    assert_eq!(err, SolveError::NonConvergence { iterations: 5 });
}

#[test]
fn two_cycle_gain_is_one() {
    let v = validate_spec(&two_cycle()).unwrap();
    let out = relative_value_iteration(&v, IterationOptions::default()).unwrap();
    assert_eq!(out.value, 1.0);
    let oracle = enumerate_policies(&v).unwrap();
    assert!((oracle.value - 1.0).abs() < 1e-12);
}

#[test]
fn absorbing_state_gain() {
    let mut spec = single_state(0.5);
    spec.horizon = Horizon::Average;
    spec.rewards[0].reward = 3.0;
    let out = relative_value_iteration(&validate_spec(&spec).unwrap(), IterationOptions::default()).unwrap();
    assert_eq!(out.value, 3.0);
}

#[test]
fn horizon_mismatch() {
    let finite = validate_spec(&flip_stay()).unwrap();
    let discounted = validate_spec(&single_state(0.5)).unwrap();
    assert!(matches!(
        value_iteration(&finite, IterationOptions::default()),
        Err(SolveError::HorizonMismatch { .. })
    ));
    assert!(matches!(backward_induction(&discounted), Err(SolveError::HorizonMismatch { .. })));
    assert!(matches!(
        relative_value_iteration(&discounted, IterationOptions::default()),
        Err(SolveError::HorizonMismatch { .. })
    ));
}

#[test]
fn enumeration_bound() {
    // 21 states with 2 actions each: 2^21 > 10^6 stationary policies.
    let states: Vec<String> = (0..21).map(|i| i.to_string()).collect();
    let mut actions = serde_json::Map::new();
    let mut transitions = Vec::new();
    for s in &states {
        actions.insert(s.clone(), json!(["a", "b"]));
        for a in ["a", "b"] {
            transitions.push(json!({"state": s, "action": a, "next": {s.clone(): 1.0}}));
        }
    }
    let spec = parse(json!({
        "horizon": {"kind": "discounted", "gamma": 0.5},
        "objective": "maximize",
        "states": states,
        "actions": actions,
        "transitions": transitions,
        "initial": "0"
    }));
    let v = validate_spec(&spec).unwrap();
    assert!(matches!(enumerate_policies(&v), Err(SolveError::TooLarge { count: 2097152, .. })));
}

#[test]
fn single_policy_enumeration_is_its_evaluation() {
    let v = validate_spec(&single_state(0.75)).unwrap();
    let out = enumerate_policies(&v).unwrap();
    assert!((out.value - 4.0).abs() < 1e-12);
    assert_eq!(out.iterations, 1);
}

#[test]
fn degenerate_choice_is_flagged() {
    let mut spec = single_state(0.5);
    spec.actions.get_mut("s").unwrap().push("b".into());
    spec.transitions.push(TransitionRow {
        epoch: None,
        state: "s".into(),
        action: "b".into(),
        next: [("s".to_string(), 1.0)].into_iter().collect(),
    });
    spec.rewards.push(RewardEntry { epoch: None, state: "s".into(), action: "b".into(), reward: 1.0 });
    let v = validate_spec(&spec).unwrap();
    assert!(v.degeneracy().unwrap().contains("state 's'"));
    assert!(validate_spec(&flip_stay()).unwrap().degeneracy().is_none());
}

#[test]
fn spec_interpreter_dispatch() {
    let text = serde_json::to_string(&flip_stay()).unwrap();
    let r = execute_solution(&SolutionCode::spec(text), &Backend::SpecInterpreter);
    assert_eq!(r.status, ExecStatus::Ok);
    assert!((r.answer.unwrap() - 0.7).abs() < 1e-15);

    let bad = serde_json::to_string(&with_row(&[0.7, 0.4])).unwrap();
    let r = execute_solution(&SolutionCode::spec(bad), &Backend::SpecInterpreter);
    assert_eq!(r.status, ExecStatus::InvalidSpec);
    assert!(r.answer.is_none());
}

#[test]
fn json_shape_round_trips() {
    let spec = flip_stay();
    let text = spec.to_json_pretty();
    assert!(text.contains("\"T\": 2"));
    assert!(text.contains("\"kind\": \"finite\""));
    assert_eq!(DPSpec::from_json(&text).unwrap(), spec);
}
