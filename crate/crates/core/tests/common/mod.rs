//! Helpers shared by the integration tests: fixture loading, random model
//! generators and a scripted offline world for the mock provider.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dpgen::llm::MockRule;
use dpgen::mdp::{DPSpec, Horizon, Initial, Objective, Query, RewardEntry, TransitionRow};
use dpgen::retrieval::{ExampleStore, LabeledExample};
use dpgen::scenario::Scenario;
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load_spec(name: &str) -> DPSpec {
    DPSpec::from_json(&std::fs::read_to_string(fixture(name)).unwrap()).unwrap()
}

pub fn seeds() -> Vec<LabeledExample> {
    ExampleStore::load(&fixture("seeds.jsonl")).unwrap().examples().to_vec()
}

pub fn scenarios() -> Vec<Scenario> {
    dpgen::corpus::read_jsonl(&fixture("scenarios.jsonl")).unwrap()
}

fn state(i: usize) -> String {
    format!("s{i}")
}

/// Random row over a random nonempty support; when `anchor` is set, state
/// `s0` always receives at least 0.2 of the mass.
fn random_row(rng: &mut impl Rng, n: usize, anchor: bool) -> BTreeMap<String, f64> {
    let mut weights: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.6) { rng.random_range(0.05..1.0) } else { 0.0 }).collect();
    if weights.iter().all(|w| *w == 0.0) {
        weights[rng.random_range(0..n)] = 1.0;
    }
    let total: f64 = weights.iter().sum();
    let scale = if anchor { 0.8 } else { 1.0 };
    let mut row: BTreeMap<String, f64> = BTreeMap::new();
    for (j, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            row.insert(state(j), scale * w / total);
        }
    }
    if anchor {
        *row.entry(state(0)).or_insert(0.0) += 0.2;
    }
    row
}

/// Random model with up to `max_states` states and `max_actions` actions
/// per state. Average-reward models are unichain: every row reaches `s0`.
pub fn random_spec(rng: &mut impl Rng, horizon: Horizon, max_states: usize, max_actions: usize) -> DPSpec {
    let n = rng.random_range(1..=max_states);
    let anchor = matches!(horizon, Horizon::Average);
    let states: Vec<String> = (0..n).map(state).collect();
    let mut actions = BTreeMap::new();
    let mut transitions = Vec::new();
    let mut rewards = Vec::new();
    for s in &states {
        let m = rng.random_range(1..=max_actions);
        let names: Vec<String> = (0..m).map(|a| format!("a{a}")).collect();
        for a in &names {
            transitions.push(TransitionRow { epoch: None, state: s.clone(), action: a.clone(), next: random_row(rng, n, anchor) });
            // Quarter-unit grid keeps ties plausible without making them common.
            let reward = (rng.random_range(-20..=20) as f64) * 0.25;
            rewards.push(RewardEntry { epoch: None, state: s.clone(), action: a.clone(), reward });
        }
        actions.insert(s.clone(), names);
    }
    let terminal_rewards = match horizon {
        Horizon::Finite { .. } => states.iter().map(|s| (s.clone(), rng.random_range(-5.0..5.0))).collect(),
        _ => BTreeMap::new(),
    };
    DPSpec {
        horizon,
        objective: if rng.random_bool(0.5) { Objective::Maximize } else { Objective::Minimize },
        states,
        actions,
        epoch_actions: Vec::new(),
        transitions,
        rewards,
        terminal_rewards,
        initial: Initial::State(state(rng.random_range(0..n))),
        query: Query::ValueAtInitial,
    }
}

pub fn random_finite(rng: &mut impl Rng, max_states: usize, max_actions: usize, max_t: u32) -> DPSpec {
    let periods = rng.random_range(1..=max_t);
    random_spec(rng, Horizon::Finite { periods }, max_states, max_actions)
}

pub fn random_discounted(rng: &mut impl Rng, max_states: usize, max_actions: usize, max_gamma: f64) -> DPSpec {
    let gamma = rng.random_range(0.05..=max_gamma);
    random_spec(rng, Horizon::Discounted { gamma }, max_states, max_actions)
}

pub fn random_unichain(rng: &mut impl Rng, max_states: usize, max_actions: usize) -> DPSpec {
    random_spec(rng, Horizon::Average, max_states, max_actions)
}

pub fn shift_rewards(spec: &DPSpec, c: f64) -> DPSpec {
    let mut out = spec.clone();
    for r in &mut out.rewards {
        r.reward += c;
    }
    out
}

pub fn fenced(spec: &DPSpec) -> String {
    format!("```json\n{}\n```", spec.to_json_pretty())
}

/// Same structure, different answer whenever `delta != 0`: every reward
/// moves by `delta`, so the value moves for every horizon kind.
pub fn nudged(spec: &DPSpec, delta: f64) -> DPSpec {
    shift_rewards(spec, delta)
}

/// A document the validator rejects: its first transition row sums to 1.3.
pub fn broken_row(spec: &DPSpec) -> DPSpec {
    let mut out = spec.clone();
    let row = &mut out.transitions[0].next;
    let first = row.keys().next().unwrap().clone();
    *row.get_mut(&first).unwrap() += 0.3;
    out
}

/// One seed of the scripted world: how to spot it in prompts, and the
/// prose the mock writes for it.
pub struct SeedScript {
    pub key: &'static str,
    pub spec_file: &'static str,
    /// Occurs in the seed text, hence in rewrite prompts.
    pub text_marker: &'static str,
    /// Occurs in the seed model document, hence in backward-problem prompts.
    pub spec_marker: &'static str,
    pub labels: &'static str,
    pub gist: &'static str,
}

pub struct ScenarioScript {
    pub key: &'static str,
    pub marker: &'static str,
    pub setting: &'static str,
}

pub const SEED_SCRIPTS: [SeedScript; 3] = [
    SeedScript {
        key: "wh",
        spec_file: "warehouse.json",
        text_marker: "A warehouse holds",
        spec_marker: "up_to_4",
        labels: "infinite-discounted, stochastic, action-dependent transition probability",
        gist: "Spare stock sits between zero and four units; each cycle a top-up target is chosen, a fixed charge \
plus a unit charge applies to every top-up, consumption of one or two is equally likely, leftovers incur carrying \
charges and future cycles are discounted by 0.8. Find the least expected discounted spend from empty.",
    },
    SeedScript {
        key: "mc",
        spec_file: "machine.json",
        text_marker: "A machine is good",
        spec_marker: "\"repair\"",
        labels: "finite-horizon, stochastic",
        gist: "Equipment condition is fresh, tired or failed across four stages with choices in the first three; \
fresh units earn 10, tired units earn 6 or get serviced for 1, failed units are swapped for -5 and leftover worth \
is 5, 2 or 0. Find the best expected earnings from fresh.",
    },
    SeedScript {
        key: "ad",
        spec_file: "admission.json",
        text_marker: "A single server",
        spec_marker: "\"admit\"",
        labels: "infinite-average, stochastic",
        gist: "A desk handles at most two requests; the operator accepts or declines each arrival, accepting at \
idle pays 3, at one pays 2, declining at one costs 1 and being full costs 2 while forcing a decline. Find the \
best long-run earnings per period.",
    },
];

pub const SCENARIO_SCRIPTS: [ScenarioScript; 2] = [
    ScenarioScript { key: "courier", marker: "regional courier", setting: "electric van dispatching for a courier" },
    ScenarioScript { key: "pension", marker: "pension fund", setting: "portfolio rebalancing for a retirement fund" },
];

pub fn forward_tag(seed: &str, scenario: &str) -> String {
    format!("F-{seed}-{scenario}")
}

pub fn backward_tag(seed: &str, scenario: &str) -> String {
    format!("B-{seed}-{scenario}")
}

/// Backward task that fails everywhere on first try and recovers on
/// reflection round 2 for the first persona.
pub const RECOVERING_TASK: (&str, &str) = ("wh", "courier");
/// Backward task that never recovers.
pub const HOPELESS_TASK: (&str, &str) = ("ad", "pension");
/// Persona whose forward code fails validation and is repaired on refinement.
pub const REPAIRED_PERSONA: &str = "or-student";
/// Persona that always disagrees in forward runs.
pub const DISSENTING_PERSONA: &str = "mdp-specialist";

fn problem_text(tag: &str, setting: &str, gist: &str) -> String {
    format!("Case {tag} concerns {setting}. {gist}")
}

/// Rules for the scripted world over the fixture seeds and scenarios.
/// Earlier rules take precedence, so specific ones come first.
pub fn world_rules() -> Vec<MockRule> {
    let mut specific = Vec::new();
    let mut general = Vec::new();
    for seed in &SEED_SCRIPTS {
        let spec = load_spec(seed.spec_file);
        let right = fenced(&spec);
        let wrong = fenced(&nudged(&spec, 1.0));
        for scn in &SCENARIO_SCRIPTS {
            let ft = forward_tag(seed.key, scn.key);
            let bt = backward_tag(seed.key, scn.key);
            general.push(MockRule::new(
                ["TASK: rewrite-problem", seed.text_marker, scn.marker],
                problem_text(&ft, scn.setting, seed.gist),
            ));
            general.push(MockRule::new(
                ["TASK: backward-problem", seed.spec_marker, scn.marker],
                problem_text(&bt, scn.setting, seed.gist),
            ));
            for tag in [&ft, &bt] {
                general.push(MockRule::new(["TASK: assign-labels", tag.as_str()], seed.labels));
                general.push(MockRule::new(
                    ["TASK: chain-of-thought", tag.as_str()],
                    format!("Reasoning for {tag}: identify the states, the actions and the objective, then solve exactly."),
                ));
                general.push(MockRule::new(["TASK: model", tag.as_str()], format!("Model for {tag}: Bellman recursion over the states.")));
            }

            // Forward: one persona needs a repair, one always dissents.
            specific.push(MockRule::new(["TASK: code", ft.as_str(), &format!("PERSONA: {DISSENTING_PERSONA}")], wrong.clone()));
            specific.push(MockRule::new(
                ["TASK: code", ft.as_str(), &format!("PERSONA: {REPAIRED_PERSONA}")],
                fenced(&broken_row(&spec)),
            ));
            general.push(MockRule::new(["TASK: refine-code", ft.as_str()], right.clone()));
            general.push(MockRule::new(["TASK: code", ft.as_str()], right.clone()));

            // Backward.
            let task = (seed.key, scn.key);
            if task == RECOVERING_TASK {
                specific.push(MockRule::new(["TASK: code", "REVISED-2"], right.clone()));
                specific.push(MockRule::new(
                    ["TASK: reflection round 2/", bt.as_str()],
                    format!("REVISED-2 reasoning for {bt}: the fixed charge was double counted."),
                ));
                general.push(MockRule::new(
                    ["TASK: reflection round", bt.as_str()],
                    format!("REVISED reasoning for {bt}: still checking the costs."),
                ));
                general.push(MockRule::new(["TASK: code", bt.as_str()], wrong.clone()));
            } else if task == HOPELESS_TASK {
                general.push(MockRule::new(["TASK: reflection round", bt.as_str()], format!("Another look at {bt}.")));
                general.push(MockRule::new(["TASK: code", bt.as_str()], wrong.clone()));
            } else {
                general.push(MockRule::new(["TASK: code", bt.as_str()], right.clone()));
            }
        }
    }
    specific.push(MockRule::new(["TASK: validity-check"], "VALID\nEvery quantity needed is stated."));
    specific.extend(bench_rules());
    specific.extend(general);
    specific
}

/// Scripted benchmark answers for `fixtures/bench.jsonl`: both easy items
/// right, both hard items wrong.
pub fn bench_rules() -> Vec<MockRule> {
    vec![
        MockRule::new(
            ["TASK: solve", "A machine is good, worn or broken over four epochs"],
            format!("The condition is the state.\n{}", fenced(&load_spec("machine.json"))),
        ),
        MockRule::new(["TASK: solve", "A two-state chain alternates"], "Half the periods earn 2.\nFINAL ANSWER: 1"),
        MockRule::new(
            ["TASK: solve", "Warehouse with stock 0..3"],
            format!("Capacity binds at 3.\n{}", fenced(&load_spec("warehouse_capped.json"))),
        ),
        MockRule::new(["TASK: solve", "Same warehouse but capacity 3"], "Roughly 30 after discounting, so 30."),
    ]
}
