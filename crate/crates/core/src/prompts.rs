//! Prompt templates and response parsing.
//!
//! Every user message opens with a `TASK: <name>` line so scripted providers
//! and cache inspection can tell the steps apart. Persona identity lives in
//! the system message.

use crate::corpus::SolutionAttempt;
use crate::llm::{Message, Persona};
use crate::mdp::SolutionCode;
use crate::retrieval::LabeledExample;
use crate::scenario::{Category, Scenario};

const SPEC_FORMAT: &str = "Write the model as a JSON document with fields horizon ({\"kind\":\"finite\",\"T\":n} | \
{\"kind\":\"discounted\",\"gamma\":g} | {\"kind\":\"average\"}), objective (maximize|minimize), states, \
actions (state -> list), transitions (list of {epoch?, state, action, next: {state: prob}}), rewards \
(list of {epoch?, state, action, reward}), terminal_rewards (finite horizon only), initial (state or \
distribution) and query (value_at_initial). Put it in a ```json fenced block.";

fn few_shot(examples: &[&LabeledExample], part: impl Fn(&LabeledExample) -> String) -> String {
    if examples.is_empty() {
        return String::new();
    }
    let mut out = String::from("Worked examples:\n");
    for (i, e) in examples.iter().enumerate() {
        out.push_str(&format!("\nExample {}\nProblem:\n{}\n{}\n", i + 1, e.problem.pnl.trim(), part(e).trim()));
    }
    out.push('\n');
    out
}

fn fenced(code: &SolutionCode) -> String {
    format!("```{}\n{}\n```", code.fence_language(), code.text.trim_end())
}

fn persona_system(persona: &Persona) -> Message {
    Message::system(persona.system_prompt.clone())
}

pub fn rewrite_problem(seed_pnl: &str, scenario: &Scenario) -> Vec<Message> {
    vec![
        Message::system("You rewrite dynamic programming problems into new application settings."),
        Message::user(format!(
            "TASK: rewrite-problem\nRewrite the problem below into the scenario that follows. Preserve the core \
decision structure while making context-specific adjustments to states, actions, parameters and the question. \
Return only the new problem text.\n\nProblem:\n{}\n\nScenario ({}):\n{}\nTrade-off: {}",
            seed_pnl.trim(),
            scenario.category,
            scenario.description.trim(),
            scenario.characteristics.trim()
        )),
    ]
}

pub const VALIDITY_SYSTEM: &str = "You review dynamic programming problems for clear logical flaws.";

pub fn validity_check(system: &str, pnl: &str) -> Vec<Message> {
    vec![
        Message::system(system),
        Message::user(format!(
            "TASK: validity-check\nDoes the problem below have a well-posed decision question with all data \
needed to answer it and no clear logical flaw? Answer VALID or INVALID on the first line, then one sentence of \
justification.\n\nProblem:\n{}",
            pnl.trim()
        )),
    ]
}

pub fn assign_labels(pnl: &str, vocabulary: &[&str]) -> Vec<Message> {
    vec![
        Message::system("You classify dynamic programming problems by structure."),
        Message::user(format!(
            "TASK: assign-labels\nChoose every label that applies from this list, and no others: {}.\nAnswer \
with a comma-separated list.\n\nProblem:\n{}",
            vocabulary.join(", "),
            pnl.trim()
        )),
    ]
}

pub fn chain_of_thought(persona: &Persona, pnl: &str, examples: &[&LabeledExample]) -> Vec<Message> {
    vec![
        persona_system(persona),
        Message::user(format!(
            "TASK: chain-of-thought\n{}Reason step by step about the problem below: identify the decision \
epochs, states, actions, transition probabilities, rewards and the objective. Do not write code yet.\n\n\
Problem:\n{}",
            few_shot(examples, |e| format!("Reasoning:\n{}", e.cot)),
            pnl.trim()
        )),
    ]
}

pub fn model(persona: &Persona, pnl: &str, cot: &str, examples: &[&LabeledExample]) -> Vec<Message> {
    vec![
        persona_system(persona),
        Message::user(format!(
            "TASK: model\n{}Using the reasoning, write the mathematical model: state space, action sets, \
transition law, reward function, horizon and the Bellman equation.\n\nProblem:\n{}\n\nReasoning:\n{}",
            few_shot(examples, |e| format!("Model:\n{}", e.model_text)),
            pnl.trim(),
            cot.trim()
        )),
    ]
}

pub fn code(persona: &Persona, pnl: &str, cot: &str, model_text: &str, examples: &[&LabeledExample]) -> Vec<Message> {
    vec![
        persona_system(persona),
        Message::user(format!(
            "TASK: code\n{}Implement the model so it can be executed. {SPEC_FORMAT}\n\nProblem:\n{}\n\n\
Reasoning:\n{}\n\nModel:\n{}",
            few_shot(examples, |e| format!("Code:\n{}", fenced(&e.code))),
            pnl.trim(),
            cot.trim(),
            model_text.trim()
        )),
    ]
}

pub fn refine_code(persona: &Persona, pnl: &str, attempt: &SolutionAttempt) -> Vec<Message> {
    vec![
        persona_system(persona),
        Message::user(format!(
            "TASK: refine-code\nThe code below failed with status {}{}. Reflect on common coding mistakes \
(probability rows that do not sum to one, unknown state names, missing actions) and return a corrected \
version. {SPEC_FORMAT}\n\nProblem:\n{}\n\nFailed code:\n{}",
            attempt.status,
            attempt.detail.as_deref().map(|d| format!(" ({d})")).unwrap_or_default(),
            pnl.trim(),
            fenced(&attempt.code)
        )),
    ]
}

pub fn backward_problem(code: &SolutionCode, scenario: &Scenario) -> Vec<Message> {
    vec![
        Message::system("You write self-contained dynamic programming word problems from executable models."),
        Message::user(format!(
            "TASK: backward-problem\nWrite a problem statement in the scenario below whose exact answer is \
computed by this model. State every number in prose; never quote the model verbatim. End with the decision \
question.\n\nModel:\n{}\n\nScenario ({}):\n{}\nTrade-off: {}",
            fenced(code),
            scenario.category,
            scenario.description.trim(),
            scenario.characteristics.trim()
        )),
    ]
}

pub fn reflection(
    persona: &Persona,
    pnl: &str,
    failed: &SolutionAttempt,
    reference: &SolutionCode,
    round: usize,
    max_rounds: usize,
) -> Vec<Message> {
    let outcome = match failed.answer {
        Some(y) => format!("produced {y}"),
        None => format!("failed with status {}", failed.status),
    };
    vec![
        persona_system(persona),
        Message::user(format!(
            "TASK: reflection round {round}/{max_rounds}\nYour previous solution {outcome}, which disagrees with \
the reference solution. Compare the two, explain where your reasoning went wrong, and reason again step by \
step. Do not copy the reference.\n\nProblem:\n{}\n\nYour code:\n{}\n\nReference code:\n{}",
            pnl.trim(),
            fenced(&failed.code),
            fenced(reference)
        )),
    ]
}

pub fn generate_scenarios(category: Category, n: usize) -> Vec<Message> {
    vec![
        Message::system("You design realistic sequential decision scenarios."),
        Message::user(format!(
            "TASK: generate-scenarios\nWrite {n} distinct application scenarios in the category \"{category}\". \
Each must involve a clear trade-off in decision making. Format each as two lines:\nDescription: <one \
paragraph>\nTrade-off: <one sentence>"
        )),
    ]
}

pub fn solve(pnl: &str, examples: &[&LabeledExample]) -> Vec<Message> {
    vec![
        Message::system("You solve dynamic programming problems exactly."),
        Message::user(format!(
            "TASK: solve\n{}Solve the problem below. Reason step by step, write the model, and give executable \
code. {SPEC_FORMAT} Finish with a line `FINAL ANSWER: <number>`.\n\nProblem:\n{}",
            few_shot(examples, |e| format!(
                "Reasoning:\n{}\nModel:\n{}\nCode:\n{}",
                e.cot,
                e.model_text,
                fenced(&e.code)
            )),
            pnl.trim()
        )),
    ]
}

/// First fenced block: (language tag, body).
pub fn first_fence(text: &str) -> Option<(String, String)> {
    let start = text.find("```")?;
    let after = &text[start + 3..];
    let newline = after.find('\n')?;
    let lang = after[..newline].trim().to_lowercase();
    let body_start = &after[newline + 1..];
    let end = body_start.find("```")?;
    Some((lang, body_start[..end].to_string()))
}

fn looks_like_json(body: &str) -> bool {
    serde_json::from_str::<serde_json::Value>(body).is_ok_and(|v| v.is_object())
}

/// Code carried by a response: the first fenced block if any, else the
/// whole body. JSON becomes a spec, anything else a script.
pub fn extract_code(text: &str) -> SolutionCode {
    match first_fence(text) {
        Some((lang, body)) if lang == "json" || looks_like_json(&body) => SolutionCode::spec(body),
        Some((_, body)) => SolutionCode::script(body),
        None if looks_like_json(text.trim()) => SolutionCode::spec(text.trim()),
        None => SolutionCode::script(text),
    }
}

/// Whether a response carries any fenced block.
pub fn has_code_block(text: &str) -> bool {
    first_fence(text).is_some()
}

/// `VALID` or `yes` on the first nonblank line accepts.
pub fn parse_verdict(text: &str) -> bool {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let word: String = first
        .trim()
        .trim_start_matches(|c: char| !c.is_alphanumeric())
        .chars()
        .take_while(|c| c.is_alphanumeric())
        .collect::<String>()
        .to_lowercase();
    word == "valid" || word == "yes"
}
