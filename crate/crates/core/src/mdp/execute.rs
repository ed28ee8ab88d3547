//! Running a generated solution to obtain its numeric answer.
//!
//! Structured spec documents are interpreted in-process. Opaque scripts run
//! in a subprocess with a wall-clock timeout; the last line of standard
//! output must be a single number.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use super::model::validate_spec;
use super::solve::solve;
use super::spec::DPSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeKind {
    Spec,
    Script,
}

/// The executable part of a solution: a spec document or script source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionCode {
    pub kind: CodeKind,
    pub text: String,
}

impl SolutionCode {
    pub fn spec(text: impl Into<String>) -> Self {
        Self { kind: CodeKind::Spec, text: text.into() }
    }

    pub fn script(text: impl Into<String>) -> Self {
        Self { kind: CodeKind::Script, text: text.into() }
    }

    pub fn from_spec(spec: &DPSpec) -> Self {
        Self::spec(spec.to_json_pretty())
    }

    /// Fence language used when rendering this code into prompts or samples.
    pub fn fence_language(&self) -> &'static str {
        match self.kind {
            CodeKind::Spec => "json",
            CodeKind::Script => "python",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecStatus {
    Ok,
    ParseError,
    InvalidSpec,
    RuntimeError,
    Timeout,
    NonNumericOutput,
}

impl ExecStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExecStatus::Ok => "ok",
            ExecStatus::ParseError => "parse_error",
            ExecStatus::InvalidSpec => "invalid_spec",
            ExecStatus::RuntimeError => "runtime_error",
            ExecStatus::Timeout => "timeout",
            ExecStatus::NonNumericOutput => "non_numeric_output",
        }
    }
}

impl std::fmt::Display for ExecStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub answer: Option<f64>,
    pub status: ExecStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

impl ExecutionResult {
    pub fn ok(answer: f64) -> Self {
        Self { answer: Some(answer), status: ExecStatus::Ok, detail: None }
    }

    pub fn failed(status: ExecStatus, detail: impl Into<String>) -> Self {
        Self { answer: None, status, detail: Some(detail.into()) }
    }

    pub fn is_ok(&self) -> bool {
        self.status == ExecStatus::Ok
    }
}

/// Settings for the subprocess backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptConfig {
    pub interpreter: String,
    pub timeout: Duration,
    /// Extra environment variable names withheld from the child, on top of
    /// anything that looks like a credential.
    #[serde(default)]
    pub withheld_env: Vec<String>,
}

impl Default for ScriptConfig {
    fn default() -> Self {
        Self { interpreter: "python3".into(), timeout: Duration::from_secs(10), withheld_env: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backend {
    SpecInterpreter,
    ExternalScript(ScriptConfig),
}

/// Execute a solution with an explicit backend. Never fails: every problem
/// is reported through [`ExecutionResult::status`].
pub fn execute_solution(code: &SolutionCode, backend: &Backend) -> ExecutionResult {
    match backend {
        Backend::SpecInterpreter => interpret_spec(&code.text),
        Backend::ExternalScript(cfg) => run_script(&code.text, cfg),
    }
}

/// Chooses the backend from the code's kind.
#[derive(Debug, Clone, Default)]
pub struct Executor {
    pub script: ScriptConfig,
}

impl Executor {
    pub fn new(script: ScriptConfig) -> Self {
        Self { script }
    }

    pub fn execute(&self, code: &SolutionCode) -> ExecutionResult {
        match code.kind {
            CodeKind::Spec => execute_solution(code, &Backend::SpecInterpreter),
            CodeKind::Script => execute_solution(code, &Backend::ExternalScript(self.script.clone())),
        }
    }
}

fn interpret_spec(text: &str) -> ExecutionResult {
    let spec = match DPSpec::from_json(text) {
        Ok(spec) => spec,
        Err(e) => return ExecutionResult::failed(ExecStatus::ParseError, e.to_string()),
    };
    let validated = match validate_spec(&spec) {
        Ok(v) => v,
        Err(e) => return ExecutionResult::failed(ExecStatus::InvalidSpec, e.details.join("; ")),
    };
    match solve(&validated) {
        Ok(outcome) if outcome.value.is_finite() => ExecutionResult::ok(outcome.value),
        Ok(outcome) => ExecutionResult::failed(ExecStatus::RuntimeError, format!("non-finite answer {}", outcome.value)),
        Err(e) => ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string()),
    }
}

fn is_secret_name(name: &str) -> bool {
    let upper = name.to_ascii_uppercase();
    ["KEY", "TOKEN", "SECRET", "PASSWORD", "CREDENTIAL"]
        .iter()
        .any(|marker| upper.contains(marker))
}

fn run_script(source: &str, cfg: &ScriptConfig) -> ExecutionResult {
    let mut file = match tempfile::Builder::new().prefix("dpgen-script").tempfile() {
        Ok(f) => f,
        Err(e) => return ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string()),
    };
    if let Err(e) = file.write_all(source.as_bytes()).and_then(|_| file.flush()) {
        return ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string());
    }

    let mut command = Command::new(&cfg.interpreter);
    command
        .arg(file.path())
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped());
    for (name, _) in std::env::vars_os() {
        let Some(name) = name.to_str() else { continue };
        if is_secret_name(name) || cfg.withheld_env.iter().any(|w| w == name) {
            command.env_remove(name);
        }
    }
    let mut child = match command.spawn() {
        Ok(c) => c,
        Err(e) => return ExecutionResult::failed(ExecStatus::RuntimeError, format!("spawn {}: {e}", cfg.interpreter)),
    };

    // Drain pipes on helper threads so a chatty child cannot block on a full pipe.
    let mut stdout = child.stdout.take().expect("piped stdout");
    let mut stderr = child.stderr.take().expect("piped stderr");
    let out_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stdout.read_to_end(&mut buf);
        buf
    });
    let err_reader = std::thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = stderr.read_to_end(&mut buf);
        buf
    });

    let status = match child.wait_timeout(cfg.timeout) {
        Ok(Some(status)) => status,
        Ok(None) => {
            let _ = child.kill();
            let _ = child.wait();
            return ExecutionResult::failed(ExecStatus::Timeout, format!("exceeded {:?}", cfg.timeout));
        }
        Err(e) => return ExecutionResult::failed(ExecStatus::RuntimeError, e.to_string()),
    };
    let out = out_reader.join().unwrap_or_default();
    let err = err_reader.join().unwrap_or_default();
    if !status.success() {
        let tail = String::from_utf8_lossy(&err);
        let tail = tail.lines().last().unwrap_or("").to_string();
        return ExecutionResult::failed(ExecStatus::RuntimeError, format!("exit status {status}: {tail}"));
    }
    let text = String::from_utf8_lossy(&out);
    let last = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim();
    match parse_single_number(last) {
        Some(v) => ExecutionResult::ok(v),
        None => ExecutionResult::failed(ExecStatus::NonNumericOutput, format!("last line {last:?}")),
    }
}

/// A single finite numeric token, nothing else on the line.
pub fn parse_single_number(line: &str) -> Option<f64> {
    let mut tokens = line.split_whitespace();
    let token = tokens.next()?;
    if tokens.next().is_some() {
        return None;
    }
    token.parse::<f64>().ok().filter(|v| v.is_finite())
}
