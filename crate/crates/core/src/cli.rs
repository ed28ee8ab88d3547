//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::align::{build_preference_pairs, build_rl_corpus, PairMode, SampledProblem};
use crate::backward::run_backward;
use crate::config::AppConfig;
use crate::corpus::{self, assemble_sft, verify_round_trip, write_json, write_jsonl, DatasetRecord, Mix, RunHeader};
use crate::eval::{self, BenchmarkItem, PromptMode, RunMeta, TranscriptEntry};
use crate::forward::{run_forward, PipelineConfig, SolverContext};
use crate::llm::{self, Gateway, HttpProvider, MockProvider, ResponseCache};
use crate::mdp::{self, Executor, ScriptConfig, SolveOutcome};
use crate::retrieval::ExampleStore;
use crate::scenario::{generate_scenarios, Category, Scenario};

// Stdout writes that surface errors instead of panicking on a closed pipe.
macro_rules! outln {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        writeln!(std::io::stdout().lock(), $($arg)*)?
    }};
}

macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        write!(std::io::stdout().lock(), $($arg)*)?
    }};
}

#[derive(Debug, Parser)]
#[command(name = "dpgen", version, about = "Dynamic-programming problem synthesis, verification and evaluation")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the scripted mock provider and the response cache only.
    #[arg(long, global = true)]
    pub offline: bool,
    /// Mock fixture directory (hash files and rules.json).
    #[arg(long, global = true)]
    pub mock_dir: Option<PathBuf>,
    /// Response cache directory.
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Method {
    Auto,
    Backward,
    Value,
    Policy,
    Relative,
    Enumerate,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Zero,
    Rag,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long)]
    pub scenarios: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a spec file and print the value and policy.
    Solve {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "auto")]
        method: Method,
        /// Print the outcome as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Check a spec file.
    Validate { file: PathBuf },
    /// Generate application scenarios for a category.
    GenScenarios {
        #[arg(long)]
        category: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Problem-first generation with majority voting.
    GenForward {
        #[command(flatten)]
        common: GenArgs,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Solution-first generation with reflection.
    GenBackward {
        #[command(flatten)]
        common: GenArgs,
        #[arg(long)]
        max_reflections: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Assemble an SFT corpus from dataset files.
    BuildSft {
        #[arg(long = "input", required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build preference pairs from sampled attempts.
    BuildPrefs {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        all_pairs: bool,
    },
    /// Merge recovered backward problems with the seeds into a verified RL corpus.
    BuildRlCorpus {
        #[arg(long)]
        backward: PathBuf,
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a benchmark file.
    Eval {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long, default_value_t = 1)]
        samples: usize,
        #[arg(long, value_enum, default_value = "zero")]
        mode: ModeArg,
        /// Example store for rag mode.
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Re-score a saved transcript instead of sampling.
        #[arg(long)]
        rescore: Option<PathBuf>,
    },
    /// Summarise a dataset or report file.
    Stats { file: PathBuf },
}

struct Env {
    cfg: AppConfig,
    offline: bool,
    mock_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
}

impl Env {
    fn header(&self, command: &str) -> RunHeader {
        RunHeader::new(self.cfg.hash(), self.cfg.rng_seed, command)
    }

    fn executor(&self) -> Executor {
        Executor::new(ScriptConfig {
            interpreter: self.cfg.execution.interpreter.clone(),
            timeout: Duration::from_secs_f64(self.cfg.execution.timeout_secs),
            withheld_env: Vec::new(),
        })
    }

    fn gateway(&self) -> Result<Gateway> {
        let p = &self.cfg.provider;
        let mut gw = if self.offline {
            let mock = match &self.mock_dir {
                Some(dir) => MockProvider::from_dir(dir).with_context(|| format!("loading mock fixtures from {}", dir.display()))?,
                None => MockProvider::new(),
            };
            Gateway::new(mock, p.model_name.clone())
        } else {
            let credential = self.cfg.credential()?.context("provider.credential is not configured")?;
            let http = HttpProvider::new(p.endpoint_url.clone(), credential, Duration::from_secs(p.timeout_secs));
            Gateway::new(http, p.model_name.clone()).with_rate_limit(p.rpm_limit)
        };
        gw = gw.with_decoding(self.cfg.decoding).with_clock(Arc::new(llm::SystemClock::new()));
        if let Some(dir) = &self.cache_dir {
            gw = gw.with_cache(ResponseCache::new(dir).with_context(|| format!("cache dir {}", dir.display()))?);
        }
        Ok(gw)
    }
}

/// Parses `argv` and runs the command, returning the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) if is_broken_pipe(&e) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn dispatch(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    let env = Env {
        offline: cli.offline,
        mock_dir: cli.mock_dir.clone().or_else(|| cfg.mock_dir.clone()),
        cache_dir: cli.cache_dir.clone().or_else(|| cfg.cache_dir.clone()),
        cfg,
    };
    match cli.command {
        Command::Solve { file, method, json } => cmd_solve(&file, method, json),
        Command::Validate { file } => cmd_validate(&file),
        Command::GenScenarios { category, n, out } => cmd_gen_scenarios(&env, &category, n, &out),
        Command::GenForward { common, repeats } => cmd_gen_forward(&env, &common, repeats),
        Command::GenBackward { common, max_reflections, repeats } => cmd_gen_backward(&env, &common, max_reflections, repeats),
        Command::BuildSft { inputs, out } => cmd_build_sft(&env, &inputs, &out),
        Command::BuildPrefs { input, out, all_pairs } => cmd_build_prefs(&env, &input, &out, all_pairs),
        Command::BuildRlCorpus { backward, seeds, out } => cmd_build_rl(&env, &backward, &seeds, &out),
        Command::Eval { bench, samples, mode, store, out, rescore } => {
            cmd_eval(&env, &bench, samples, mode, store.as_deref(), &out, rescore.as_deref())
        }
        Command::Stats { file } => cmd_stats(&file),
    }
}

fn read_spec(file: &Path) -> Result<mdp::ValidatedSpec> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    let spec = mdp::DPSpec::from_json(&text).with_context(|| format!("parsing {}", file.display()))?;
    Ok(mdp::validate_spec(&spec)?)
}

fn run_method(spec: &mdp::ValidatedSpec, method: Method) -> Result<SolveOutcome> {
    Ok(match method {
        Method::Auto => mdp::solve(spec)?,
        Method::Backward => mdp::backward_induction(spec)?,
        Method::Value => mdp::value_iteration(spec, mdp::IterationOptions::default())?,
        Method::Policy => mdp::policy_iteration(spec)?,
        Method::Relative => mdp::relative_value_iteration(spec, mdp::IterationOptions::default())?,
        Method::Enumerate => mdp::enumerate_policies(spec)?,
    })
}

fn cmd_solve(file: &Path, method: Method, json: bool) -> Result<()> {
    let spec = read_spec(file)?;
    let outcome = run_method(&spec, method)?;
    let oracle = if mdp::policy_count(&spec) <= mdp::ENUMERATION_LIMIT as u128 {
        Some(mdp::enumerate_policies(&spec)?.value)
    } else {
        None
    };
    let tol = crate::Tolerance::default();
    if let Some(o) = oracle {
        if !tol.matches(outcome.value, o) {
            bail!("solver value {} disagrees with enumeration {}", outcome.value, o);
        }
    }
    if json {
        outln!("{}", serde_json::to_string_pretty(&outcome)?);
        return Ok(());
    }
    outln!("value: {}", outcome.value);
    match oracle {
        Some(o) => outln!("oracle: {o} (enumeration agrees)"),
        None => outln!("oracle: skipped (too many policies)"),
    }
    outln!("iterations: {}", outcome.iterations);
    outln!("policy:");
    for rule in &outcome.policy.rules {
        let label = rule.epoch.map(|e| format!("epoch {e}")).unwrap_or_else(|| "stationary".into());
        outln!("  {label}:");
        for (state, action) in spec.states().iter().zip(&rule.actions) {
            outln!("    {state} -> {action}");
        }
    }
    Ok(())
}

fn cmd_validate(file: &Path) -> Result<()> {
    let spec = read_spec(file)?;
    outln!("valid: {} horizon, {} states", spec.kind(), spec.state_count());
    if let Some(d) = spec.degeneracy() {
        outln!("warning: {d}");
    }
    Ok(())
}

fn cmd_gen_scenarios(env: &Env, category: &str, n: usize, out: &Path) -> Result<()> {
    let category: Category = category.parse()?;
    let gw = env.gateway()?;
    let batch = generate_scenarios(&gw, category, n)?;
    let mut existing: Vec<Scenario> = if out.exists() { corpus::read_jsonl(out)? } else { Vec::new() };
    for s in batch.scenarios {
        if !existing.iter().any(|e| e.id == s.id) {
            existing.push(s);
        }
    }
    write_jsonl(out, &existing)?;
    outln!("scenarios: {} stored, shortfall {}", existing.len(), batch.shortfall);
    Ok(())
}

fn load_inputs(args: &GenArgs) -> Result<(ExampleStore, Vec<Scenario>)> {
    let store = ExampleStore::load(&args.seeds)?;
    let scenarios: Vec<Scenario> = corpus::read_jsonl(&args.scenarios)?;
    if store.is_empty() || scenarios.is_empty() {
        bail!("seeds and scenarios must both be nonempty");
    }
    Ok((store, scenarios))
}

fn pipeline_config(env: &Env, workers: Option<usize>) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_app(&env.cfg);
    if let Some(w) = workers {
        cfg.workers = w;
    }
    cfg
}

#[derive(serde::Serialize)]
struct Report<'a, T> {
    schema_version: u32,
    header: RunHeader,
    #[serde(flatten)]
    body: &'a T,
}

fn cmd_gen_forward(env: &Env, args: &GenArgs, repeats: Option<usize>) -> Result<()> {
    let (store, scenarios) = load_inputs(args)?;
    let mut cfg = pipeline_config(env, args.workers);
    if let Some(r) = repeats {
        cfg.repeats = r;
    }
    let gw = env.gateway()?;
    let personas = llm::personas(env.cfg.pipeline.personas);
    let executor = env.executor();
    let ctx = SolverContext { gateway: &gw, store: &store, personas: &personas, executor: &executor };
    let out = run_forward(&ctx, store.examples(), &scenarios, &cfg)?;
    write_jsonl(&args.out.join("forward.jsonl"), &out.records)?;
    write_jsonl(&args.out.join("forward_attempts.jsonl"), &out.sampled)?;
    let header = env.header("gen-forward");
    write_json(&args.out.join("forward_stats.json"), &Report { schema_version: crate::SCHEMA_VERSION, header, body: &out.stats })?;
    outln!(
        "forward: {} tasks, {} accepted problems, {} records",
        out.stats.tasks, out.stats.accepted_problems, out.stats.records_emitted
    );
    Ok(())
}

fn cmd_gen_backward(env: &Env, args: &GenArgs, max_reflections: Option<usize>, repeats: Option<usize>) -> Result<()> {
    let (store, scenarios) = load_inputs(args)?;
    let mut cfg = pipeline_config(env, args.workers);
    if let Some(p) = max_reflections {
        cfg.max_reflections = p;
    }
    if let Some(r) = repeats {
        cfg.repeats = r;
    }
    let gw = env.gateway()?;
    let personas = llm::personas(env.cfg.pipeline.personas);
    let executor = env.executor();
    let ctx = SolverContext { gateway: &gw, store: &store, personas: &personas, executor: &executor };
    let out = run_backward(&ctx, store.examples(), &scenarios, &cfg, &env.cfg.perturbation.plan())?;
    write_jsonl(&args.out.join("backward.jsonl"), &out.records)?;
    #[derive(serde::Serialize)]
    struct Archived<'a> {
        problem_id: &'a str,
        trajectories: &'a [Vec<corpus::SolutionAttempt>],
    }
    let archived: Vec<Archived> = out.rejected.iter().map(|(id, t)| Archived { problem_id: id, trajectories: t }).collect();
    write_jsonl(&args.out.join("backward_rejected.jsonl"), &archived)?;
    let header = env.header("gen-backward");
    write_json(&args.out.join("recovery_report.json"), &Report { schema_version: crate::SCHEMA_VERSION, header, body: &out.report })?;
    outln!(
        "backward: {} problems, {} first-try, {} recovered, {} rejected",
        out.report.problems, out.report.first_try, out.report.recovered, out.report.rejected
    );
    Ok(())
}

fn cmd_build_sft(env: &Env, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let mut records: Vec<DatasetRecord> = Vec::new();
    for path in inputs {
        records.extend(corpus::read_jsonl::<DatasetRecord>(path)?);
    }
    let failures = verify_round_trip(&records, &env.executor(), env.cfg.tolerance);
    if let Some(f) = failures.first() {
        bail!("{} record(s) failed re-execution, first {} ({})", failures.len(), f.id, f.status);
    }
    let (samples, counts) = assemble_sft(&records, Mix::default())?;
    let manifest = corpus::write_sft(out, &samples, &counts, Mix::default(), env.header("build-sft"))?;
    outln!(
        "sft: {} samples (forward {}, backward {}, reflected {})",
        manifest.total, counts.forward, counts.backward, counts.reflected
    );
    Ok(())
}

fn cmd_build_prefs(env: &Env, input: &Path, out: &Path, all_pairs: bool) -> Result<()> {
    let problems: Vec<SampledProblem> = corpus::read_jsonl(input)?;
    let mode = if all_pairs { PairMode::AllPairs } else { PairMode::FirstPair };
    let (pairs, stats) = build_preference_pairs(&problems, mode, env.cfg.tolerance);
    write_jsonl(out, &pairs)?;
    let stats_path = out.with_extension("stats.json");
    write_json(&stats_path, &Report { schema_version: crate::SCHEMA_VERSION, header: env.header("build-prefs"), body: &stats })?;
    outln!("prefs: {} pairs from {} problems", stats.pairs, stats.problems);
    Ok(())
}

fn cmd_build_rl(env: &Env, backward: &Path, seeds: &Path, out: &Path) -> Result<()> {
    let records: Vec<DatasetRecord> = corpus::read_jsonl(backward)?;
    let store = ExampleStore::load(seeds)?;
    let (items, manifest) = build_rl_corpus(&records, store.examples(), &env.executor(), env.cfg.tolerance)?;
    write_jsonl(&out.join("rl.jsonl"), &items)?;
    write_json(&out.join("rl_manifest.json"), &Report { schema_version: crate::SCHEMA_VERSION, header: env.header("build-rl-corpus"), body: &manifest })?;
    outln!("rl: {} items (recovered {}, seed {})", manifest.total, manifest.counts.recovered, manifest.counts.seed);
    Ok(())
}

fn cmd_eval(
    env: &Env,
    bench: &Path,
    samples: usize,
    mode: ModeArg,
    store: Option<&Path>,
    out: &Path,
    rescore: Option<&Path>,
) -> Result<()> {
    let items: Vec<BenchmarkItem> = corpus::read_jsonl(bench)?;
    let mode = match mode {
        ModeArg::Zero => PromptMode::Zero,
        ModeArg::Rag => PromptMode::Rag,
    };
    let transcript: Vec<TranscriptEntry> = match rescore {
        Some(path) => corpus::read_jsonl(path)?,
        None => {
            let store = store.map(ExampleStore::load).transpose()?;
            let gw = env.gateway()?;
            eval::run_eval(&gw, &env.executor(), &items, samples, mode, store.as_ref(), env.cfg.pipeline.few_shot, env.cfg.tolerance)?
        }
    };
    let samples = transcript.iter().map(|e| e.samples.len()).min().unwrap_or(0);
    let meta = RunMeta {
        model: env.cfg.provider.model_name.clone(),
        mode,
        samples,
        decoding: env.cfg.decoding,
        tolerance: env.cfg.tolerance,
    };
    let report = eval::report_from_transcript(&transcript, meta, Some(env.header("eval")))?;
    if rescore.is_none() {
        write_jsonl(&out.join("transcript.jsonl"), &transcript)?;
    }
    write_json(&out.join("report.json"), &report)?;
    let table = eval::render_table(&[(&report.meta.model, &report)]);
    std::fs::write(out.join("report.md"), &table).with_context(|| format!("writing {}", out.display()))?;
    out!("{table}");
    Ok(())
}

fn cmd_stats(file: &Path) -> Result<()> {
    let text = std::fs::read_to_string(file).with_context(|| format!("reading {}", file.display()))?;
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(&text) {
        if let Ok(report) = serde_json::from_value::<eval::MetricsReport>(value.clone()) {
            out!("{}", eval::render_table(&[(&report.meta.model, &report)]));
            return Ok(());
        }
        outln!("{}", serde_json::to_string_pretty(&value)?);
        return Ok(());
    }
    let records: Vec<DatasetRecord> = corpus::read_jsonl(file)?;
    let mut forward = 0;
    let mut standard = 0;
    let mut reflected = 0;
    for r in &records {
        match r {
            DatasetRecord::Solution(_) => forward += 1,
            DatasetRecord::Trajectory(t) if t.trajectory.recovered => reflected += 1,
            DatasetRecord::Trajectory(_) => standard += 1,
        }
    }
    let problems: std::collections::BTreeSet<&str> = records.iter().map(|r| r.problem().id.as_str()).collect();
    outln!("records: {}", records.len());
    outln!("problems: {}", problems.len());
    outln!("solution records: {forward}");
    outln!("trajectory records: {standard} first-try, {reflected} reflected");
    Ok(())
}
