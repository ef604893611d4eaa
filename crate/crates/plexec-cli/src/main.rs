use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use plexec::agents::{AgentBackend, HttpBackend, HttpConfig, RuleBackend, ScriptedBackend};
use plexec::baseline::{compare_synthetic, run_reactive, CompareReport, DEFAULT_STEP_CAP};
use plexec::dsl;
use plexec::env::grid::{grid_tools, GridCase, GridSession, GridState};
use plexec::env::synthetic::DEFAULT_WORDS;
use plexec::env::wiki::{wiki_tools, WikiCorpus, WikiSession};
use plexec::env::ToolRegistry;
use plexec::executor::{
    run_plan, ExecutionTrace, HaltPolicy, HaltReason, RunOutcome, TraceSink, DEFAULT_INVARIANCE_WINDOW,
};
use plexec::plan::{external_inputs, validate_plan_with};
use plexec::value::Value;

const EXIT_INVALID: u8 = 1;
const EXIT_ABORTED: u8 = 2;
const EXIT_MAX_ITERATIONS: u8 = 3;
const EXIT_INVARIANCE: u8 = 4;
const EXIT_ERROR: u8 = 5;

#[derive(Parser)]
#[command(
    name = "plexec",
    version,
    about = "Validate and run pseudocode plans against tool environments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a plan; prints one violation per line.
    Validate {
        #[arg(long)]
        plan: PathBuf,
    },
    /// Execute a plan.
    Run(RunArgs),
    /// Run the reactive baseline on a query.
    Reactive(ReactiveArgs),
    /// Compare plan-driven and reactive token use.
    Compare(CompareArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// `wiki:<corpus.jsonl>` or `grid:<case.json>`.
    #[arg(long)]
    env: String,
    /// Shared grid session id; state persists in the session directory.
    #[arg(long)]
    session: Option<String>,
    #[arg(long, default_value = ".plexec-sessions")]
    session_dir: PathBuf,
}

#[derive(Args)]
struct OutputArgs {
    /// Append the trace as JSON lines to this file instead of printing it.
    #[arg(long)]
    trace_out: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    plan: PathBuf,
    #[command(flatten)]
    env: EnvArgs,
    /// `rule`, `scripted:<script.json>` or `http`.
    #[arg(long, default_value = "rule")]
    backend: String,
    /// Cap on loop passes; the plan's own bound applies when lower.
    #[arg(long)]
    max_iterations: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_INVARIANCE_WINDOW)]
    invariance_window: u32,
    /// Run parallel branches one after another.
    #[arg(long)]
    sequential: bool,
    /// Initial memory binding `name=value`; the value is read as JSON, else as a string.
    #[arg(long = "bind", value_name = "NAME=VALUE")]
    binds: Vec<String>,
    /// Reserved; execution is deterministic.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct ReactiveArgs {
    #[arg(long)]
    query: String,
    #[command(flatten)]
    env: EnvArgs,
    /// `scripted:<script.json>` or `http`.
    #[arg(long)]
    backend: String,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    step_cap: u32,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Use the synthetic linear family with this many rounds.
    #[arg(long, conflicts_with_all = ["plan", "env"])]
    synthetic: Option<usize>,
    /// Words per synthetic tool result.
    #[arg(long, default_value_t = DEFAULT_WORDS)]
    words: usize,
    #[arg(long, requires_all = ["env", "plan_backend", "reactive_backend"])]
    plan: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Reactive query; defaults to the plan's query.
    #[arg(long)]
    query: Option<String>,
    #[arg(long)]
    plan_backend: Option<String>,
    #[arg(long)]
    reactive_backend: Option<String>,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    step_cap: u32,
    #[arg(long)]
    report_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Validate { plan } => cmd_validate(&plan),
        Command::Run(args) => cmd_run(args),
        Command::Reactive(args) => cmd_reactive(args),
        Command::Compare(args) => cmd_compare(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn exit_code(reason: HaltReason) -> u8 {
    match reason {
        HaltReason::Completed | HaltReason::TerminationCriterionMet => 0,
        HaltReason::Aborted => EXIT_ABORTED,
        HaltReason::MaxIterationsReached => EXIT_MAX_ITERATIONS,
        HaltReason::InvarianceDetected => EXIT_INVARIANCE,
        HaltReason::UnmetDependency | HaltReason::Error | HaltReason::StepCapExhausted => EXIT_ERROR,
    }
}

fn cmd_validate(path: &Path) -> Result<u8> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let plan = match dsl::parse_plan_bytes(&bytes) {
        Ok(plan) => plan,
        Err(e) => {
            println!("{e}");
            return Ok(EXIT_INVALID);
        }
    };
    let report = validate_plan_with(&plan, &external_inputs(&plan));
    if report.is_valid() {
        println!("valid: {} steps", plan.steps.len());
        Ok(0)
    } else {
        print!("{report}");
        Ok(EXIT_INVALID)
    }
}

/// Tools for one run plus the grid session to persist afterwards, if any.
struct Environment {
    tools: ToolRegistry,
    grid: Option<(GridSession, PathBuf)>,
}

impl Environment {
    fn open(args: &EnvArgs) -> Result<Self> {
        let (kind, path) = args
            .env
            .split_once(':')
            .ok_or_else(|| anyhow!("--env must be wiki:<path> or grid:<path>, got `{}`", args.env))?;
        match kind {
            "wiki" => {
                if args.session.is_some() {
                    bail!("--session applies to grid environments only");
                }
                let corpus = WikiCorpus::load(Path::new(path))?;
                Ok(Self {
                    tools: wiki_tools(Arc::new(WikiSession::new(Arc::new(corpus)))),
                    grid: None,
                })
            }
            "grid" => {
                let case = GridCase::load(Path::new(path))?;
                let (state, file) = match &args.session {
                    Some(id) => {
                        if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
                            bail!("session id must be non-empty and use only letters, digits, '-' and '_'");
                        }
                        let file = args.session_dir.join(format!("{id}.json"));
                        let state = if file.exists() {
                            GridState::load(&file)?
                        } else {
                            GridState::new(id.clone(), case)
                        };
                        (state, Some(file))
                    }
                    None => (GridState::new("ephemeral", case), None),
                };
                let session = GridSession::new(state);
                Ok(Self {
                    tools: grid_tools(&session),
                    grid: file.map(|f| (session, f)),
                })
            }
            other => bail!("unknown environment kind `{other}` (expected wiki or grid)"),
        }
    }

    fn persist(&self) -> Result<()> {
        if let Some((session, file)) = &self.grid {
            session.snapshot().save(file)?;
        }
        Ok(())
    }
}

fn open_backend(spec: &str) -> Result<Box<dyn AgentBackend>> {
    match spec.split_once(':') {
        _ if spec == "rule" => Ok(Box::new(RuleBackend)),
        _ if spec == "http" => {
            let config = HttpConfig::from_env().map_err(|e| anyhow!(e))?;
            Ok(Box::new(HttpBackend::new(config)))
        }
        Some(("scripted", path)) => Ok(Box::new(ScriptedBackend::from_file(Path::new(path))?)),
        _ => bail!("unknown backend `{spec}` (expected rule, scripted:<path> or http)"),
    }
}

fn parse_binds(binds: &[String]) -> Result<BTreeMap<String, Value>> {
    binds
        .iter()
        .map(|b| {
            let (name, raw) = b
                .split_once('=')
                .ok_or_else(|| anyhow!("--bind expects NAME=VALUE, got `{b}`"))?;
            let value = match serde_json::from_str::<serde_json::Value>(raw) {
                Ok(json) => Value::from_json(json).map_err(|e| anyhow!("--bind {name}: {e}"))?,
                Err(_) => Value::from(raw),
            };
            Ok((name.to_string(), value))
        })
        .collect()
}

fn emit_trace(trace: &ExecutionTrace, out: &OutputArgs) -> Result<()> {
    if let Some(path) = &out.trace_out {
        TraceSink::append_to(path)
            .and_then(|sink| sink.write(trace))
            .with_context(|| format!("writing trace to {}", path.display()))?;
    }
    let text = match (out.format, out.trace_out.is_some()) {
        (Format::Json, false) => trace.to_jsonl(),
        (Format::Json, true) => serde_json::to_string(&trace.summary)? + "\n",
        (Format::Text, _) => trace.to_text(),
    };
    std::io::stdout().write_all(text.as_bytes())?;
    Ok(())
}

fn write_report(path: &Path, report: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(report)? + "\n";
    fs::write(path, text).with_context(|| format!("writing report to {}", path.display()))
}

fn run_report(outcome: &RunOutcome) -> serde_json::Value {
    let memory: serde_json::Map<String, serde_json::Value> = outcome
        .memory
        .iter()
        .map(|(name, b)| (name.to_string(), b.value.to_json()))
        .collect();
    serde_json::json!({
        "summary": outcome.trace.summary,
        "memory": memory,
        "error": outcome.error.as_ref().map(|e| e.to_string()),
    })
}

fn cmd_run(args: RunArgs) -> Result<u8> {
    let text = fs::read(&args.plan).with_context(|| format!("reading {}", args.plan.display()))?;
    let plan = dsl::parse_plan_bytes(&text).with_context(|| format!("parsing {}", args.plan.display()))?;
    let env = Environment::open(&args.env)?;
    let backend = open_backend(&args.backend)?;
    let initial = parse_binds(&args.binds)?;
    let policy = HaltPolicy {
        max_iterations: args.max_iterations,
        invariance_window: args.invariance_window,
        threads: !args.sequential,
    };
    let outcome = run_plan(&plan, &env.tools, backend.as_ref(), initial, &policy)?;
    env.persist()?;
    emit_trace(&outcome.trace, &args.out)?;
    if let Some(path) = &args.out.report_out {
        write_report(path, &run_report(&outcome))?;
    }
    if let Some(e) = &outcome.error {
        eprintln!("{e}");
    }
    Ok(exit_code(outcome.halt_reason()))
}

fn cmd_reactive(args: ReactiveArgs) -> Result<u8> {
    let env = Environment::open(&args.env)?;
    let backend = open_backend(&args.backend)?;
    let trace = run_reactive(&args.query, &env.tools, backend.as_ref(), args.step_cap)?;
    env.persist()?;
    emit_trace(&trace, &args.out)?;
    if let Some(path) = &args.out.report_out {
        write_report(path, &serde_json::json!({ "summary": trace.summary }))?;
    }
    Ok(exit_code(trace.summary.halt_reason))
}

fn cmd_compare(args: CompareArgs) -> Result<u8> {
    let report = match (args.synthetic, &args.plan) {
        (Some(n), _) => compare_synthetic(n, args.words)?,
        (None, Some(plan_path)) => {
            let text = fs::read(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
            let plan = dsl::parse_plan_bytes(&text)?;
            let env_spec = args.env.clone().expect("clap requires --env");
            let env_args = |spec: String| EnvArgs {
                env: spec,
                session: None,
                session_dir: PathBuf::new(),
            };
            let plan_env = Environment::open(&env_args(env_spec.clone()))?;
            let plan_backend = open_backend(args.plan_backend.as_deref().expect("clap requires --plan-backend"))?;
            let planned = run_plan(
                &plan,
                &plan_env.tools,
                plan_backend.as_ref(),
                BTreeMap::new(),
                &HaltPolicy::default(),
            )?;
            let reactive_env = Environment::open(&env_args(env_spec))?;
            let reactive_backend = open_backend(
                args.reactive_backend
                    .as_deref()
                    .expect("clap requires --reactive-backend"),
            )?;
            let query = args.query.clone().unwrap_or_else(|| plan.query.clone());
            let reactive = run_reactive(&query, &reactive_env.tools, reactive_backend.as_ref(), args.step_cap)?;
            CompareReport::new(None, &planned.trace, &reactive)
        }
        (None, None) => {
            bail!("compare needs --synthetic N or --plan with --env, --plan-backend and --reactive-backend")
        }
    };
    let json = serde_json::to_value(&report)?;
    match args.format {
        Format::Json => println!("{}", serde_json::to_string(&json)?),
        Format::Text => print!("{}", report.to_text()),
    }
    if let Some(path) = &args.report_out {
        write_report(path, &json)?;
    }
    Ok(0)
}
