//! Reactive baseline: every turn sees the query, the tool list and the whole
//! transcript so far, and picks the next action from that.

use std::fmt::Write;
use std::time::Instant;

use thiserror::Error;

use serde::Serialize;

use crate::agents::{AgentBackend, AgentDecision, Request, RuleBackend, Turn};
use crate::env::synthetic::{synthetic_plan, synthetic_query, synthetic_tools, SyntheticAgent};
use crate::env::{ToolRegistry, ToolSpec};
use crate::executor::{
    count_tokens, run_plan, ExecutionTrace, HaltPolicy, HaltReason, Mode, Outcome, RunSummary, SetupError,
    ToolCallRecord, TraceRecord, REPLY_SCHEMA,
};
use crate::value::Value;

/// Turn cap used by the CLI when none is given.
pub const DEFAULT_STEP_CAP: u32 = 60;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReactiveError {
    #[error("step cap must be at least 1")]
    ZeroStepCap,
}

/// Prompt for one turn: the question, tool signatures, reply protocol, then
/// one `Thought`/`Action`/`Observation` block per earlier turn.
pub fn render_prompt(query: &str, tools: &[ToolSpec], history: &[Turn]) -> String {
    let mut out = String::new();
    writeln!(out, "Question: {query}").unwrap();
    out.push_str("Tools:\n");
    for t in tools {
        writeln!(out, "  {}", t.signature()).unwrap();
    }
    writeln!(out, "{REPLY_SCHEMA}").unwrap();
    for turn in history {
        if let Some(thought) = &turn.thought {
            writeln!(out, "Thought: {thought}").unwrap();
        }
        let args = serde_json::to_string(&turn.args).expect("args serialize");
        writeln!(out, "Action: {}({args})", turn.tool).unwrap();
        writeln!(out, "Observation: {}", turn.observation).unwrap();
    }
    out
}

/// Runs the loop until the backend finishes, fails, or `step_cap` turns have
/// called tools. A tool error becomes that turn's observation.
pub fn run_reactive(
    query: &str,
    registry: &ToolRegistry,
    backend: &dyn AgentBackend,
    step_cap: u32,
) -> Result<ExecutionTrace, ReactiveError> {
    if step_cap == 0 {
        return Err(ReactiveError::ZeroStepCap);
    }
    let tools: Vec<ToolSpec> = registry.specs().cloned().collect();
    let mut history: Vec<Turn> = Vec::new();
    let mut records = Vec::new();
    let mut halt = (HaltReason::StepCapExhausted, None, None);

    for t in 1..=step_cap {
        let started = Instant::now();
        let prompt = render_prompt(query, &tools, &history);
        let mut record = TraceRecord {
            step: t,
            iteration: 0,
            tokens: count_tokens(&prompt),
            tool_calls: Vec::new(),
            observations: Vec::new(),
            outcome: Outcome::Ok,
            ms: 0,
        };
        let decision = backend.decide(Request::Reactive {
            prompt: &prompt,
            step: t,
            history: &history,
            tools: &tools,
        });
        let stop = match decision {
            Ok(AgentDecision::ToolCall {
                tool, args, thought, ..
            }) => {
                let observation = registry
                    .call(&tool, &args)
                    .unwrap_or_else(|e| Value::String(format!("error: {e}")));
                record.tool_calls.push(ToolCallRecord {
                    tool: tool.clone(),
                    args: args.clone(),
                });
                record.observations.push(observation.clone());
                history.push(Turn {
                    thought,
                    tool,
                    args,
                    observation,
                });
                None
            }
            Ok(AgentDecision::Finish(answer)) => Some((HaltReason::Completed, None, Some(answer))),
            Ok(AgentDecision::Fail(reason)) => {
                record.outcome = Outcome::Failed;
                Some((HaltReason::Error, Some(format!("backend declined: {reason}")), None))
            }
            Err(e) => {
                record.outcome = Outcome::Failed;
                Some((HaltReason::Error, Some(e.to_string()), None))
            }
        };
        record.ms = started.elapsed().as_millis() as u64;
        records.push(record);
        if let Some(s) = stop {
            halt = s;
            break;
        }
    }

    let (halt_reason, mut detail, answer) = halt;
    if halt_reason == HaltReason::StepCapExhausted {
        detail = Some(format!("no final answer after {step_cap} steps"));
    }
    Ok(ExecutionTrace::new(
        records,
        RunSummary {
            mode: Mode::Reactive,
            halt_reason,
            total_steps: 0,
            total_tool_calls: 0,
            total_tokens: 0,
            plan_tokens: 0,
            detail,
            answer,
        },
    ))
}

/// Token and call totals of one run. For plan-driven runs `total_tokens`
/// includes the plan text itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeTotals {
    pub total_tokens: usize,
    pub tool_calls: usize,
    pub halt_reason: HaltReason,
}

impl ModeTotals {
    pub fn of(trace: &ExecutionTrace) -> Self {
        Self {
            total_tokens: trace.summary.total_tokens + trace.summary.plan_tokens,
            tool_calls: trace.summary.total_tool_calls,
            halt_reason: trace.summary.halt_reason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    pub plan: ModeTotals,
    pub reactive: ModeTotals,
}

impl CompareReport {
    pub fn new(rounds: Option<usize>, plan: &ExecutionTrace, reactive: &ExecutionTrace) -> Self {
        Self {
            rounds,
            plan: ModeTotals::of(plan),
            reactive: ModeTotals::of(reactive),
        }
    }

    /// Reactive tokens per plan-driven token.
    pub fn token_ratio(&self) -> f64 {
        self.reactive.total_tokens as f64 / self.plan.total_tokens.max(1) as f64
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(n) = self.rounds {
            writeln!(out, "rounds: {n}").unwrap();
        }
        writeln!(out, "{:<10} {:>12} {:>10}  halt_reason", "mode", "tokens", "tool_calls").unwrap();
        for (name, t) in [("plan", &self.plan), ("reactive", &self.reactive)] {
            writeln!(
                out,
                "{name:<10} {:>12} {:>10}  {}",
                t.total_tokens, t.tool_calls, t.halt_reason
            )
            .unwrap();
        }
        writeln!(out, "ratio: {:.3}", self.token_ratio()).unwrap();
        out
    }
}

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Setup(#[from] SetupError),
    #[error(transparent)]
    Reactive(#[from] ReactiveError),
}

/// Both traces for the `rounds`-round synthetic task, the plan-driven one
/// under the rule backend.
pub fn run_synthetic(rounds: usize, words: usize) -> Result<(ExecutionTrace, ExecutionTrace), CompareError> {
    let tools = synthetic_tools(words);
    let plan = run_plan(
        &synthetic_plan(rounds),
        &tools,
        &RuleBackend,
        Default::default(),
        &HaltPolicy::default(),
    )?;
    let cap = u32::try_from(rounds + 1).unwrap_or(u32::MAX);
    let reactive = run_reactive(&synthetic_query(rounds), &tools, &SyntheticAgent { rounds }, cap)?;
    Ok((plan.trace, reactive))
}

pub fn compare_synthetic(rounds: usize, words: usize) -> Result<CompareReport, CompareError> {
    let (plan, reactive) = run_synthetic(rounds, words)?;
    Ok(CompareReport::new(Some(rounds), &plan, &reactive))
}
