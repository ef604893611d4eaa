//! Execution traces: per-segment records plus a run summary, serialized as
//! JSON lines.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::env::Args;
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool: String,
    pub args: Args,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Failed,
    Aborted,
    Skipped,
}

/// One step segment: the part of a step before, inside or after a loop pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub step: u32,
    pub iteration: u32,
    pub tokens: usize,
    pub tool_calls: Vec<ToolCallRecord>,
    pub observations: Vec<Value>,
    pub outcome: Outcome,
    pub ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    Completed,
    TerminationCriterionMet,
    MaxIterationsReached,
    Aborted,
    InvarianceDetected,
    UnmetDependency,
    Error,
    /// Reactive baseline only: the step cap ran out before a final answer.
    StepCapExhausted,
}

impl HaltReason {
    pub fn as_str(self) -> &'static str {
        match self {
            HaltReason::Completed => "completed",
            HaltReason::TerminationCriterionMet => "termination_criterion_met",
            HaltReason::MaxIterationsReached => "max_iterations_reached",
            HaltReason::Aborted => "aborted",
            HaltReason::InvarianceDetected => "invariance_detected",
            HaltReason::UnmetDependency => "unmet_dependency",
            HaltReason::Error => "error",
            HaltReason::StepCapExhausted => "step_cap_exhausted",
        }
    }

    pub fn is_success(self) -> bool {
        matches!(self, HaltReason::Completed | HaltReason::TerminationCriterionMet)
    }
}

impl std::fmt::Display for HaltReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Plan,
    Reactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub halt_reason: HaltReason,
    /// Steps that ran at least partially.
    pub total_steps: usize,
    pub total_tool_calls: usize,
    /// Sum of record token counts.
    pub total_tokens: usize,
    /// Size of the plan text itself; zero for reactive runs.
    pub plan_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionTrace {
    pub records: Vec<TraceRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace has no summary line")]
    MissingSummary,
}

impl ExecutionTrace {
    pub(crate) fn new(records: Vec<TraceRecord>, mut summary: RunSummary) -> Self {
        summary.total_tokens = records.iter().map(|r| r.tokens).sum();
        summary.total_tool_calls = records.iter().map(|r| r.tool_calls.len()).sum();
        summary.total_steps = records
            .iter()
            .filter(|r| r.outcome != Outcome::Skipped)
            .map(|r| r.step)
            .collect::<BTreeSet<_>>()
            .len();
        Self { records, summary }
    }

    pub fn tool_calls(&self) -> impl Iterator<Item = (&TraceRecord, &ToolCallRecord)> {
        self.records
            .iter()
            .flat_map(|r| r.tool_calls.iter().map(move |c| (r, c)))
    }

    /// One JSON object per record, then the summary object.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out.push_str(&serde_json::to_string(&self.summary).expect("summary serializes"));
        out.push('\n');
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, TraceParseError> {
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        let (last, body) = lines.split_last().ok_or(TraceParseError::MissingSummary)?;
        let records = body
            .iter()
            .enumerate()
            .map(|(i, l)| serde_json::from_str(l).map_err(|source| TraceParseError::Json { line: i + 1, source }))
            .collect::<Result<_, _>>()?;
        let summary = serde_json::from_str(last).map_err(|source| TraceParseError::Json {
            line: lines.len(),
            source,
        })?;
        Ok(Self { records, summary })
    }

    /// Text table: one line per record, then the summary.
    pub fn to_text(&self) -> String {
        let mut out = String::from("step iter tokens calls outcome    ms\n");
        for r in &self.records {
            let outcome = serde_json::to_value(r.outcome).expect("outcome serializes");
            out.push_str(&format!(
                "{:>4} {:>4} {:>6} {:>5} {:<9} {:>4}\n",
                r.step,
                r.iteration,
                r.tokens,
                r.tool_calls.len(),
                outcome.as_str().unwrap_or_default(),
                r.ms
            ));
        }
        let s = &self.summary;
        out.push_str(&format!(
            "halt: {}  steps: {}  tool calls: {}  tokens: {} (+{} plan)\n",
            s.halt_reason, s.total_steps, s.total_tool_calls, s.total_tokens, s.plan_tokens
        ));
        if let Some(d) = &s.detail {
            out.push_str(&format!("detail: {d}\n"));
        }
        if let Some(a) = &s.answer {
            out.push_str(&format!("answer: {a}\n"));
        }
        out
    }
}

/// Append-only JSON-lines destination that several runs may share.
pub struct TraceSink {
    out: Mutex<Box<dyn Write + Send>>,
}

impl TraceSink {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        Self {
            out: Mutex::new(Box::new(out)),
        }
    }

    pub fn append_to(path: &Path) -> io::Result<Self> {
        let file: File = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self::new(file))
    }

    /// Writes the whole trace under one lock so concurrent runs never
    /// interleave lines.
    pub fn write(&self, trace: &ExecutionTrace) -> io::Result<()> {
        let mut out = self.out.lock().map_err(|_| io::Error::other("trace sink poisoned"))?;
        out.write_all(trace.to_jsonl().as_bytes())?;
        out.flush()
    }
}

#[derive(Debug, Clone)]
pub(crate) enum EventKind {
    StepStart {
        step: u32,
        iteration: u32,
    },
    Context {
        tokens: usize,
    },
    Call {
        tool: String,
        args: Args,
        observation: Value,
    },
    PassStart {
        iteration: u32,
    },
    PassEnd,
    StepEnd {
        outcome: Outcome,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct Event {
    pub kind: EventKind,
    pub at: Instant,
}

impl Event {
    pub fn now(kind: EventKind) -> Self {
        Self {
            kind,
            at: Instant::now(),
        }
    }
}

struct Open {
    step: u32,
    iteration: u32,
    pass: bool,
    tokens: usize,
    calls: Vec<ToolCallRecord>,
    observations: Vec<Value>,
    start: Instant,
}

impl Open {
    fn new(step: u32, iteration: u32, pass: bool, start: Instant) -> Self {
        Self {
            step,
            iteration,
            pass,
            tokens: 0,
            calls: Vec::new(),
            observations: Vec::new(),
            start,
        }
    }

    fn is_empty(&self) -> bool {
        self.tokens == 0 && self.calls.is_empty()
    }
}

/// Folds an event stream into records. Loop passes always get their own
/// record; empty segments outside passes are dropped unless the step would
/// otherwise have no record at all.
pub(crate) fn build_records(events: &[Event]) -> Vec<TraceRecord> {
    let mut records: Vec<TraceRecord> = Vec::new();
    let mut open: Option<Open> = None;
    let mut step_first = 0;

    let close = |open: Option<Open>, at: Instant, records: &mut Vec<TraceRecord>, step_first: usize| {
        if let Some(o) = open {
            if o.is_empty() && !o.pass && records.len() > step_first {
                return;
            }
            records.push(TraceRecord {
                step: o.step,
                iteration: o.iteration,
                tokens: o.tokens,
                tool_calls: o.calls,
                observations: o.observations,
                outcome: Outcome::Ok,
                ms: at.saturating_duration_since(o.start).as_millis() as u64,
            });
        }
    };

    for ev in events {
        match &ev.kind {
            EventKind::StepStart { step, iteration } => {
                close(open.take(), ev.at, &mut records, step_first);
                step_first = records.len();
                open = Some(Open::new(*step, *iteration, false, ev.at));
            }
            EventKind::Context { tokens } => {
                if let Some(o) = open.as_mut() {
                    o.tokens += tokens;
                }
            }
            EventKind::Call {
                tool,
                args,
                observation,
            } => {
                if let Some(o) = open.as_mut() {
                    o.calls.push(ToolCallRecord {
                        tool: tool.clone(),
                        args: args.clone(),
                    });
                    o.observations.push(observation.clone());
                }
            }
            EventKind::PassStart { iteration } => {
                let step = open.as_ref().map_or(0, |o| o.step);
                close(open.take(), ev.at, &mut records, step_first);
                open = Some(Open::new(step, *iteration, true, ev.at));
            }
            EventKind::PassEnd => {
                let (step, iteration) = open.as_ref().map_or((0, 0), |o| (o.step, o.iteration));
                close(open.take(), ev.at, &mut records, step_first);
                open = Some(Open::new(step, iteration, false, ev.at));
            }
            EventKind::StepEnd { outcome } => {
                close(open.take(), ev.at, &mut records, step_first);
                if let Some(last) = records[step_first..].last_mut() {
                    last.outcome = *outcome;
                }
            }
        }
    }
    if let Some(o) = open.take() {
        let at = o.start;
        close(Some(o), at, &mut records, step_first);
    }
    records
}
