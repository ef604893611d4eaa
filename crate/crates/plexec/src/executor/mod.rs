//! The control-flow executor: runs a validated plan step by step against a
//! tool registry, delegating each planned action to an agent backend.
//!
//! Halting is enforced here rather than left to the backend. Every loop
//! pass anywhere in the run counts against one run-wide budget, the
//! effective `max_iterations`, so a run performs at most that many passes
//! no matter what the backend answers.

mod context;
mod interp;
mod memory;
mod tokens;
mod trace;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::agents::{AgentBackend, BackendError};
use crate::condition::EvalError;
use crate::depgraph::{build_graph, GraphError};
use crate::env::{ToolError, ToolRegistry};
use crate::plan::{external_inputs, validate_plan_with, Plan, StepId, ValidationReport};
use crate::value::Value;

pub use context::{build_context, CompositeContext, REPLY_SCHEMA};
pub use memory::{Binding, MemoryState, Provenance};
pub use tokens::count_tokens;
pub use trace::{
    ExecutionTrace, HaltReason, Mode, Outcome, RunSummary, ToolCallRecord, TraceParseError, TraceRecord, TraceSink,
};

pub const DEFAULT_INVARIANCE_WINDOW: u32 = 2;

/// Run-time halting configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaltPolicy {
    /// Cap on the plan's `max_iterations`; it can lower the bound, never raise it.
    pub max_iterations: Option<u32>,
    /// Consecutive identical snapshots of a loop's written variables that
    /// halt the run.
    pub invariance_window: u32,
    /// Allow running `PARALLEL` branches on threads when that cannot change
    /// the result.
    pub threads: bool,
}

impl Default for HaltPolicy {
    fn default() -> Self {
        Self {
            max_iterations: None,
            invariance_window: DEFAULT_INVARIANCE_WINDOW,
            threads: true,
        }
    }
}

impl HaltPolicy {
    pub fn effective_max_iterations(&self, plan: &Plan) -> u32 {
        match self.max_iterations {
            Some(cap) => cap.min(plan.max_iterations),
            None => plan.max_iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RunError {
    #[error("step {step} is not ready: unbound input(s) {}", missing.join(", "))]
    UnmetDependency { step: StepId, missing: Vec<String> },
    #[error("step {step} finished without binding declared output `{var}`")]
    MissingOutput { step: StepId, var: String },
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("aborted: {reason}")]
    AbortSignaled { reason: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SetupError {
    #[error("plan is invalid:\n{0}")]
    InvalidPlan(ValidationReport),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid halt policy: {0}")]
    InvalidPolicy(String),
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trace: ExecutionTrace,
    pub memory: MemoryState,
    /// Set when the run halted on an error or an abort.
    pub error: Option<RunError>,
}

impl RunOutcome {
    pub fn halt_reason(&self) -> HaltReason {
        self.trace.summary.halt_reason
    }
}

/// Runs `plan` to a halt.
///
/// The plan must validate once its external inputs are assumed bound;
/// inputs missing from `initial` surface as `unmet_dependency` when the
/// first consuming step is reached.
pub fn run_plan(
    plan: &Plan,
    registry: &ToolRegistry,
    backend: &dyn AgentBackend,
    initial: BTreeMap<String, Value>,
    policy: &HaltPolicy,
) -> Result<RunOutcome, SetupError> {
    if policy.invariance_window < 2 {
        return Err(SetupError::InvalidPolicy(format!(
            "invariance window must be at least 2, got {}",
            policy.invariance_window
        )));
    }
    let mut externals = external_inputs(plan);
    externals.extend(initial.keys().cloned());
    let report = validate_plan_with(plan, &externals);
    if !report.is_valid() {
        return Err(SetupError::InvalidPlan(report));
    }
    let graph = build_graph(plan)?;
    Ok(interp::run(
        plan,
        &graph,
        registry,
        backend,
        MemoryState::with_initial(initial),
        policy,
    ))
}
