//! Synthetic linear task family: `n` chained rounds of one `transform` tool.
//!
//! Round `k` feeds the output of round `k - 1` back into `transform`. The
//! plan form has one step per round; the reactive form asks for all rounds
//! in one question and carries every earlier observation in its prompt.

use crate::agents::{AgentBackend, AgentDecision, BackendError, Request};
use crate::condition::VarPath;
use crate::logic::{ActionCallExpr, ArgValue, LogicNode};
use crate::plan::{Plan, Step, WorkflowTopology};
use crate::value::{Value, ValueKind};

use super::registry::{ArgSpec, ToolRegistry, ToolSpec};

/// Words in each `transform` result.
pub const DEFAULT_WORDS: usize = 40;
pub const SEED: &str = "seed";

/// `transform(value, round)`: a string of `words` tokens that depends on the
/// round only. Side-effect-free.
pub fn synthetic_tools(words: usize) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(
        ToolSpec::new("transform", "Apply one refinement round to a value", ValueKind::String)
            .arg(ArgSpec::required("value", ValueKind::Any))
            .arg(ArgSpec::required("round", ValueKind::Number)),
        move |args| {
            let round = args.get("round").and_then(Value::as_f64).unwrap_or(0.0);
            let text: Vec<String> = (0..words).map(|i| format!("r{round}w{i}")).collect();
            Ok(Value::String(text.join(" ")))
        },
    )
    .expect("fresh registry");
    r
}

pub fn synthetic_query(n: usize) -> String {
    format!("Apply transform {n} times in sequence starting from '{SEED}' and report the final value")
}

fn var(k: usize) -> String {
    format!("x_{k}")
}

/// One step per round; step `k` reads `x_{k-1}` and writes `x_k`.
pub fn synthetic_plan(n: usize) -> Plan {
    let steps = (1..=n)
        .map(|k| {
            let value = if k == 1 {
                ArgValue::Literal(Value::from(SEED))
            } else {
                ArgValue::Var(VarPath::var(var(k - 1)))
            };
            let call = ActionCallExpr::new("transform")
                .arg("value", value)
                .arg("round", ArgValue::Literal(Value::Number(k as f64)))
                .bind(var(k));
            let mut step = Step::new(k as u32, format!("Run transform round {k}"));
            step.context = "synthetic".into();
            step.logic = vec![LogicNode::Execute(call)];
            if k > 1 {
                step.inputs = vec![var(k - 1)];
            }
            step.outputs = vec![var(k)];
            step
        })
        .collect();
    Plan {
        topology: WorkflowTopology::Sequential,
        termination: None,
        max_iterations: 1,
        query: synthetic_query(n),
        steps,
    }
}

/// Reactive agent for the family: calls `transform` on the latest
/// observation for `n` turns, then finishes with it.
#[derive(Debug, Clone, Copy)]
pub struct SyntheticAgent {
    pub rounds: usize,
}

impl AgentBackend for SyntheticAgent {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        let Request::Reactive { history, .. } = request else {
            return Err(BackendError::Declined(
                "the synthetic agent only plays reactive turns".into(),
            ));
        };
        let last = history.last().map(|t| t.observation.clone());
        if history.len() >= self.rounds {
            return Ok(AgentDecision::Finish(last.unwrap_or_else(|| Value::from(SEED))));
        }
        Ok(AgentDecision::call(
            "transform",
            [
                ("value", last.unwrap_or_else(|| Value::from(SEED))),
                ("round", Value::Number((history.len() + 1) as f64)),
            ],
        ))
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
