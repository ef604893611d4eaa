//! Agent backends: turn a step context plus a planned action into a concrete
//! decision.

mod http;
mod rule;
mod scripted;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::condition::{EvalError, Scope, VarPath};
use crate::env::{Args, ToolSpec};
use crate::executor::CompositeContext;
use crate::logic::{ActionCallExpr, ArgValue};
use crate::plan::StepId;
use crate::value::Value;

pub use http::{HttpBackend, HttpConfig, API_KEY_VAR, ENDPOINT_VAR, MODEL_VAR, TIMEOUT_VAR};
pub use rule::RuleBackend;
pub use scripted::{ScriptEntry, ScriptError, ScriptedBackend};

#[derive(Debug, Clone, PartialEq)]
pub enum AgentDecision {
    ToolCall {
        tool: String,
        args: Args,
        result_binding: Option<String>,
        thought: Option<String>,
    },
    /// Answer the request directly with a value; no tool is called.
    Finish(Value),
    Fail(String),
}

impl AgentDecision {
    pub fn call(tool: &str, args: impl IntoIterator<Item = (&'static str, Value)>) -> Self {
        AgentDecision::ToolCall {
            tool: tool.into(),
            args: args.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            result_binding: None,
            thought: None,
        }
    }
}

/// One completed turn of a reactive loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Turn {
    pub thought: Option<String>,
    pub tool: String,
    pub args: Args,
    pub observation: Value,
}

#[derive(Debug, Clone, Copy)]
pub enum Request<'a> {
    /// A planned `EXECUTE` inside a plan step.
    Action {
        context: &'a CompositeContext,
        call: &'a ActionCallExpr,
        /// Current values of the variables the call references.
        scope: &'a BTreeMap<String, Value>,
    },
    /// A free-form turn of the reactive baseline; `step` is 1-based.
    Reactive {
        prompt: &'a str,
        step: u32,
        history: &'a [Turn],
        tools: &'a [ToolSpec],
    },
}

impl Request<'_> {
    /// `(step, iteration)` for plan actions; `(turn, 0)` for reactive turns.
    pub fn position(&self) -> (u32, u32) {
        match self {
            Request::Action { context, .. } => (context.step.0, context.iteration),
            Request::Reactive { step, .. } => (*step, 0),
        }
    }

    pub fn step(&self) -> StepId {
        StepId(self.position().0)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("backend declined: {0}")]
    Declined(String),
    #[error("decision binds `{got}` but the plan binds `{planned}`")]
    BindingMismatch { planned: String, got: String },
    #[error("script: {0}")]
    Script(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("malformed reply: {0}")]
    MalformedReply(String),
}

impl From<EvalError> for BackendError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnboundVariable(v) => BackendError::UnboundVariable(v),
            EvalError::TypeMismatch(m) => BackendError::TypeMismatch(m),
        }
    }
}

pub trait AgentBackend: Send + Sync {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError>;

    /// Whether `decide` may be called from several threads within one run
    /// without changing its answers.
    fn concurrent_safe(&self) -> bool {
        false
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        (**self).decide(request)
    }

    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

impl<B: AgentBackend + ?Sized> AgentBackend for Box<B> {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        (**self).decide(request)
    }

    fn concurrent_safe(&self) -> bool {
        (**self).concurrent_safe()
    }
}

/// Backend defined by a closure; convenient for tests and synthetic agents.
pub struct FnBackend<F> {
    f: F,
    concurrent: bool,
}

impl<F> FnBackend<F>
where
    F: Fn(Request<'_>) -> Result<AgentDecision, BackendError> + Send + Sync,
{
    pub fn new(f: F) -> Self {
        Self { f, concurrent: false }
    }

    pub fn concurrent(mut self) -> Self {
        self.concurrent = true;
        self
    }
}

impl<F> AgentBackend for FnBackend<F>
where
    F: Fn(Request<'_>) -> Result<AgentDecision, BackendError> + Send + Sync,
{
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        (self.f)(request)
    }

    fn concurrent_safe(&self) -> bool {
        self.concurrent
    }
}

/// Substitutes variable references in a planned call with their values.
pub fn resolve_args<S: Scope + ?Sized>(call: &ActionCallExpr, scope: &S) -> Result<Args, BackendError> {
    call.args
        .iter()
        .map(|(k, v)| {
            let value = match v {
                ArgValue::Literal(v) => v.clone(),
                ArgValue::Var(path) => resolve_path(path, scope)?,
            };
            Ok((k.clone(), value))
        })
        .collect()
}

fn resolve_path<S: Scope + ?Sized>(path: &VarPath, scope: &S) -> Result<Value, BackendError> {
    Ok(scope.resolve(path)?.clone())
}

/// Parses a decision in the reply schema:
/// `{"tool": name, "args": {..}, "bind"?: name, "thought"?: text}`,
/// `{"finish": value}` or `{"fail": reason}`.
pub fn parse_decision(json: &serde_json::Value) -> Result<AgentDecision, String> {
    let obj = json.as_object().ok_or("reply is not a JSON object")?;
    if let Some(v) = obj.get("finish") {
        let value = Value::from_json(v.clone()).map_err(|e| format!("finish value: {e}"))?;
        return Ok(AgentDecision::Finish(value));
    }
    if let Some(v) = obj.get("fail") {
        let reason = v.as_str().ok_or("`fail` must be a string")?;
        return Ok(AgentDecision::Fail(reason.to_string()));
    }
    let tool = obj
        .get("tool")
        .and_then(|t| t.as_str())
        .ok_or("expected one of `tool`, `finish` or `fail`")?;
    let args = match obj.get("args") {
        None => Args::new(),
        Some(serde_json::Value::Object(map)) => map
            .iter()
            .map(|(k, v)| {
                Ok((
                    k.clone(),
                    Value::from_json(v.clone()).map_err(|e| format!("argument `{k}`: {e}"))?,
                ))
            })
            .collect::<Result<_, String>>()?,
        Some(_) => return Err("`args` must be an object".into()),
    };
    let text = |key: &str| -> Result<Option<String>, String> {
        match obj.get(key) {
            None => Ok(None),
            Some(serde_json::Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(format!("`{key}` must be a string")),
        }
    };
    Ok(AgentDecision::ToolCall {
        tool: tool.to_string(),
        args,
        result_binding: text("bind")?,
        thought: text("thought")?,
    })
}

/// Inverse of [`parse_decision`].
pub fn decision_to_json(decision: &AgentDecision) -> serde_json::Value {
    match decision {
        AgentDecision::ToolCall {
            tool,
            args,
            result_binding,
            thought,
        } => {
            let mut obj = serde_json::Map::new();
            obj.insert("tool".into(), tool.clone().into());
            obj.insert("args".into(), serde_json::to_value(args).expect("args serialize"));
            if let Some(b) = result_binding {
                obj.insert("bind".into(), b.clone().into());
            }
            if let Some(t) = thought {
                obj.insert("thought".into(), t.clone().into());
            }
            serde_json::Value::Object(obj)
        }
        AgentDecision::Finish(v) => serde_json::json!({ "finish": v.to_json() }),
        AgentDecision::Fail(r) => serde_json::json!({ "fail": r }),
    }
}
