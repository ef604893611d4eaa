//! Tool registry: the action set a run may invoke.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::value::{Value, ValueKind};

pub type Args = BTreeMap<String, Value>;

/// Tool handlers report failures as plain messages; the registry attaches the
/// tool name.
pub type Handler = Arc<dyn Fn(&Args) -> Result<Value, String> + Send + Sync>;

#[derive(Debug, Clone, PartialEq)]
pub struct ArgSpec {
    pub name: String,
    pub kind: ValueKind,
    pub required: bool,
}

impl ArgSpec {
    pub fn required(name: &str, kind: ValueKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: true,
        }
    }

    pub fn optional(name: &str, kind: ValueKind) -> Self {
        Self {
            name: name.into(),
            kind,
            required: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub args: Vec<ArgSpec>,
    pub result: ValueKind,
    /// False when repeated calls with equal arguments return equal results
    /// and change nothing observable.
    pub side_effects: bool,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, result: ValueKind) -> Self {
        Self {
            name: name.into(),
            description: description.into(),
            args: Vec::new(),
            result,
            side_effects: false,
        }
    }

    pub fn arg(mut self, spec: ArgSpec) -> Self {
        self.args.push(spec);
        self
    }

    pub fn mutating(mut self) -> Self {
        self.side_effects = true;
        self
    }

    /// `name(arg: kind, opt?: kind) -> kind`.
    pub fn signature(&self) -> String {
        let args: Vec<String> = self
            .args
            .iter()
            .map(|a| format!("{}{}: {}", a.name, if a.required { "" } else { "?" }, a.kind))
            .collect();
        format!("{}({}) -> {}", self.name, args.join(", "), self.result)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("tool `{tool}`: missing argument `{arg}`")]
    MissingArgument { tool: String, arg: String },
    #[error("tool `{tool}`: unexpected argument `{arg}`")]
    UnexpectedArgument { tool: String, arg: String },
    #[error("tool `{tool}`: argument `{arg}` must be {expected}, got {found}")]
    ArgumentType {
        tool: String,
        arg: String,
        expected: ValueKind,
        found: ValueKind,
    },
    #[error("tool `{tool}` returned {found}, declared {expected}")]
    ResultShape {
        tool: String,
        expected: ValueKind,
        found: ValueKind,
    },
    #[error("tool `{tool}` failed: {message}")]
    Failed { tool: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("tool `{0}` is already registered")]
pub struct DuplicateTool(pub String);

#[derive(Clone, Default)]
pub struct ToolRegistry {
    tools: BTreeMap<String, (ToolSpec, Handler)>,
}

impl fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.tools.keys()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(
        &mut self,
        spec: ToolSpec,
        handler: impl Fn(&Args) -> Result<Value, String> + Send + Sync + 'static,
    ) -> Result<(), DuplicateTool> {
        if self.tools.contains_key(&spec.name) {
            return Err(DuplicateTool(spec.name));
        }
        self.tools.insert(spec.name.clone(), (spec, Arc::new(handler)));
        Ok(())
    }

    /// Adds every tool of `other`; fails on the first name clash.
    pub fn merge(&mut self, other: ToolRegistry) -> Result<(), DuplicateTool> {
        for (name, entry) in other.tools {
            if self.tools.contains_key(&name) {
                return Err(DuplicateTool(name));
            }
            self.tools.insert(name, entry);
        }
        Ok(())
    }

    pub fn spec(&self, name: &str) -> Option<&ToolSpec> {
        self.tools.get(name).map(|(s, _)| s)
    }

    pub fn specs(&self) -> impl Iterator<Item = &ToolSpec> {
        self.tools.values().map(|(s, _)| s)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// Validates arguments against the schema, runs the handler, and checks
    /// the result shape.
    pub fn call(&self, tool: &str, args: &Args) -> Result<Value, ToolError> {
        let (spec, handler) = self
            .tools
            .get(tool)
            .ok_or_else(|| ToolError::UnknownTool(tool.to_string()))?;
        for a in &spec.args {
            match args.get(&a.name) {
                None if a.required => {
                    return Err(ToolError::MissingArgument {
                        tool: tool.into(),
                        arg: a.name.clone(),
                    })
                }
                Some(v) if !v.matches(a.kind) => {
                    return Err(ToolError::ArgumentType {
                        tool: tool.into(),
                        arg: a.name.clone(),
                        expected: a.kind,
                        found: v.kind(),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = args.keys().find(|k| !spec.args.iter().any(|a| &a.name == *k)) {
            return Err(ToolError::UnexpectedArgument {
                tool: tool.into(),
                arg: extra.clone(),
            });
        }
        let result = handler(args).map_err(|message| ToolError::Failed {
            tool: tool.into(),
            message,
        })?;
        if !result.matches(spec.result) {
            return Err(ToolError::ResultShape {
                tool: tool.into(),
                expected: spec.result,
                found: result.kind(),
            });
        }
        Ok(result)
    }
}

/// Argument accessors for handlers; the registry has already checked kinds.
pub(crate) fn arg_str<'a>(args: &'a Args, name: &str) -> Result<&'a str, String> {
    args.get(name)
        .and_then(Value::as_str)
        .ok_or_else(|| format!("argument `{name}` must be a string"))
}

pub(crate) fn arg_f64(args: &Args, name: &str) -> Result<f64, String> {
    args.get(name)
        .and_then(Value::as_f64)
        .ok_or_else(|| format!("argument `{name}` must be a number"))
}

pub(crate) fn arg_id(args: &Args, name: &str) -> Result<u32, String> {
    let n = arg_f64(args, name)?;
    if n >= 0.0 && n.fract() == 0.0 && n <= u32::MAX as f64 {
        Ok(n as u32)
    } else {
        Err(format!("argument `{name}` must be a non-negative integer, got {n}"))
    }
}
