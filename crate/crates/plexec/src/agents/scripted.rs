use std::path::Path;
use std::sync::Mutex;

use serde::Deserialize;
use thiserror::Error;

use super::{parse_decision, resolve_args, AgentBackend, AgentDecision, BackendError, Request};

/// One scripted decision. `step` and `iteration`, when present, must match
/// the request it answers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptEntry {
    pub step: Option<u32>,
    pub iteration: Option<u32>,
    pub decision: AgentDecision,
}

impl ScriptEntry {
    pub fn at(step: u32, iteration: u32, decision: AgentDecision) -> Self {
        Self {
            step: Some(step),
            iteration: Some(iteration),
            decision,
        }
    }

    pub fn any(decision: AgentDecision) -> Self {
        Self {
            step: None,
            iteration: None,
            decision,
        }
    }

    fn matches(&self, (step, iteration): (u32, u32)) -> bool {
        self.step.is_none_or(|s| s == step) && self.iteration.is_none_or(|i| i == iteration)
    }
}

#[derive(Debug, Error)]
pub enum ScriptError {
    #[error("cannot read script {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid script JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("script entry {index}: {message}")]
    Entry { index: usize, message: String },
}

#[derive(Deserialize)]
struct ScriptFile {
    #[serde(default = "default_strict")]
    strict: bool,
    entries: Vec<EntryFile>,
}

fn default_strict() -> bool {
    true
}

#[derive(Deserialize)]
struct EntryFile {
    step: Option<u32>,
    iteration: Option<u32>,
    decision: serde_json::Value,
}

/// Replays a fixed sequence of decisions.
///
/// Entries are consumed strictly in order. In strict mode every request
/// must match the next entry. Otherwise a request that does not match falls
/// back to literal execution of the planned action, leaving the entry for a
/// later request.
#[derive(Debug)]
pub struct ScriptedBackend {
    entries: Vec<ScriptEntry>,
    strict: bool,
    cursor: Mutex<usize>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>, strict: bool) -> Self {
        Self {
            entries,
            strict,
            cursor: Mutex::new(0),
        }
    }

    /// Parses `{"strict": bool, "entries": [{"step", "iteration", "decision"}]}`;
    /// decisions use the reply schema of the HTTP backend.
    pub fn from_json(text: &str) -> Result<Self, ScriptError> {
        let file: ScriptFile = serde_json::from_str(text)?;
        let entries = file
            .entries
            .into_iter()
            .enumerate()
            .map(|(index, e)| {
                let decision = parse_decision(&e.decision).map_err(|message| ScriptError::Entry { index, message })?;
                Ok(ScriptEntry {
                    step: e.step,
                    iteration: e.iteration,
                    decision,
                })
            })
            .collect::<Result<_, ScriptError>>()?;
        Ok(Self::new(entries, file.strict))
    }

    pub fn from_file(path: &Path) -> Result<Self, ScriptError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScriptError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Entries not yet consumed.
    pub fn remaining(&self) -> usize {
        self.entries.len() - *self.cursor.lock().expect("script cursor poisoned")
    }
}

impl AgentBackend for ScriptedBackend {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        let mut cursor = self.cursor.lock().expect("script cursor poisoned");
        let position = request.position();
        match self.entries.get(*cursor) {
            Some(entry) if entry.matches(position) => {
                *cursor += 1;
                Ok(entry.decision.clone())
            }
            next if self.strict => Err(BackendError::Script(match next {
                Some(e) => format!(
                    "request at step {} iteration {} does not match entry {} (step {:?}, iteration {:?})",
                    position.0, position.1, *cursor, e.step, e.iteration
                ),
                None => format!("script exhausted at step {} iteration {}", position.0, position.1),
            })),
            _ => match request {
                Request::Action { call, scope, .. } => Ok(AgentDecision::ToolCall {
                    tool: call.tool.clone(),
                    args: resolve_args(call, scope)?,
                    result_binding: call.result_binding.clone(),
                    thought: None,
                }),
                Request::Reactive { .. } => Err(BackendError::Script("no scripted decision for this turn".into())),
            },
        }
    }
}
