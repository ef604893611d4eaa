use super::{resolve_args, AgentBackend, AgentDecision, BackendError, Request};

/// Executes planned actions literally: the tool named in the plan, with
/// variable references replaced by their current values.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBackend;

impl AgentBackend for RuleBackend {
    fn decide(&self, request: Request<'_>) -> Result<AgentDecision, BackendError> {
        match request {
            Request::Action { call, scope, .. } => Ok(AgentDecision::ToolCall {
                tool: call.tool.clone(),
                args: resolve_args(call, scope)?,
                result_binding: call.result_binding.clone(),
                thought: None,
            }),
            Request::Reactive { .. } => Ok(AgentDecision::Fail(
                "the rule backend only executes planned actions".into(),
            )),
        }
    }

    fn concurrent_safe(&self) -> bool {
        true
    }
}
