//! Composite step context: global workflow constraints plus the local step,
//! without any history from other steps.

use std::fmt::Write;

use crate::dsl;
use crate::env::ToolSpec;
use crate::plan::{Plan, Step, StepId, WorkflowTopology};
use crate::value::Value;

use super::memory::MemoryState;
use super::tokens::count_tokens;

/// Reply protocol shared by every backend-facing prompt.
pub const REPLY_SCHEMA: &str = "Reply with exactly one JSON object and nothing else: \
{\"tool\": \"<name>\", \"args\": {...}} to call a tool, \
{\"finish\": <value>} to answer without calling a tool, \
or {\"fail\": \"<reason>\"} if the action cannot be carried out.";

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeContext {
    pub step: StepId,
    pub topology: WorkflowTopology,
    /// Plan termination criterion rendered as a condition, if any.
    pub termination: Option<String>,
    pub max_iterations: u32,
    pub iteration: u32,
    pub objective: String,
    /// The step's logic, pretty-printed.
    pub logic: String,
    /// Declared inputs with their current values; unbound inputs are absent.
    pub inputs: Vec<(String, Value)>,
    pub initial_step: bool,
    pub expected_outputs: Vec<String>,
    /// The statement the backend is asked to carry out now.
    pub action: Option<String>,
    /// Values of variables the action references beyond the declared inputs.
    pub action_values: Vec<(String, Value)>,
    /// Tool signatures available to the backend.
    pub tools: Vec<String>,
}

fn title_case(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

impl CompositeContext {
    pub fn render_system(&self) -> String {
        let mut out = String::new();
        out.push_str("========= WORKFLOW CONTEXT =========\n");
        writeln!(out, "Type: {}", title_case(self.topology.keyword())).unwrap();
        match &self.termination {
            Some(t) => writeln!(out, "Termination: Loop stops when {t}").unwrap(),
            None => out.push_str("Termination: None\n"),
        }
        writeln!(out, "Max iterations: {}", self.max_iterations).unwrap();
        writeln!(out, "Current iteration: {}", self.iteration).unwrap();
        out.push_str("=====================================\n");
        out
    }

    pub fn render_user(&self) -> String {
        let mut out = String::new();
        out.push_str("========= TASK DESTINATION ==========\n");
        writeln!(out, "{}", self.objective).unwrap();
        out.push_str("\n========== EXECUTION LOGIC ==========\n");
        out.push_str(&self.logic);
        out.push_str("\n=========== DATA INTERFACE ==========\n");
        if self.inputs.is_empty() {
            let note = if self.initial_step {
                "None (Initial Step)"
            } else {
                "None"
            };
            writeln!(out, "Input Data: {note}").unwrap();
        } else {
            out.push_str("Input Data:\n");
            for (name, value) in &self.inputs {
                writeln!(out, "  {name} = {value}").unwrap();
            }
        }
        let outputs: Vec<String> = self.expected_outputs.iter().map(|o| format!("'{o}'")).collect();
        writeln!(out, "Expected Outputs: [{}]", outputs.join(", ")).unwrap();
        out.push_str("\n=========== INSTRUCTIONS ============\n");
        if let Some(action) = &self.action {
            writeln!(out, "Carry out: {action}").unwrap();
            for (name, value) in &self.action_values {
                writeln!(out, "  {name} = {value}").unwrap();
            }
        }
        if !self.tools.is_empty() {
            writeln!(out, "Tools: {}", self.tools.join("; ")).unwrap();
        }
        writeln!(out, "{REPLY_SCHEMA}").unwrap();
        out
    }

    /// System message, a blank line, then the user message.
    pub fn render(&self) -> String {
        format!("{}\n{}", self.render_system(), self.render_user())
    }

    pub fn token_count(&self) -> usize {
        count_tokens(&self.render())
    }
}

/// Builds the context for `step` at loop pass `iteration`. Only the step's
/// declared inputs are read from memory.
pub fn build_context(plan: &Plan, step: &Step, memory: &MemoryState, iteration: u32) -> CompositeContext {
    let initial_step = plan.steps.first().is_some_and(|s| s.id == step.id);
    CompositeContext {
        step: step.id,
        topology: plan.topology,
        termination: plan.termination.as_ref().map(dsl::print_condition),
        max_iterations: plan.max_iterations,
        iteration,
        objective: step.objective.clone(),
        logic: dsl::print_logic(&step.logic, 0),
        inputs: step
            .inputs
            .iter()
            .filter_map(|n| memory.get(n).map(|v| (n.clone(), v.clone())))
            .collect(),
        initial_step,
        expected_outputs: step.outputs.clone(),
        action: None,
        action_values: Vec::new(),
        tools: Vec::new(),
    }
}

pub(crate) fn tool_lines<'a>(specs: impl Iterator<Item = &'a ToolSpec>) -> Vec<String> {
    specs.map(ToolSpec::signature).collect()
}
