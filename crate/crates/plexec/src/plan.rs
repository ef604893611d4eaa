//! The plan and step data model, and structural validation.
//!
//! A [`Plan`] is an ordered list of [`Step`]s plus global execution
//! constraints: a workflow topology, an optional termination criterion, and
//! an iteration bound. Each step carries an operational context, an
//! objective, its control-flow logic, and an explicit data interface of
//! input and output variable names.
//!
//! Plans can be constructed in any shape; [`validate_plan`] reports every
//! broken invariant as data so callers can print or act on the full list.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::condition::{ConditionExpr, MAX_CONDITION_DEPTH};
use crate::logic::{self, AssignSource, Collection, LogicNode, MAX_NESTING_DEPTH};

/// 1-based step ordinal, as written in `STEP <n>:`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StepId(pub u32);

impl fmt::Display for StepId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum WorkflowTopology {
    #[default]
    Sequential,
    Conditional,
    Iterative,
    Hybrid,
}

impl WorkflowTopology {
    pub fn keyword(self) -> &'static str {
        match self {
            WorkflowTopology::Sequential => "sequential",
            WorkflowTopology::Conditional => "conditional",
            WorkflowTopology::Iterative => "iterative",
            WorkflowTopology::Hybrid => "hybrid",
        }
    }

    pub fn from_keyword(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sequential" => Some(WorkflowTopology::Sequential),
            "conditional" => Some(WorkflowTopology::Conditional),
            "iterative" => Some(WorkflowTopology::Iterative),
            "hybrid" => Some(WorkflowTopology::Hybrid),
            _ => None,
        }
    }

    pub fn requires_termination(self) -> bool {
        matches!(self, WorkflowTopology::Iterative | WorkflowTopology::Hybrid)
    }
}

impl fmt::Display for WorkflowTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.keyword())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub id: StepId,
    /// Operational context, e.g. which environment the step acts on.
    pub context: String,
    pub objective: String,
    pub logic: Vec<LogicNode>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl Step {
    pub fn new(id: u32, objective: impl Into<String>) -> Self {
        Self {
            id: StepId(id),
            context: String::new(),
            objective: objective.into(),
            logic: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub topology: WorkflowTopology,
    /// Stop condition for the whole run; checked after every loop pass.
    pub termination: Option<ConditionExpr>,
    pub max_iterations: u32,
    /// The originating query, kept for tracing.
    pub query: String,
    pub steps: Vec<Step>,
}

impl Plan {
    pub fn step(&self, id: StepId) -> Option<&Step> {
        self.steps.iter().find(|s| s.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EmptySteps,
    ZeroMaxIterations,
    MissingTermination {
        topology: WorkflowTopology,
    },
    ZeroStepId,
    DuplicateStepId {
        step: StepId,
    },
    DuplicateOutputInStep {
        step: StepId,
        var: String,
    },
    SelfDependency {
        step: StepId,
        var: String,
    },
    InvalidVariableName {
        step: StepId,
        name: String,
    },
    InvalidToolName {
        step: StepId,
        name: String,
    },
    UnproducedInput {
        step: StepId,
        var: String,
    },
    LaterProducer {
        step: StepId,
        var: String,
        producer: StepId,
    },
    DuplicateOutputAcrossSteps {
        var: String,
        first: StepId,
        second: StepId,
    },
    UnresolvableCollection {
        step: StepId,
        var: String,
    },
    ZeroLoopBound {
        step: StepId,
    },
    TooFewParallelBranches {
        step: StepId,
    },
    EmptyIfChain {
        step: StepId,
    },
    DuplicateArgument {
        step: StepId,
        tool: String,
        key: String,
    },
    ParallelWriteConflict {
        step: StepId,
        var: String,
    },
    ConditionTooDeep {
        step: Option<StepId>,
    },
    NestingTooDeep {
        step: StepId,
    },
    NonCanonicalText {
        step: Option<StepId>,
        field: &'static str,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptySteps => write!(f, "steps non-empty: plan has no steps"),
            Violation::ZeroMaxIterations => write!(f, "max_iterations must be at least 1"),
            Violation::MissingTermination { topology } => {
                write!(f, "{topology} plan requires a termination criterion")
            }
            Violation::ZeroStepId => write!(f, "step identifiers are 1-based; found step 0"),
            Violation::DuplicateStepId { step } => write!(f, "duplicate step identifier {step}"),
            Violation::DuplicateOutputInStep { step, var } => {
                write!(f, "step {step}: output {var} declared twice")
            }
            Violation::SelfDependency { step, var } => {
                write!(f, "step {step}: {var} is both an input and an output")
            }
            Violation::InvalidVariableName { step, name } => {
                write!(f, "step {step}: invalid variable name {name:?}")
            }
            Violation::InvalidToolName { step, name } => write!(f, "step {step}: invalid tool name {name:?}"),
            Violation::UnproducedInput { step, var } => {
                write!(f, "step {step}: unproduced input {var}")
            }
            Violation::LaterProducer { step, var, producer } => {
                write!(f, "step {step}: input {var} is only produced by later step {producer}")
            }
            Violation::DuplicateOutputAcrossSteps { var, first, second } => {
                write!(f, "output {var} declared by both step {first} and step {second}")
            }
            Violation::UnresolvableCollection { step, var } => {
                write!(f, "step {step}: FOR collection {var} is not bound before the loop")
            }
            Violation::ZeroLoopBound { step } => write!(f, "step {step}: loop bound must be at least 1"),
            Violation::TooFewParallelBranches { step } => {
                write!(f, "step {step}: PARALLEL needs at least two branches")
            }
            Violation::EmptyIfChain { step } => write!(f, "step {step}: IF without a conditional branch"),
            Violation::DuplicateArgument { step, tool, key } => {
                write!(f, "step {step}: argument {key} repeated in call to {tool}")
            }
            Violation::ParallelWriteConflict { step, var } => {
                write!(f, "step {step}: {var} is written by more than one PARALLEL branch")
            }
            Violation::ConditionTooDeep { step: Some(step) } => {
                write!(f, "step {step}: condition deeper than {MAX_CONDITION_DEPTH}")
            }
            Violation::ConditionTooDeep { step: None } => {
                write!(f, "termination criterion deeper than {MAX_CONDITION_DEPTH}")
            }
            Violation::NestingTooDeep { step } => {
                write!(f, "step {step}: logic nested deeper than {MAX_NESTING_DEPTH}")
            }
            Violation::NonCanonicalText {
                step: Some(step),
                field,
            } => write!(
                f,
                "step {step}: {field} must be a single line without surrounding whitespace"
            ),
            Violation::NonCanonicalText { step: None, field } => {
                write!(f, "{field} must be a single line without surrounding whitespace")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            writeln!(f, "{v}")?;
        }
        Ok(())
    }
}

const RESERVED: &[&str] = &["and", "or", "not", "exists", "empty", "true", "false"];

/// Letters, digits and underscore, starting with a letter or underscore,
/// and not a reserved condition keyword.
pub fn is_valid_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !RESERVED.contains(&name.to_ascii_lowercase().as_str())
}

fn is_canonical_text(s: &str) -> bool {
    !s.contains(['\n', '\r']) && s.trim() == s
}

/// Validates a plan with no externally supplied bindings.
pub fn validate_plan(plan: &Plan) -> ValidationReport {
    validate_plan_with(plan, &BTreeSet::new())
}

/// Validates a plan, treating `externals` as bound before the first step.
pub fn validate_plan_with(plan: &Plan, externals: &BTreeSet<String>) -> ValidationReport {
    let mut out = Vec::new();

    if plan.steps.is_empty() {
        out.push(Violation::EmptySteps);
    }
    if plan.max_iterations == 0 {
        out.push(Violation::ZeroMaxIterations);
    }
    if plan.topology.requires_termination() && plan.termination.is_none() {
        out.push(Violation::MissingTermination {
            topology: plan.topology,
        });
    }
    if let Some(term) = &plan.termination {
        if term.depth() > MAX_CONDITION_DEPTH {
            out.push(Violation::ConditionTooDeep { step: None });
        }
    }
    if !is_canonical_text(&plan.query) {
        out.push(Violation::NonCanonicalText {
            step: None,
            field: "query",
        });
    }

    let mut seen_ids = BTreeSet::new();
    let mut producers: BTreeMap<&str, StepId> = BTreeMap::new();
    for step in &plan.steps {
        if step.id.0 == 0 {
            out.push(Violation::ZeroStepId);
        }
        if !seen_ids.insert(step.id) {
            out.push(Violation::DuplicateStepId { step: step.id });
        }
        for (field, text) in [("context", &step.context), ("objective", &step.objective)] {
            if !is_canonical_text(text) {
                out.push(Violation::NonCanonicalText {
                    step: Some(step.id),
                    field,
                });
            }
        }
        let mut outs = BTreeSet::new();
        for var in &step.outputs {
            if !outs.insert(var.as_str()) {
                out.push(Violation::DuplicateOutputInStep {
                    step: step.id,
                    var: var.clone(),
                });
            }
            match producers.get(var.as_str()) {
                Some(&first) if first != step.id => out.push(Violation::DuplicateOutputAcrossSteps {
                    var: var.clone(),
                    first,
                    second: step.id,
                }),
                Some(_) => {}
                None => {
                    producers.insert(var, step.id);
                }
            }
        }
        for var in step.inputs.iter().chain(&step.outputs) {
            if !is_valid_identifier(var) {
                out.push(Violation::InvalidVariableName {
                    step: step.id,
                    name: var.clone(),
                });
            }
        }
        for var in &step.inputs {
            if outs.contains(var.as_str()) {
                out.push(Violation::SelfDependency {
                    step: step.id,
                    var: var.clone(),
                });
            }
        }
    }

    // Data dependencies: every input is produced earlier or supplied externally.
    for (pos, step) in plan.steps.iter().enumerate() {
        for var in &step.inputs {
            if externals.contains(var) {
                continue;
            }
            let earlier = plan.steps[..pos].iter().any(|s| s.outputs.contains(var));
            if earlier {
                continue;
            }
            match plan.steps[pos + 1..].iter().find(|s| s.outputs.contains(var)) {
                Some(later) => out.push(Violation::LaterProducer {
                    step: step.id,
                    var: var.clone(),
                    producer: later.id,
                }),
                None if !step.outputs.contains(var) => out.push(Violation::UnproducedInput {
                    step: step.id,
                    var: var.clone(),
                }),
                None => {}
            }
        }
    }

    // Logic checks, with a conservative static scope for FOR collections.
    let mut available: BTreeSet<String> = externals.clone();
    for step in &plan.steps {
        available.extend(step.inputs.iter().cloned());
        if logic::nesting_depth(&step.logic) > MAX_NESTING_DEPTH {
            out.push(Violation::NestingTooDeep { step: step.id });
        }
        check_block(step.id, &step.logic, &mut available, &mut out);
        available.extend(step.outputs.iter().cloned());
    }

    ValidationReport { violations: out }
}

fn check_call(step: StepId, call: &logic::ActionCallExpr, out: &mut Vec<Violation>) {
    if !is_valid_identifier(&call.tool) {
        out.push(Violation::InvalidToolName {
            step,
            name: call.tool.clone(),
        });
    }
    if let Some(key) = call.duplicate_key() {
        out.push(Violation::DuplicateArgument {
            step,
            tool: call.tool.clone(),
            key: key.to_string(),
        });
    }
}

fn check_name(step: StepId, name: &str, out: &mut Vec<Violation>) {
    if !is_valid_identifier(name) {
        out.push(Violation::InvalidVariableName {
            step,
            name: name.to_string(),
        });
    }
}

fn check_condition(step: StepId, cond: &ConditionExpr, out: &mut Vec<Violation>) {
    if cond.depth() > MAX_CONDITION_DEPTH {
        out.push(Violation::ConditionTooDeep { step: Some(step) });
    }
}

fn check_block(step: StepId, nodes: &[LogicNode], available: &mut BTreeSet<String>, out: &mut Vec<Violation>) {
    for node in nodes {
        match node {
            LogicNode::Execute(call) => {
                check_call(step, call, out);
                if let Some(b) = &call.result_binding {
                    check_name(step, b, out);
                }
            }
            LogicNode::Assign { target, source } => {
                check_name(step, target, out);
                if let AssignSource::Call(call) = source {
                    check_call(step, call, out);
                }
            }
            LogicNode::DataFlow { target, .. } => check_name(step, target, out),
            LogicNode::Abort { .. } => {}
            LogicNode::IfChain { branches, else_body } => {
                if branches.is_empty() {
                    out.push(Violation::EmptyIfChain { step });
                }
                for (cond, body) in branches {
                    check_condition(step, cond, out);
                    check_block(step, body, &mut available.clone(), out);
                }
                if let Some(body) = else_body {
                    check_block(step, body, &mut available.clone(), out);
                }
            }
            LogicNode::ForEach { var, collection, body } => {
                check_name(step, var, out);
                if let Collection::Var(path) = collection {
                    if !available.contains(&path.root) {
                        out.push(Violation::UnresolvableCollection {
                            step,
                            var: path.root.clone(),
                        });
                    }
                }
                let mut inner = available.clone();
                inner.insert(var.clone());
                check_block(step, body, &mut inner, out);
            }
            LogicNode::While {
                condition, bound, body, ..
            } => {
                check_condition(step, condition, out);
                if *bound == Some(0) {
                    out.push(Violation::ZeroLoopBound { step });
                }
                check_block(step, body, &mut available.clone(), out);
            }
            LogicNode::TryOnFailure { body, fallback } => {
                check_block(step, body, &mut available.clone(), out);
                check_block(step, fallback, &mut available.clone(), out);
            }
            LogicNode::Parallel { branches } => {
                if branches.len() < 2 {
                    out.push(Violation::TooFewParallelBranches { step });
                }
                let mut writers: BTreeMap<String, usize> = BTreeMap::new();
                for branch in branches {
                    for var in logic::written_vars(branch) {
                        *writers.entry(var).or_default() += 1;
                    }
                    check_block(step, branch, &mut available.clone(), out);
                }
                for (var, count) in writers {
                    if count > 1 {
                        out.push(Violation::ParallelWriteConflict { step, var });
                    }
                }
            }
        }
        // Anything a node may bind is treated as visible afterwards.
        available.extend(logic::written_vars(std::slice::from_ref(node)));
    }
}

/// Input variables consumed by some step but produced by none; these must be
/// supplied when the run starts.
pub fn external_inputs(plan: &Plan) -> BTreeSet<String> {
    let produced: BTreeSet<&String> = plan.steps.iter().flat_map(|s| &s.outputs).collect();
    plan.steps
        .iter()
        .flat_map(|s| &s.inputs)
        .filter(|v| !produced.contains(v))
        .cloned()
        .collect()
}
