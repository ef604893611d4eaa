use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::agents::{AgentBackend, AgentDecision, BackendError, Request};
use crate::condition::{eval_condition, ConditionExpr, EvalError, Scope};
use crate::depgraph::{is_ready, DependencyGraph};
use crate::dsl;
use crate::env::{Args, ToolRegistry};
use crate::logic::{self, ActionCallExpr, ArgValue, AssignSource, Collection, LogicNode, LoopMode};
use crate::plan::{Plan, Step};
use crate::value::Value;

use super::context::{build_context, tool_lines, CompositeContext};
use super::memory::{MemoryState, Provenance};
use super::trace::{build_records, Event, EventKind, ExecutionTrace, HaltReason, Mode, Outcome, RunSummary};
use super::{count_tokens, HaltPolicy, RunError, RunOutcome};

/// Why interpretation of a step stopped early.
#[derive(Debug)]
enum Stop {
    Halt(HaltReason, Option<String>),
    Fail(RunError),
}

impl From<RunError> for Stop {
    fn from(e: RunError) -> Self {
        Stop::Fail(e)
    }
}

impl From<EvalError> for Stop {
    fn from(e: EvalError) -> Self {
        Stop::Fail(RunError::Eval(e))
    }
}

/// Read-only state shared by every branch of a step.
struct Shared<'a> {
    plan: &'a Plan,
    step: &'a Step,
    registry: &'a ToolRegistry,
    backend: &'a dyn AgentBackend,
    max_passes: u32,
    window: usize,
    threads: bool,
    base_context: CompositeContext,
}

/// Mutable state of one line of execution; parallel branches get their own.
struct Frame {
    memory: MemoryState,
    passes: u32,
    events: Vec<Event>,
}

impl Frame {
    fn emit(&mut self, kind: EventKind) {
        self.events.push(Event::now(kind));
    }
}

pub(super) fn run(
    plan: &Plan,
    graph: &DependencyGraph,
    registry: &ToolRegistry,
    backend: &dyn AgentBackend,
    memory: MemoryState,
    policy: &HaltPolicy,
) -> RunOutcome {
    let max_passes = policy.effective_max_iterations(plan);
    let tools = tool_lines(registry.specs());
    let mut frame = Frame {
        memory,
        passes: 0,
        events: Vec::new(),
    };
    let mut halt = (HaltReason::Completed, None::<String>);
    let mut error = None;

    let mut steps = plan.steps.iter();
    for step in steps.by_ref() {
        frame.emit(EventKind::StepStart {
            step: step.id.0,
            iteration: frame.passes,
        });

        let ready = is_ready(graph, step.id, &frame.memory).unwrap_or(false);
        let missing: Vec<String> = step
            .inputs
            .iter()
            .filter(|v| !frame.memory.contains(v))
            .cloned()
            .collect();
        if !ready || !missing.is_empty() {
            let e = RunError::UnmetDependency { step: step.id, missing };
            halt = (HaltReason::UnmetDependency, Some(e.to_string()));
            error = Some(e);
            frame.emit(EventKind::StepEnd {
                outcome: Outcome::Failed,
            });
            break;
        }

        let mut base_context = build_context(plan, step, &frame.memory, frame.passes);
        base_context.max_iterations = max_passes;
        base_context.tools = tools.clone();
        let shared = Shared {
            plan,
            step,
            registry,
            backend,
            max_passes,
            window: policy.invariance_window as usize,
            threads: policy.threads,
            base_context,
        };

        let result = exec_block(&shared, &mut frame, &step.logic).and_then(|()| {
            match step.outputs.iter().find(|o| !frame.memory.contains(o)) {
                Some(var) => Err(Stop::Fail(RunError::MissingOutput {
                    step: step.id,
                    var: var.clone(),
                })),
                None => Ok(()),
            }
        });
        match result {
            Ok(()) => frame.emit(EventKind::StepEnd { outcome: Outcome::Ok }),
            Err(Stop::Halt(reason, detail)) => {
                let outcome = match reason {
                    HaltReason::TerminationCriterionMet => Outcome::Ok,
                    _ => Outcome::Aborted,
                };
                frame.emit(EventKind::StepEnd { outcome });
                if reason == HaltReason::Aborted {
                    error = Some(RunError::AbortSignaled {
                        reason: detail.clone().unwrap_or_default(),
                    });
                }
                halt = (reason, detail);
                break;
            }
            Err(Stop::Fail(e)) => {
                frame.emit(EventKind::StepEnd {
                    outcome: Outcome::Failed,
                });
                halt = (HaltReason::Error, Some(e.to_string()));
                error = Some(e);
                break;
            }
        }
    }
    for step in steps {
        frame.emit(EventKind::StepStart {
            step: step.id.0,
            iteration: frame.passes,
        });
        frame.emit(EventKind::StepEnd {
            outcome: Outcome::Skipped,
        });
    }

    let summary = RunSummary {
        mode: Mode::Plan,
        halt_reason: halt.0,
        total_steps: 0,
        total_tool_calls: 0,
        total_tokens: 0,
        plan_tokens: count_tokens(&dsl::print_plan(plan)),
        detail: halt.1,
        answer: None,
    };
    RunOutcome {
        trace: ExecutionTrace::new(build_records(&frame.events), summary),
        memory: frame.memory,
        error,
    }
}

fn exec_block(sh: &Shared<'_>, fr: &mut Frame, nodes: &[LogicNode]) -> Result<(), Stop> {
    for node in nodes {
        exec_node(sh, fr, node)?;
    }
    Ok(())
}

fn provenance(sh: &Shared<'_>, fr: &Frame) -> Provenance {
    Provenance {
        step: Some(sh.step.id),
        iteration: fr.passes,
    }
}

fn exec_node(sh: &Shared<'_>, fr: &mut Frame, node: &LogicNode) -> Result<(), Stop> {
    match node {
        LogicNode::Execute(call) => execute(sh, fr, call),
        LogicNode::Assign { target, source } => {
            let value = match source {
                AssignSource::Literal(v) => v.clone(),
                AssignSource::Call(call) => {
                    let args = literal_args(call, &fr.memory)?;
                    invoke(sh, fr, &call.tool, args)?
                }
            };
            let prov = provenance(sh, fr);
            fr.memory.bind(target.clone(), value, prov);
            Ok(())
        }
        LogicNode::DataFlow { source, target } => {
            let value = fr.memory.resolve(source)?.clone();
            let prov = provenance(sh, fr);
            fr.memory.bind(target.clone(), value, prov);
            Ok(())
        }
        LogicNode::Abort { reason } => Err(Stop::Halt(HaltReason::Aborted, Some(reason.clone()))),
        LogicNode::IfChain { branches, else_body } => {
            for (cond, body) in branches {
                if eval_condition(cond, &fr.memory)? {
                    return exec_block(sh, fr, body);
                }
            }
            match else_body {
                Some(body) => exec_block(sh, fr, body),
                None => Ok(()),
            }
        }
        LogicNode::TryOnFailure { body, fallback } => match exec_block(sh, fr, body) {
            Err(Stop::Fail(RunError::Tool(_) | RunError::Backend(_) | RunError::MissingOutput { .. })) => {
                exec_block(sh, fr, fallback)
            }
            other => other,
        },
        LogicNode::While {
            mode,
            condition,
            bound,
            body,
        } => exec_while(sh, fr, *mode, condition, *bound, body),
        LogicNode::ForEach { var, collection, body } => {
            let items = match collection {
                Collection::Literal(items) => items.clone(),
                Collection::Var(path) => match fr.memory.resolve(path)? {
                    Value::List(items) => items.clone(),
                    other => {
                        return Err(EvalError::TypeMismatch(format!(
                            "FOR collection `{path}` is {}, not a list",
                            other.kind()
                        ))
                        .into())
                    }
                },
            };
            let previous = fr.memory.binding(var).cloned();
            let result = exec_for(sh, fr, var, items, body);
            fr.memory.restore(var, previous);
            result
        }
        LogicNode::Parallel { branches } => exec_parallel(sh, fr, branches),
    }
}

fn literal_args(call: &ActionCallExpr, memory: &MemoryState) -> Result<Args, Stop> {
    call.args
        .iter()
        .map(|(k, v)| {
            let value = match v {
                ArgValue::Literal(v) => v.clone(),
                ArgValue::Var(path) => memory.resolve(path)?.clone(),
            };
            Ok((k.clone(), value))
        })
        .collect()
}

/// Calls a registered tool and records the call; failures are recorded as
/// an error observation before propagating.
fn invoke(sh: &Shared<'_>, fr: &mut Frame, tool: &str, args: Args) -> Result<Value, Stop> {
    let result = sh.registry.call(tool, &args);
    let observation = match &result {
        Ok(v) => v.clone(),
        Err(e) => Value::String(format!("error: {e}")),
    };
    fr.emit(EventKind::Call {
        tool: tool.to_string(),
        args,
        observation,
    });
    result.map_err(|e| Stop::Fail(RunError::Tool(e)))
}

fn execute(sh: &Shared<'_>, fr: &mut Frame, call: &ActionCallExpr) -> Result<(), Stop> {
    let mut scope = BTreeMap::new();
    for path in call.referenced_paths() {
        if let Some(v) = fr.memory.get(&path.root) {
            scope.insert(path.root.clone(), v.clone());
        }
    }
    let mut context = sh.base_context.clone();
    context.iteration = fr.passes;
    context.inputs = sh
        .step
        .inputs
        .iter()
        .filter_map(|n| fr.memory.get(n).map(|v| (n.clone(), v.clone())))
        .collect();
    let mut action = format!("EXECUTE {}", dsl::print_call(call));
    if let Some(b) = &call.result_binding {
        action.push_str(&format!(" -> {b}"));
    }
    context.action = Some(action);
    context.action_values = scope
        .iter()
        .filter(|(k, _)| !sh.step.inputs.contains(k))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    fr.emit(EventKind::Context {
        tokens: context.token_count(),
    });

    let decision = sh
        .backend
        .decide(Request::Action {
            context: &context,
            call,
            scope: &scope,
        })
        .map_err(|e| Stop::Fail(RunError::Backend(e)))?;

    let value = match decision {
        AgentDecision::ToolCall {
            tool,
            args,
            result_binding,
            ..
        } => {
            if let Some(got) = result_binding {
                if call.result_binding.as_ref() != Some(&got) {
                    return Err(Stop::Fail(RunError::Backend(BackendError::BindingMismatch {
                        planned: call.result_binding.clone().unwrap_or_else(|| "nothing".into()),
                        got,
                    })));
                }
            }
            invoke(sh, fr, &tool, args)?
        }
        AgentDecision::Finish(value) => value,
        AgentDecision::Fail(reason) => return Err(Stop::Fail(RunError::Backend(BackendError::Declined(reason)))),
    };
    if let Some(name) = &call.result_binding {
        let prov = provenance(sh, fr);
        fr.memory.bind(name.clone(), value, prov);
    }
    Ok(())
}

fn out_of_passes(fr: &Frame) -> Stop {
    Stop::Halt(
        HaltReason::MaxIterationsReached,
        Some(format!("all {} loop passes used", fr.passes)),
    )
}

/// Starts a loop pass, or halts if the run-wide pass budget is spent.
fn begin_pass(sh: &Shared<'_>, fr: &mut Frame) -> Result<(), Stop> {
    if fr.passes >= sh.max_passes {
        return Err(out_of_passes(fr));
    }
    fr.passes += 1;
    let iteration = fr.passes;
    fr.emit(EventKind::PassStart { iteration });
    Ok(())
}

/// Post-pass checks: the plan's termination criterion, then invariance of
/// the loop's written variables.
fn end_pass(
    sh: &Shared<'_>,
    fr: &mut Frame,
    watched: &BTreeSet<String>,
    snapshots: &mut VecDeque<Vec<u8>>,
) -> Result<(), Stop> {
    if let Some(term) = &sh.plan.termination {
        if termination_met(term, &fr.memory)? {
            return Err(Stop::Halt(
                HaltReason::TerminationCriterionMet,
                Some(format!("{} after pass {}", dsl::print_condition(term), fr.passes)),
            ));
        }
    }
    if watched.is_empty() {
        return Ok(());
    }
    snapshots.push_back(fr.memory.snapshot(watched));
    if snapshots.len() > sh.window {
        snapshots.pop_front();
    }
    if snapshots.len() == sh.window && snapshots.iter().all(|s| *s == snapshots[0]) {
        let names: Vec<&str> = watched.iter().map(String::as_str).collect();
        return Err(Stop::Halt(
            HaltReason::InvarianceDetected,
            Some(format!(
                "{} unchanged over {} consecutive passes",
                names.join(", "),
                sh.window
            )),
        ));
    }
    Ok(())
}

/// A termination criterion over variables not yet bound is simply not met.
fn termination_met(term: &ConditionExpr, memory: &MemoryState) -> Result<bool, Stop> {
    match eval_condition(term, memory) {
        Ok(b) => Ok(b),
        Err(EvalError::UnboundVariable(_)) => Ok(false),
        Err(e) => Err(e.into()),
    }
}

fn run_pass(
    sh: &Shared<'_>,
    fr: &mut Frame,
    body: &[LogicNode],
    watched: &BTreeSet<String>,
    snapshots: &mut VecDeque<Vec<u8>>,
) -> Result<(), Stop> {
    let result = exec_block(sh, fr, body);
    fr.emit(EventKind::PassEnd);
    result?;
    end_pass(sh, fr, watched, snapshots)
}

fn exec_while(
    sh: &Shared<'_>,
    fr: &mut Frame,
    mode: LoopMode,
    condition: &ConditionExpr,
    bound: Option<u32>,
    body: &[LogicNode],
) -> Result<(), Stop> {
    let watched = logic::written_vars(body);
    let mut snapshots = VecDeque::new();
    let mut local = 0u32;
    loop {
        let holds = eval_condition(condition, &fr.memory)?;
        let wants_pass = match mode {
            LoopMode::While => holds,
            LoopMode::Until => !holds,
        };
        if !wants_pass {
            return Ok(());
        }
        // The run-wide budget is checked before the node bound, so it wins a tie.
        if fr.passes >= sh.max_passes {
            return Err(out_of_passes(fr));
        }
        if bound.is_some_and(|b| local >= b) {
            return Ok(());
        }
        begin_pass(sh, fr)?;
        local += 1;
        run_pass(sh, fr, body, &watched, &mut snapshots)?;
    }
}

fn exec_for(sh: &Shared<'_>, fr: &mut Frame, var: &str, items: Vec<Value>, body: &[LogicNode]) -> Result<(), Stop> {
    let mut watched = logic::written_vars(body);
    watched.remove(var);
    let mut snapshots = VecDeque::new();
    for item in items {
        begin_pass(sh, fr)?;
        let prov = provenance(sh, fr);
        fr.memory.bind(var, item, prov);
        run_pass(sh, fr, body, &watched, &mut snapshots)?;
    }
    Ok(())
}

fn has_loop(nodes: &[LogicNode]) -> bool {
    let mut found = false;
    logic::walk(nodes, &mut |n| {
        if matches!(n, LogicNode::While { .. } | LogicNode::ForEach { .. }) {
            found = true;
        }
    });
    found
}

/// Branches may run on threads only when the outcome cannot depend on
/// scheduling: the backend tolerates concurrent calls, every named tool is
/// side-effect free, and no branch consumes loop passes.
fn can_thread(sh: &Shared<'_>, branches: &[Vec<LogicNode>]) -> bool {
    sh.threads
        && branches.len() > 1
        && sh.backend.concurrent_safe()
        && branches.iter().all(|b| {
            !has_loop(b)
                && logic::tool_names(b)
                    .iter()
                    .all(|t| sh.registry.spec(t).is_some_and(|s| !s.side_effects))
        })
}

fn exec_parallel(sh: &Shared<'_>, fr: &mut Frame, branches: &[Vec<LogicNode>]) -> Result<(), Stop> {
    let base = fr.memory.clone();
    let fork = |passes: u32| Frame {
        memory: base.clone(),
        passes,
        events: Vec::new(),
    };

    let mut done: Vec<(Frame, Result<(), Stop>)> = Vec::with_capacity(branches.len());
    if can_thread(sh, branches) {
        std::thread::scope(|s| {
            let handles: Vec<_> = branches
                .iter()
                .map(|branch| {
                    let mut frame = fork(fr.passes);
                    s.spawn(move || {
                        let r = exec_block(sh, &mut frame, branch);
                        (frame, r)
                    })
                })
                .collect();
            for h in handles {
                done.push(h.join().expect("parallel branch panicked"));
            }
        });
    } else {
        let mut passes = fr.passes;
        for branch in branches {
            let mut frame = fork(passes);
            let r = exec_block(sh, &mut frame, branch);
            passes = frame.passes;
            let stop = r.is_err();
            done.push((frame, r));
            if stop {
                break;
            }
        }
    }

    // Merge in declaration order; a branch that stopped the run discards
    // everything after it.
    for (frame, result) in done {
        fr.events.extend(frame.events);
        for name in frame.memory.changed_since(&base) {
            if let Some(b) = frame.memory.binding(&name) {
                fr.memory.bind(name, b.value.clone(), b.provenance);
            }
        }
        fr.passes = fr.passes.max(frame.passes);
        result?;
    }
    Ok(())
}
