//! Generators and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;

use proptest::prelude::*;

use plexec::agents::{AgentBackend, AgentDecision, BackendError, Request};
use plexec::condition::{CmpOp, ConditionExpr, VarPath};
use plexec::env::{ArgSpec, ToolRegistry, ToolSpec};
use plexec::executor::{ExecutionTrace, Outcome};
use plexec::logic::{ActionCallExpr, ArgValue, AssignSource, Collection, LogicNode, LoopMode};
use plexec::plan::{is_valid_identifier, Plan, Step, WorkflowTopology};
use plexec::value::{Value, ValueKind};

pub mod scenarios;

pub const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");

pub fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(FIXTURES).join(rel)
}

// ---------------------------------------------------------------------------
// Round-trip generator: arbitrary plans that validate.

/// Words the parser reads as structure somewhere; generated names avoid them.
const STRUCTURAL: &[&str] = &[
    "step",
    "context",
    "objective",
    "logic",
    "inputs",
    "outputs",
    "type",
    "termination",
    "max_iterations",
    "query",
    "execute",
    "if",
    "elif",
    "else",
    "for",
    "in",
    "while",
    "until",
    "max",
    "try",
    "on_failure",
    "parallel",
    "branch",
    "data",
    "flow",
    "data_flow",
    "dataflow",
    "abort",
    "assign",
];

pub fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,7}".prop_filter("reserved", |s| {
        is_valid_identifier(s) && !STRUCTURAL.contains(&s.to_ascii_lowercase().as_str())
    })
}

/// Single-line free text as accepted in headers and step fields.
pub fn text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,.%()'/-]{0,40}".prop_map(|s| s.trim().to_string())
}

pub fn number() -> impl Strategy<Value = f64> {
    prop_oneof![
        (-1000i32..1000).prop_map(f64::from),
        -1e6f64..1e6,
        any::<f64>().prop_filter("finite", |f| f.is_finite()),
    ]
}

pub fn literal() -> impl Strategy<Value = Value> {
    let leaf = prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        number().prop_map(Value::Number),
        any::<String>().prop_map(Value::String),
    ];
    leaf.prop_recursive(3, 16, 4, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
            prop::collection::btree_map(any::<String>(), inner, 0..4).prop_map(Value::Record),
        ]
    })
}

pub fn var_path() -> impl Strategy<Value = VarPath> {
    (ident(), prop::collection::vec(ident(), 0..3)).prop_map(|(root, fields)| VarPath { root, fields })
}

pub fn cmp_op() -> impl Strategy<Value = CmpOp> {
    prop_oneof![
        Just(CmpOp::Lt),
        Just(CmpOp::Le),
        Just(CmpOp::Eq),
        Just(CmpOp::Ne),
        Just(CmpOp::Ge),
        Just(CmpOp::Gt),
    ]
}

pub fn condition() -> impl Strategy<Value = ConditionExpr> {
    let operand = prop_oneof![
        var_path().prop_map(ConditionExpr::Var),
        number().prop_map(ConditionExpr::Number),
        any::<String>().prop_map(ConditionExpr::Str),
        any::<bool>().prop_map(ConditionExpr::Bool),
    ];
    let leaf = prop_oneof![
        operand.clone(),
        var_path().prop_map(ConditionExpr::Exists),
        var_path().prop_map(ConditionExpr::Empty),
        (operand.clone(), cmp_op(), operand).prop_map(|(l, op, r)| ConditionExpr::compare(l, op, r)),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(ConditionExpr::not),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| ConditionExpr::and(a, b)),
            (inner.clone(), inner).prop_map(|(a, b)| ConditionExpr::or(a, b)),
        ]
    })
}

pub fn call() -> impl Strategy<Value = ActionCallExpr> {
    let arg = prop_oneof![
        literal().prop_map(ArgValue::Literal),
        var_path().prop_map(ArgValue::Var),
    ];
    (
        ident(),
        prop::collection::btree_map(ident(), arg, 0..4),
        prop::option::of(ident()),
    )
        .prop_map(|(tool, args, binding)| ActionCallExpr {
            tool,
            args: args.into_iter().collect(),
            result_binding: binding,
        })
}

pub fn logic_node() -> impl Strategy<Value = LogicNode> {
    let leaf = prop_oneof![
        3 => call().prop_map(LogicNode::Execute),
        1 => (var_path(), ident()).prop_map(|(source, target)| LogicNode::DataFlow { source, target }),
        1 => any::<String>().prop_map(|reason| LogicNode::Abort { reason }),
        1 => (ident(), literal()).prop_map(|(target, v)| LogicNode::Assign { target, source: AssignSource::Literal(v) }),
        1 => (ident(), call().prop_map(|c| ActionCallExpr { result_binding: None, ..c }))
            .prop_map(|(target, c)| LogicNode::Assign { target, source: AssignSource::Call(c) }),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        let block = prop::collection::vec(inner, 0..3);
        prop_oneof![
            (
                prop::collection::vec((condition(), block.clone()), 1..3),
                prop::option::of(block.clone()),
            )
                .prop_map(|(branches, else_body)| LogicNode::IfChain { branches, else_body }),
            (
                ident(),
                prop_oneof![
                    var_path().prop_map(Collection::Var),
                    prop::collection::vec(literal(), 0..3).prop_map(Collection::Literal),
                ],
                block.clone(),
            )
                .prop_map(|(var, collection, body)| LogicNode::ForEach { var, collection, body }),
            (
                prop_oneof![Just(LoopMode::While), Just(LoopMode::Until)],
                condition(),
                prop::option::of(1u32..100),
                block.clone(),
            )
                .prop_map(|(mode, condition, bound, body)| LogicNode::While {
                    mode,
                    condition,
                    bound,
                    body
                }),
            (block.clone(), block.clone()).prop_map(|(body, fallback)| LogicNode::TryOnFailure { body, fallback }),
            prop::collection::vec(block, 2..4).prop_map(|branches| LogicNode::Parallel { branches }),
        ]
    })
}

pub fn topology() -> impl Strategy<Value = WorkflowTopology> {
    prop_oneof![
        Just(WorkflowTopology::Sequential),
        Just(WorkflowTopology::Conditional),
        Just(WorkflowTopology::Iterative),
        Just(WorkflowTopology::Hybrid),
    ]
}

/// Makes every binding target unique and every `FOR` collection resolvable,
/// which is what separates a generated block from a valid one.
struct Fixer<'a> {
    next: usize,
    available: &'a [String],
}

impl Fixer<'_> {
    fn fresh(&mut self, name: &mut String) {
        self.next += 1;
        name.push_str(&format!("_{}", self.next));
    }

    fn block(&mut self, nodes: &mut [LogicNode]) {
        for node in nodes {
            match node {
                LogicNode::Execute(call) => {
                    if let Some(b) = call.result_binding.as_mut() {
                        self.fresh(b);
                    }
                }
                LogicNode::Assign { target, .. } | LogicNode::DataFlow { target, .. } => self.fresh(target),
                LogicNode::Abort { .. } => {}
                LogicNode::IfChain { branches, else_body } => {
                    for (_, body) in branches {
                        self.block(body);
                    }
                    if let Some(body) = else_body {
                        self.block(body);
                    }
                }
                LogicNode::ForEach { var, collection, body } => {
                    self.fresh(var);
                    if let Collection::Var(path) = collection {
                        match self.available.get(path.root.len() % self.available.len().max(1)) {
                            Some(root) => path.root = root.clone(),
                            None => *collection = Collection::Literal(Vec::new()),
                        }
                    }
                    self.block(body);
                }
                LogicNode::While { body, .. } | LogicNode::TryOnFailure { body, .. } => {
                    self.block(body);
                    if let LogicNode::TryOnFailure { fallback, .. } = node {
                        self.block(fallback);
                    }
                }
                LogicNode::Parallel { branches } => {
                    for b in branches {
                        self.block(b);
                    }
                }
            }
        }
    }
}

#[derive(Debug)]
struct RawStep {
    context: String,
    objective: String,
    logic: Vec<LogicNode>,
    outputs: Vec<String>,
    input_picks: Vec<usize>,
}

fn raw_step() -> impl Strategy<Value = RawStep> {
    (
        text(),
        text(),
        prop::collection::vec(logic_node(), 0..4),
        prop::collection::btree_set(ident(), 0..3),
        prop::collection::vec(any::<usize>(), 0..3),
    )
        .prop_map(|(context, objective, logic, outputs, input_picks)| RawStep {
            context,
            objective,
            logic,
            outputs: outputs.into_iter().collect(),
            input_picks,
        })
}

/// Plans that pass `validate_plan`, over the full grammar.
pub fn valid_plan() -> impl Strategy<Value = Plan> {
    (
        topology(),
        prop::option::of(condition()),
        1u32..500,
        text(),
        prop::collection::vec(raw_step(), 1..5),
    )
        .prop_map(|(topology, termination, max_iterations, query, raw)| {
            let termination = match (topology, termination) {
                (WorkflowTopology::Iterative | WorkflowTopology::Hybrid, None) => Some(ConditionExpr::var("done")),
                (_, t) => t,
            };
            let mut produced: Vec<String> = Vec::new();
            let mut counter = 0;
            let steps = raw
                .into_iter()
                .enumerate()
                .map(|(i, r)| {
                    let id = i as u32 + 1;
                    let mut inputs: Vec<String> = Vec::new();
                    for pick in r.input_picks {
                        if let Some(v) = produced.get(pick % produced.len().max(1)) {
                            if !inputs.contains(v) {
                                inputs.push(v.clone());
                            }
                        }
                    }
                    let outputs: Vec<String> = r.outputs.into_iter().map(|o| format!("{o}_s{id}")).collect();
                    let mut logic = r.logic;
                    let mut fixer = Fixer {
                        next: counter,
                        available: &inputs,
                    };
                    fixer.block(&mut logic);
                    counter = fixer.next;
                    produced.extend(outputs.iter().cloned());
                    Step {
                        id: plexec::plan::StepId(id),
                        context: r.context,
                        objective: r.objective,
                        logic,
                        inputs,
                        outputs,
                    }
                })
                .collect();
            Plan {
                topology,
                termination,
                max_iterations,
                query,
                steps,
            }
        })
}

// ---------------------------------------------------------------------------
// Executable generator: plans over `probe` that an adversarial backend can
// keep looping forever.

pub const EXTERNAL: &str = "ext_missing";

/// `probe(x)` returns `x`; side-effect-free.
pub fn probe_tools() -> ToolRegistry {
    let mut r = ToolRegistry::new();
    r.register(
        ToolSpec::new("probe", "returns x", ValueKind::Any).arg(ArgSpec::required("x", ValueKind::Any)),
        |args| Ok(args["x"].clone()),
    )
    .unwrap();
    r
}

/// Shape of one generated node before names are assigned.
#[derive(Debug, Clone)]
pub enum Shape {
    Call,
    Flow,
    Abort,
    Loop {
        until: bool,
        bound: Option<u32>,
        body: Vec<Shape>,
    },
    For {
        items: usize,
        body: Vec<Shape>,
    },
    If {
        body: Vec<Shape>,
        fallback: Vec<Shape>,
    },
    Try {
        body: Vec<Shape>,
        fallback: Vec<Shape>,
    },
    Par(Vec<Vec<Shape>>),
}

pub fn shape() -> impl Strategy<Value = Shape> {
    let leaf = prop_oneof![
        4 => Just(Shape::Call),
        2 => Just(Shape::Flow),
        1 => Just(Shape::Abort),
    ];
    leaf.prop_recursive(3, 24, 3, |inner| {
        let block = prop::collection::vec(inner, 0..3);
        prop_oneof![
            3 => (any::<bool>(), prop::option::of(1u32..6), block.clone())
                .prop_map(|(until, bound, body)| Shape::Loop { until, bound, body }),
            2 => (0usize..4, block.clone()).prop_map(|(items, body)| Shape::For { items, body }),
            1 => (block.clone(), block.clone()).prop_map(|(body, fallback)| Shape::If { body, fallback }),
            1 => (block.clone(), block.clone()).prop_map(|(body, fallback)| Shape::Try { body, fallback }),
            1 => prop::collection::vec(block, 2..4).prop_map(Shape::Par),
        ]
    })
}

#[derive(Debug, Clone)]
pub struct ShapeStep {
    pub body: Vec<Shape>,
    pub outputs: usize,
    pub bind_outputs: bool,
    pub picks: Vec<usize>,
    pub external: bool,
}

#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub plan: Plan,
    /// Loop-pass cap passed through the halt policy.
    pub cap: Option<u32>,
    pub provide_external: bool,
}

fn shape_step() -> impl Strategy<Value = ShapeStep> {
    (
        prop::collection::vec(shape(), 1..4),
        0usize..3,
        prop::bool::weighted(0.9),
        prop::collection::vec(any::<usize>(), 0..3),
        prop::bool::weighted(0.15),
    )
        .prop_map(|(body, outputs, bind_outputs, picks, external)| ShapeStep {
            body,
            outputs,
            bind_outputs,
            picks,
            external,
        })
}

struct Namer {
    next: usize,
    first_counter: Option<String>,
}

impl Namer {
    fn fresh(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    /// `scope` holds names certainly bound at this point of the block.
    fn block(&mut self, shapes: &[Shape], scope: &mut Vec<String>) -> Vec<LogicNode> {
        let mut out = Vec::new();
        for s in shapes {
            let arg = || match scope.last() {
                Some(v) => ArgValue::Var(VarPath::var(v)),
                None => ArgValue::Literal(Value::Number(1.0)),
            };
            match s {
                Shape::Call => {
                    let name = self.fresh("r");
                    out.push(LogicNode::Execute(
                        ActionCallExpr::new("probe").arg("x", arg()).bind(&name),
                    ));
                    scope.push(name);
                }
                Shape::Flow => {
                    if let Some(src) = scope.last().cloned() {
                        let name = self.fresh("d");
                        out.push(LogicNode::DataFlow {
                            source: VarPath::var(&src),
                            target: name.clone(),
                        });
                        scope.push(name);
                    }
                }
                Shape::Abort => {
                    let guard = match scope.last() {
                        Some(v) => {
                            ConditionExpr::compare(ConditionExpr::var(v), CmpOp::Lt, ConditionExpr::Number(-20.0))
                        }
                        None => ConditionExpr::Exists(VarPath::var(self.fresh("g"))),
                    };
                    out.push(LogicNode::IfChain {
                        branches: vec![(guard, vec![LogicNode::Abort { reason: "guard".into() }])],
                        else_body: None,
                    });
                }
                Shape::Loop { until, bound, body } => {
                    let c = self.fresh("c");
                    self.first_counter.get_or_insert_with(|| c.clone());
                    out.push(LogicNode::Assign {
                        target: c.clone(),
                        source: AssignSource::Literal(Value::Number(0.0)),
                    });
                    scope.push(c.clone());
                    let mut inner = scope.clone();
                    let mut nodes = vec![LogicNode::Execute(
                        ActionCallExpr::new("probe")
                            .arg("x", ArgValue::Var(VarPath::var(&c)))
                            .bind(&c),
                    )];
                    nodes.extend(self.block(body, &mut inner));
                    let (mode, op) = if *until {
                        (LoopMode::Until, CmpOp::Ge)
                    } else {
                        (LoopMode::While, CmpOp::Lt)
                    };
                    out.push(LogicNode::While {
                        mode,
                        condition: ConditionExpr::compare(ConditionExpr::var(&c), op, ConditionExpr::Number(10.0)),
                        bound: *bound,
                        body: nodes,
                    });
                }
                Shape::For { items, body } => {
                    let var = self.fresh("i");
                    let mut inner = scope.clone();
                    inner.push(var.clone());
                    let body = self.block(body, &mut inner);
                    out.push(LogicNode::ForEach {
                        var,
                        collection: Collection::Literal((0..*items).map(|k| Value::Number(k as f64)).collect()),
                        body,
                    });
                }
                Shape::If { body, fallback } => {
                    let cond = match scope.last() {
                        Some(v) => ConditionExpr::compare(ConditionExpr::var(v), CmpOp::Lt, ConditionExpr::Number(0.0)),
                        None => ConditionExpr::Bool(true),
                    };
                    let body = self.block(body, &mut scope.clone());
                    let fallback = self.block(fallback, &mut scope.clone());
                    out.push(LogicNode::IfChain {
                        branches: vec![(cond, body)],
                        else_body: Some(fallback),
                    });
                }
                Shape::Try { body, fallback } => {
                    let body = self.block(body, &mut scope.clone());
                    let fallback = self.block(fallback, &mut scope.clone());
                    out.push(LogicNode::TryOnFailure { body, fallback });
                }
                Shape::Par(branches) => {
                    let branches = branches.iter().map(|b| self.block(b, &mut scope.clone())).collect();
                    out.push(LogicNode::Parallel { branches });
                }
            }
        }
        out
    }
}

pub fn fuzz_case() -> impl Strategy<Value = FuzzCase> {
    (
        prop::collection::vec(shape_step(), 1..4),
        1u32..60,
        prop::option::of(1u32..60),
        0u8..3,
        any::<bool>(),
    )
        .prop_map(|(steps, max_iterations, cap, term, provide_external)| {
            let mut namer = Namer {
                next: 0,
                first_counter: None,
            };
            let mut produced: Vec<String> = Vec::new();
            let steps = steps
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let id = i as u32 + 1;
                    let mut inputs: Vec<String> = Vec::new();
                    for p in &s.picks {
                        if let Some(v) = produced.get(p % produced.len().max(1)) {
                            if !inputs.contains(v) {
                                inputs.push(v.clone());
                            }
                        }
                    }
                    if s.external {
                        inputs.push(EXTERNAL.to_string());
                    }
                    let mut scope = inputs.clone();
                    let mut logic = namer.block(&s.body, &mut scope);
                    let outputs: Vec<String> = (0..s.outputs).map(|k| format!("out{id}_{k}")).collect();
                    if s.bind_outputs {
                        for o in &outputs {
                            logic.push(LogicNode::Assign {
                                target: o.clone(),
                                source: AssignSource::Literal(Value::Number(1.0)),
                            });
                        }
                    }
                    produced.extend(outputs.iter().cloned());
                    let mut step = Step::new(id, format!("fuzz step {id}"));
                    step.logic = logic;
                    step.inputs = inputs;
                    step.outputs = outputs;
                    step
                })
                .collect();
            let termination = match term {
                0 => None,
                1 => Some(ConditionExpr::var("never_bound")),
                _ => Some(ConditionExpr::compare(
                    ConditionExpr::var(namer.first_counter.as_deref().unwrap_or("c0")),
                    CmpOp::Lt,
                    ConditionExpr::Number(-30.0),
                )),
            };
            let topology = if termination.is_some() {
                WorkflowTopology::Iterative
            } else {
                WorkflowTopology::Sequential
            };
            FuzzCase {
                plan: Plan {
                    topology,
                    termination,
                    max_iterations,
                    query: "fuzz".into(),
                    steps,
                },
                cap,
                provide_external,
            }
        })
}

/// Calls `probe` with a fresh, strictly decreasing number on every request,
/// so no `c < 10` loop ever exits and no `c >= 10` loop is ever satisfied.
#[derive(Debug, Default)]
pub struct Adversary {
    counter: AtomicI64,
}

impl AgentBackend for Adversary {
    fn decide(&self, _: Request<'_>) -> Result<AgentDecision, BackendError> {
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        Ok(AgentDecision::call("probe", [("x", Value::Number(-(n as f64)))]))
    }
}

/// Static upper bound on loop passes a block can consume; `None` when some
/// loop is unbounded.
pub fn pass_bound(nodes: &[LogicNode]) -> Option<u64> {
    nodes.iter().try_fold(0u64, |acc, n| Some(acc + node_bound(n)?))
}

fn node_bound(node: &LogicNode) -> Option<u64> {
    Some(match node {
        LogicNode::While { bound, body, .. } => u64::from((*bound)?) * (1 + pass_bound(body)?),
        LogicNode::ForEach { collection, body, .. } => match collection {
            Collection::Literal(items) => items.len() as u64 * (1 + pass_bound(body)?),
            Collection::Var(_) => return None,
        },
        LogicNode::IfChain { branches, else_body } => {
            let mut m = else_body.as_deref().map_or(Some(0), pass_bound)?;
            for (_, b) in branches {
                m = m.max(pass_bound(b)?);
            }
            m
        }
        LogicNode::TryOnFailure { body, fallback } => pass_bound(body)? + pass_bound(fallback)?,
        LogicNode::Parallel { branches } => branches.iter().try_fold(0, |a, b| Some(a + pass_bound(b)?))?,
        _ => 0,
    })
}

pub fn plan_pass_bound(plan: &Plan) -> Option<u64> {
    plan.steps.iter().try_fold(0u64, |a, s| Some(a + pass_bound(&s.logic)?))
}

/// Highest loop pass recorded in a trace.
pub fn passes_used(trace: &ExecutionTrace) -> u32 {
    trace.records.iter().map(|r| r.iteration).max().unwrap_or(0)
}

/// Dependency audit: every step that called a tool did so only after each
/// of its inputs was supplied up front or produced by an earlier step that
/// finished. Returns the violations found.
pub fn audit_dependencies(plan: &Plan, trace: &ExecutionTrace, initial: &BTreeSet<String>) -> Vec<String> {
    let mut violations = Vec::new();
    let mut finished_outputs: BTreeSet<String> = initial.clone();
    let mut last_step = None;
    let mut step_failed = false;
    for rec in &trace.records {
        if last_step != Some(rec.step) {
            if let Some(prev) = last_step {
                if !step_failed {
                    if let Some(s) = plan.steps.iter().find(|s| s.id.0 == prev) {
                        finished_outputs.extend(s.outputs.iter().cloned());
                    }
                }
            }
            last_step = Some(rec.step);
            step_failed = false;
        }
        step_failed |= rec.outcome != Outcome::Ok;
        if rec.tool_calls.is_empty() {
            continue;
        }
        let step = plan
            .steps
            .iter()
            .find(|s| s.id.0 == rec.step)
            .expect("trace step exists in plan");
        for input in &step.inputs {
            if !finished_outputs.contains(input) {
                violations.push(format!("step {} called a tool before `{input}` was bound", step.id.0));
            }
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// Parallel-equivalence generator.

/// Pure tools over numbers and strings, plus one that always fails. Every
/// call records the thread it ran on.
pub fn pure_tools(threads: Arc<Mutex<HashSet<ThreadId>>>) -> ToolRegistry {
    let mut r = ToolRegistry::new();
    let t = threads.clone();
    r.register(
        ToolSpec::new("mix", "a*31+b", ValueKind::Number)
            .arg(ArgSpec::required("a", ValueKind::Number))
            .arg(ArgSpec::required("b", ValueKind::Number)),
        move |args| {
            t.lock().unwrap().insert(std::thread::current().id());
            std::thread::sleep(std::time::Duration::from_micros(200));
            let a = args["a"].as_f64().unwrap_or(0.0);
            let b = args["b"].as_f64().unwrap_or(0.0);
            Ok(Value::Number((a * 31.0 + b) % 1_000_003.0))
        },
    )
    .unwrap();
    let t = threads;
    r.register(
        ToolSpec::new("label", "tag a value", ValueKind::String).arg(ArgSpec::required("v", ValueKind::Any)),
        move |args| {
            t.lock().unwrap().insert(std::thread::current().id());
            Ok(Value::String(format!(
                "<{}>",
                serde_json::to_string(&args["v"].to_json()).unwrap()
            )))
        },
    )
    .unwrap();
    r.register(ToolSpec::new("broken", "always fails", ValueKind::Any), |_| {
        Err("broken tool".into())
    })
    .unwrap();
    r
}

pub const PURE_INITIAL: [&str; 3] = ["a0", "b0", "c0"];

#[derive(Debug, Clone)]
pub enum PShape {
    Mix(usize, usize),
    Label(usize),
    Broken,
    Flow(usize),
    Const(i32),
    If(usize, Vec<PShape>, Vec<PShape>),
    Try(Vec<PShape>, Vec<PShape>),
    Par(Vec<Vec<PShape>>),
}

pub fn pshape() -> impl Strategy<Value = PShape> {
    let leaf = prop_oneof![
        4 => (any::<usize>(), any::<usize>()).prop_map(|(a, b)| PShape::Mix(a, b)),
        2 => any::<usize>().prop_map(PShape::Label),
        1 => Just(PShape::Broken),
        2 => any::<usize>().prop_map(PShape::Flow),
        1 => (-50i32..50).prop_map(PShape::Const),
    ];
    leaf.prop_recursive(3, 20, 3, |inner| {
        let block = prop::collection::vec(inner, 1..4);
        prop_oneof![
            (any::<usize>(), block.clone(), block.clone()).prop_map(|(v, a, b)| PShape::If(v, a, b)),
            (block.clone(), block.clone()).prop_map(|(a, b)| PShape::Try(a, b)),
            prop::collection::vec(block, 2..4).prop_map(PShape::Par),
        ]
    })
}

fn pick(scope: &[String], i: usize) -> VarPath {
    VarPath::var(&scope[i % scope.len()])
}

impl Namer {
    fn pblock(&mut self, shapes: &[PShape], scope: &mut Vec<String>) -> Vec<LogicNode> {
        let mut out = Vec::new();
        for s in shapes {
            let node = match s {
                PShape::Mix(a, b) => {
                    let name = self.fresh("m");
                    let call = ActionCallExpr::new("mix")
                        .arg("a", ArgValue::Var(pick(scope, *a)))
                        .arg("b", ArgValue::Var(pick(scope, *b)))
                        .bind(&name);
                    scope.push(name);
                    LogicNode::Execute(call)
                }
                PShape::Label(v) => {
                    let name = self.fresh("l");
                    let call = ActionCallExpr::new("label")
                        .arg("v", ArgValue::Var(pick(scope, *v)))
                        .bind(&name);
                    LogicNode::Execute(call)
                }
                PShape::Broken => LogicNode::Execute(ActionCallExpr::new("broken").bind(self.fresh("x"))),
                PShape::Flow(v) => {
                    let name = self.fresh("f");
                    let node = LogicNode::DataFlow {
                        source: pick(scope, *v),
                        target: name.clone(),
                    };
                    scope.push(name);
                    node
                }
                PShape::Const(k) => {
                    let name = self.fresh("k");
                    let node = LogicNode::Assign {
                        target: name.clone(),
                        source: AssignSource::Literal(Value::Number(f64::from(*k))),
                    };
                    scope.push(name);
                    node
                }
                PShape::If(v, a, b) => LogicNode::IfChain {
                    branches: vec![(
                        ConditionExpr::compare(
                            ConditionExpr::Var(pick(scope, *v)),
                            CmpOp::Gt,
                            ConditionExpr::Number(500_000.0),
                        ),
                        self.pblock(a, &mut scope.clone()),
                    )],
                    else_body: Some(self.pblock(b, &mut scope.clone())),
                },
                PShape::Try(a, b) => LogicNode::TryOnFailure {
                    body: self.pblock(a, &mut scope.clone()),
                    fallback: self.pblock(b, &mut scope.clone()),
                },
                PShape::Par(branches) => LogicNode::Parallel {
                    branches: branches.iter().map(|b| self.pblock(b, &mut scope.clone())).collect(),
                },
            };
            out.push(node);
        }
        out
    }
}

/// A one-step plan whose logic is a single `PARALLEL` node with disjoint
/// branch writes, and its initial memory.
pub fn parallel_case() -> impl Strategy<Value = (Plan, BTreeMap<String, Value>)> {
    (
        prop::collection::vec(prop::collection::vec(pshape(), 1..5), 2..5),
        prop::array::uniform3(-1000i32..1000),
    )
        .prop_map(|(branches, init)| {
            let mut namer = Namer {
                next: 0,
                first_counter: None,
            };
            let scope: Vec<String> = PURE_INITIAL.iter().map(|s| s.to_string()).collect();
            let branches = branches.iter().map(|b| namer.pblock(b, &mut scope.clone())).collect();
            let mut step = Step::new(1, "parallel fan-out");
            step.inputs = scope.clone();
            step.logic = vec![LogicNode::Parallel { branches }];
            let plan = Plan {
                topology: WorkflowTopology::Sequential,
                termination: None,
                max_iterations: 1,
                query: "parallel".into(),
                steps: vec![step],
            };
            let initial = PURE_INITIAL
                .iter()
                .zip(init)
                .map(|(k, v)| (k.to_string(), Value::Number(f64::from(v))))
                .collect();
            (plan, initial)
        })
}

// ---------------------------------------------------------------------------
// Least-squares fits for the token-growth check.

/// Coefficient of determination of the least-squares polynomial of the
/// given degree (1 or 2) through `(x, y)`.
pub fn r_squared(xs: &[f64], ys: &[f64], degree: usize) -> f64 {
    let m = degree + 1;
    let mut a = vec![vec![0.0; m + 1]; m];
    for (&x, &y) in xs.iter().zip(ys) {
        for (i, row) in a.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().take(m).enumerate() {
                *cell += x.powi((i + j) as i32);
            }
            row[m] += y * x.powi(i as i32);
        }
    }
    // Gauss-Jordan on the normal equations.
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        for r in 0..m {
            if r != col {
                let f = a[r][col] / a[col][col];
                let pivot_row = a[col].clone();
                for (cell, p) in a[r].iter_mut().zip(&pivot_row).skip(col) {
                    *cell -= f * p;
                }
            }
        }
    }
    let coef: Vec<f64> = (0..m).map(|i| a[i][m] / a[i][i]).collect();
    let mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let fit: f64 = coef.iter().enumerate().map(|(i, c)| c * x.powi(i as i32)).sum();
        ss_res += (y - fit).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    1.0 - ss_res / ss_tot
}

// ---------------------------------------------------------------------------
// Per-case checks shared by the property tests and the acceptance target.

pub const RUN_CEILING: std::time::Duration = std::time::Duration::from_secs(10);

pub struct FuzzRun {
    pub outcome: plexec::executor::RunOutcome,
    pub elapsed: std::time::Duration,
    pub initial: BTreeSet<String>,
}

pub fn run_fuzz_case(case: &FuzzCase) -> FuzzRun {
    let initial: BTreeMap<String, Value> = if case.provide_external {
        [(EXTERNAL.to_string(), Value::Number(-1.0))].into()
    } else {
        BTreeMap::new()
    };
    let policy = plexec::executor::HaltPolicy {
        max_iterations: case.cap,
        ..Default::default()
    };
    let names = initial.keys().cloned().collect();
    let started = std::time::Instant::now();
    let outcome = plexec::executor::run_plan(&case.plan, &probe_tools(), &Adversary::default(), initial, &policy)
        .expect("generated plans validate");
    FuzzRun {
        outcome,
        elapsed: started.elapsed(),
        initial: names,
    }
}

/// The run halted in time and used no more loop passes than both the
/// plan's static bound and the effective cap allow.
pub fn check_termination(case: &FuzzCase, run: &FuzzRun) -> Result<(), String> {
    if run.elapsed > RUN_CEILING {
        return Err(format!("run took {:?}", run.elapsed));
    }
    let k_max = u64::from(
        case.cap
            .map_or(case.plan.max_iterations, |c| c.min(case.plan.max_iterations)),
    );
    let limit = plan_pass_bound(&case.plan).map_or(k_max, |b| b.min(k_max));
    let used = u64::from(passes_used(&run.outcome.trace));
    if used > limit {
        return Err(format!("{used} loop passes exceed the limit {limit}"));
    }
    Ok(())
}

pub fn check_dependencies(case: &FuzzCase, run: &FuzzRun) -> Result<(), String> {
    let v = audit_dependencies(&case.plan, &run.outcome.trace, &run.initial);
    if v.is_empty() {
        Ok(())
    } else {
        Err(v.join("; "))
    }
}

/// Runs a parallel case with and without threads; returns whether any tool
/// ran off the calling thread.
pub fn check_parallel(plan: &Plan, initial: &BTreeMap<String, Value>) -> Result<bool, String> {
    let run = |threads: bool| {
        let seen = Arc::new(Mutex::new(HashSet::new()));
        let tools = pure_tools(seen.clone());
        let policy = plexec::executor::HaltPolicy {
            threads,
            ..Default::default()
        };
        let out = plexec::executor::run_plan(plan, &tools, &plexec::agents::RuleBackend, initial.clone(), &policy)
            .expect("generated plans validate");
        let spread = seen.lock().unwrap().iter().any(|id| *id != std::thread::current().id());
        (out, spread)
    };
    let (concurrent, spread) = run(true);
    let (sequential, _) = run(false);
    if concurrent.memory.values() != sequential.memory.values() {
        return Err(format!(
            "memory differs:\n concurrent {:?}\n sequential {:?}",
            concurrent.memory.values(),
            sequential.memory.values()
        ));
    }
    if concurrent.halt_reason() != sequential.halt_reason() {
        return Err(format!(
            "halt differs: {} vs {}",
            concurrent.halt_reason(),
            sequential.halt_reason()
        ));
    }
    Ok(spread)
}
