//! Step logic: the control-flow primitives a plan step is built from.

use std::collections::BTreeSet;

use crate::condition::{ConditionExpr, VarPath};
use crate::value::Value;

/// Maximum block nesting depth, enforced by the parser.
pub const MAX_NESTING_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum ArgValue {
    Literal(Value),
    Var(VarPath),
}

/// A tool invocation as written in the plan: `Tool(key=value, ...) -> binding`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionCallExpr {
    pub tool: String,
    pub args: Vec<(String, ArgValue)>,
    pub result_binding: Option<String>,
}

impl ActionCallExpr {
    pub fn new(tool: impl Into<String>) -> Self {
        Self {
            tool: tool.into(),
            args: Vec::new(),
            result_binding: None,
        }
    }

    pub fn arg(mut self, key: impl Into<String>, value: ArgValue) -> Self {
        self.args.push((key.into(), value));
        self
    }

    pub fn bind(mut self, name: impl Into<String>) -> Self {
        self.result_binding = Some(name.into());
        self
    }

    pub fn referenced_paths(&self) -> impl Iterator<Item = &VarPath> {
        self.args.iter().filter_map(|(_, v)| match v {
            ArgValue::Var(p) => Some(p),
            ArgValue::Literal(_) => None,
        })
    }

    /// First argument key that appears more than once.
    pub fn duplicate_key(&self) -> Option<&str> {
        let mut seen = BTreeSet::new();
        self.args.iter().map(|(k, _)| k.as_str()).find(|k| !seen.insert(*k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Collection {
    Var(VarPath),
    Literal(Vec<Value>),
}

/// `WHILE` continues while the condition holds; `UNTIL` stops once it holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoopMode {
    While,
    Until,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssignSource {
    Literal(Value),
    Call(ActionCallExpr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LogicNode {
    Execute(ActionCallExpr),
    IfChain {
        branches: Vec<(ConditionExpr, Vec<LogicNode>)>,
        else_body: Option<Vec<LogicNode>>,
    },
    ForEach {
        var: String,
        collection: Collection,
        body: Vec<LogicNode>,
    },
    While {
        mode: LoopMode,
        condition: ConditionExpr,
        bound: Option<u32>,
        body: Vec<LogicNode>,
    },
    TryOnFailure {
        body: Vec<LogicNode>,
        fallback: Vec<LogicNode>,
    },
    Parallel {
        branches: Vec<Vec<LogicNode>>,
    },
    DataFlow {
        source: VarPath,
        target: String,
    },
    Abort {
        reason: String,
    },
    Assign {
        target: String,
        source: AssignSource,
    },
}

impl LogicNode {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LogicNode::Execute(_) => "EXECUTE",
            LogicNode::IfChain { .. } => "IF",
            LogicNode::ForEach { .. } => "FOR",
            LogicNode::While { .. } => "WHILE",
            LogicNode::TryOnFailure { .. } => "TRY",
            LogicNode::Parallel { .. } => "PARALLEL",
            LogicNode::DataFlow { .. } => "DATA-FLOW",
            LogicNode::Abort { .. } => "ABORT",
            LogicNode::Assign { .. } => "ASSIGN",
        }
    }

    /// Child blocks, in source order.
    pub fn blocks(&self) -> Vec<&[LogicNode]> {
        match self {
            LogicNode::IfChain { branches, else_body } => {
                let mut out: Vec<&[LogicNode]> = branches.iter().map(|(_, b)| b.as_slice()).collect();
                if let Some(e) = else_body {
                    out.push(e);
                }
                out
            }
            LogicNode::ForEach { body, .. } | LogicNode::While { body, .. } => vec![body.as_slice()],
            LogicNode::TryOnFailure { body, fallback } => vec![body.as_slice(), fallback.as_slice()],
            LogicNode::Parallel { branches } => branches.iter().map(Vec::as_slice).collect(),
            _ => Vec::new(),
        }
    }

    /// Variable this node itself binds, if any.
    pub fn direct_binding(&self) -> Option<&str> {
        match self {
            LogicNode::Execute(call) => call.result_binding.as_deref(),
            LogicNode::DataFlow { target, .. } | LogicNode::Assign { target, .. } => Some(target),
            _ => None,
        }
    }
}

/// Block nesting depth: a flat list of simple statements has depth 1.
pub fn nesting_depth(nodes: &[LogicNode]) -> usize {
    1 + nodes
        .iter()
        .flat_map(|n| n.blocks())
        .map(nesting_depth)
        .max()
        .unwrap_or(0)
}

/// Variables that may be bound by executing `nodes`, excluding loop variables
/// (those are restored when their loop exits).
pub fn written_vars(nodes: &[LogicNode]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    collect_writes(nodes, &mut out);
    out
}

fn collect_writes(nodes: &[LogicNode], out: &mut BTreeSet<String>) {
    for node in nodes {
        if let Some(name) = node.direct_binding() {
            out.insert(name.to_string());
        }
        for block in node.blocks() {
            collect_writes(block, out);
        }
    }
}

/// Calls every node in the tree, depth first, in source order.
pub fn walk<'a>(nodes: &'a [LogicNode], f: &mut impl FnMut(&'a LogicNode)) {
    for node in nodes {
        f(node);
        for block in node.blocks() {
            walk(block, f);
        }
    }
}

/// Tool names statically named by `EXECUTE` and `ASSIGN` calls.
pub fn tool_names(nodes: &[LogicNode]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    walk(nodes, &mut |node| match node {
        LogicNode::Execute(call)
        | LogicNode::Assign {
            source: AssignSource::Call(call),
            ..
        } => {
            out.insert(call.tool.clone());
        }
        _ => {}
    });
    out
}
