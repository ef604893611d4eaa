use std::fmt::Write;

use crate::condition::{precedence, ConditionExpr};
use crate::logic::{ActionCallExpr, ArgValue, AssignSource, Collection, LogicNode, LoopMode};
use crate::plan::Plan;
use crate::value::Value;

const INDENT: &str = "  ";

pub(super) fn plan(plan: &Plan) -> String {
    let mut out = String::new();
    writeln!(out, "Type: {}", plan.topology).unwrap();
    if let Some(term) = &plan.termination {
        writeln!(out, "Termination: {}", condition(term)).unwrap();
    }
    writeln!(out, "Max iterations: {}", plan.max_iterations).unwrap();
    writeln!(out, "Query: {}", plan.query).unwrap();
    for step in &plan.steps {
        out.push('\n');
        writeln!(out, "STEP {}:", step.id).unwrap();
        writeln!(out, "{INDENT}CONTEXT: {}", step.context).unwrap();
        writeln!(out, "{INDENT}OBJECTIVE: {}", step.objective).unwrap();
        writeln!(out, "{INDENT}INPUTS: [{}]", step.inputs.join(", ")).unwrap();
        writeln!(out, "{INDENT}OUTPUTS: [{}]", step.outputs.join(", ")).unwrap();
        write!(out, "{INDENT}LOGIC: ").unwrap();
        block(&mut out, &step.logic, 1);
        out.push('\n');
    }
    // Trailing spaces from empty clauses are not part of the format.
    out.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
}

/// Pretty-prints a statement list at the given indentation level, one
/// statement per line.
pub(super) fn logic(nodes: &[LogicNode], level: usize) -> String {
    let mut out = String::new();
    for node in nodes {
        out.push_str(&INDENT.repeat(level));
        statement(&mut out, node, level);
        out.push('\n');
    }
    out
}

fn block(out: &mut String, nodes: &[LogicNode], level: usize) {
    out.push_str("{\n");
    out.push_str(&logic(nodes, level + 1));
    out.push_str(&INDENT.repeat(level));
    out.push('}');
}

fn statement(out: &mut String, node: &LogicNode, level: usize) {
    match node {
        LogicNode::Execute(c) => {
            out.push_str("EXECUTE ");
            out.push_str(&call(c));
            if let Some(b) = &c.result_binding {
                write!(out, " -> {b}").unwrap();
            }
        }
        LogicNode::IfChain { branches, else_body } => {
            for (i, (cond, body)) in branches.iter().enumerate() {
                out.push_str(if i == 0 { "IF " } else { " ELIF " });
                out.push_str(&condition(cond));
                out.push(' ');
                block(out, body, level);
            }
            if let Some(body) = else_body {
                out.push_str(" ELSE ");
                block(out, body, level);
            }
        }
        LogicNode::ForEach { var, collection, body } => {
            write!(out, "FOR {var} IN ").unwrap();
            match collection {
                Collection::Var(p) => write!(out, "{p}").unwrap(),
                Collection::Literal(items) => out.push_str(&literal(&Value::List(items.clone()))),
            }
            out.push(' ');
            block(out, body, level);
        }
        LogicNode::While {
            mode,
            condition: cond,
            bound,
            body,
        } => {
            out.push_str(match mode {
                LoopMode::While => "WHILE ",
                LoopMode::Until => "UNTIL ",
            });
            out.push_str(&condition(cond));
            if let Some(n) = bound {
                write!(out, " MAX {n}").unwrap();
            }
            out.push(' ');
            block(out, body, level);
        }
        LogicNode::TryOnFailure { body, fallback } => {
            out.push_str("TRY ");
            block(out, body, level);
            out.push_str(" ON_FAILURE ");
            block(out, fallback, level);
        }
        LogicNode::Parallel { branches } => {
            out.push_str("PARALLEL {\n");
            for branch in branches {
                out.push_str(&INDENT.repeat(level + 1));
                out.push_str("BRANCH ");
                block(out, branch, level + 1);
                out.push('\n');
            }
            out.push_str(&INDENT.repeat(level));
            out.push('}');
        }
        LogicNode::DataFlow { source, target } => write!(out, "DATA-FLOW {source} -> {target}").unwrap(),
        LogicNode::Abort { reason } => write!(out, "ABORT({})", quote(reason)).unwrap(),
        LogicNode::Assign { target, source } => {
            write!(out, "ASSIGN {target} = ").unwrap();
            match source {
                AssignSource::Literal(v) => out.push_str(&literal(v)),
                AssignSource::Call(c) => out.push_str(&call(c)),
            }
        }
    }
}

/// `Tool(key=value, ...)`, without the result binding.
pub(super) fn call(call: &ActionCallExpr) -> String {
    let args: Vec<String> = call
        .args
        .iter()
        .map(|(k, v)| match v {
            ArgValue::Var(p) => format!("{k}={p}"),
            // One-entry records use the compact `'key'=value` form.
            ArgValue::Literal(Value::Record(fields)) if fields.len() == 1 => {
                let (fk, fv) = fields.iter().next().expect("one field");
                format!("{k}={}={}", quote(fk), literal(fv))
            }
            ArgValue::Literal(v) => format!("{k}={}", literal(v)),
        })
        .collect();
    format!("{}({})", call.tool, args.join(", "))
}

pub(super) fn literal(value: &Value) -> String {
    match value {
        Value::Bool(b) => b.to_string(),
        Value::Number(n) => n.to_string(),
        Value::String(s) => quote(s),
        Value::List(items) => format!("[{}]", items.iter().map(literal).collect::<Vec<_>>().join(", ")),
        Value::Record(fields) => format!(
            "{{{}}}",
            fields
                .iter()
                .map(|(k, v)| format!("{}: {}", quote(k), literal(v)))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('\'');
    for c in s.chars() {
        match c {
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\\' => out.push_str("\\\\"),
            '\'' => out.push_str("\\'"),
            c => out.push(c),
        }
    }
    out.push('\'');
    out
}

pub(super) fn condition(expr: &ConditionExpr) -> String {
    match expr {
        ConditionExpr::Var(p) => p.to_string(),
        ConditionExpr::Number(n) => n.to_string(),
        ConditionExpr::Str(s) => quote(s),
        ConditionExpr::Bool(b) => b.to_string(),
        ConditionExpr::Exists(p) => format!("EXISTS({p})"),
        ConditionExpr::Empty(p) => format!("EMPTY({p})"),
        ConditionExpr::Not(inner) => format!("NOT {}", child(inner, 4)),
        ConditionExpr::Compare(l, op, r) => format!("{} {} {}", child(l, 4), op.symbol(), child(r, 4)),
        ConditionExpr::And(l, r) => format!("{} AND {}", child(l, 2), child(r, 3)),
        ConditionExpr::Or(l, r) => format!("{} OR {}", child(l, 1), child(r, 2)),
    }
}

/// Renders `expr`, parenthesized unless it binds at least as tightly as `min`.
fn child(expr: &ConditionExpr, min: u8) -> String {
    if precedence(expr) >= min {
        condition(expr)
    } else {
        format!("({})", condition(expr))
    }
}
