//! Condition expressions used by IF/WHILE/UNTIL and the plan-level
//! termination criterion, with their evaluator.
//!
//! The language is deliberately function-free: comparisons between operands,
//! boolean connectives, and the `EXISTS` / `EMPTY` presence predicates.

use std::fmt;

use thiserror::Error;

use crate::value::Value;

/// Maximum height of a condition tree, enforced by the parser.
pub const MAX_CONDITION_DEPTH: usize = 32;

/// A variable reference with optional record field access, e.g. `flow.loadings.line_5`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarPath {
    pub root: String,
    pub fields: Vec<String>,
}

impl VarPath {
    pub fn var(name: impl Into<String>) -> Self {
        Self {
            root: name.into(),
            fields: Vec::new(),
        }
    }

    pub fn with_field(mut self, field: impl Into<String>) -> Self {
        self.fields.push(field.into());
        self
    }
}

impl fmt::Display for VarPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.root)?;
        for field in &self.fields {
            write!(f, ".{field}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Lt,
    Le,
    Eq,
    Ne,
    Ge,
    Gt,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Gt => ">",
        }
    }

    pub const ALL: [CmpOp; 6] = [CmpOp::Lt, CmpOp::Le, CmpOp::Eq, CmpOp::Ne, CmpOp::Ge, CmpOp::Gt];
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionExpr {
    Var(VarPath),
    Number(f64),
    Str(String),
    Bool(bool),
    Exists(VarPath),
    Empty(VarPath),
    Not(Box<ConditionExpr>),
    Compare(Box<ConditionExpr>, CmpOp, Box<ConditionExpr>),
    And(Box<ConditionExpr>, Box<ConditionExpr>),
    Or(Box<ConditionExpr>, Box<ConditionExpr>),
}

/// Binding strength used by the printer; higher binds tighter.
pub(crate) fn precedence(expr: &ConditionExpr) -> u8 {
    match expr {
        ConditionExpr::Or(..) => 1,
        ConditionExpr::And(..) => 2,
        ConditionExpr::Compare(..) => 3,
        ConditionExpr::Not(_) => 4,
        _ => 5,
    }
}

impl ConditionExpr {
    pub fn compare(left: ConditionExpr, op: CmpOp, right: ConditionExpr) -> Self {
        ConditionExpr::Compare(Box::new(left), op, Box::new(right))
    }

    pub fn and(left: ConditionExpr, right: ConditionExpr) -> Self {
        ConditionExpr::And(Box::new(left), Box::new(right))
    }

    pub fn or(left: ConditionExpr, right: ConditionExpr) -> Self {
        ConditionExpr::Or(Box::new(left), Box::new(right))
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: ConditionExpr) -> Self {
        ConditionExpr::Not(Box::new(inner))
    }

    pub fn var(name: &str) -> Self {
        ConditionExpr::Var(VarPath::var(name))
    }

    /// Height of the tree; a single leaf has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            ConditionExpr::Not(inner) => 1 + inner.depth(),
            ConditionExpr::Compare(l, _, r) | ConditionExpr::And(l, r) | ConditionExpr::Or(l, r) => {
                1 + l.depth().max(r.depth())
            }
            _ => 1,
        }
    }

    /// Every variable path referenced anywhere in the expression.
    pub fn referenced_paths(&self) -> Vec<&VarPath> {
        let mut out = Vec::new();
        self.collect_paths(&mut out);
        out
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a VarPath>) {
        match self {
            ConditionExpr::Var(p) | ConditionExpr::Exists(p) | ConditionExpr::Empty(p) => out.push(p),
            ConditionExpr::Not(inner) => inner.collect_paths(out),
            ConditionExpr::Compare(l, _, r) | ConditionExpr::And(l, r) | ConditionExpr::Or(l, r) => {
                l.collect_paths(out);
                r.collect_paths(out);
            }
            ConditionExpr::Number(_) | ConditionExpr::Str(_) | ConditionExpr::Bool(_) => {}
        }
    }
}

/// Read access to variable bindings.
pub trait Scope {
    fn lookup(&self, name: &str) -> Option<&Value>;

    fn resolve(&self, path: &VarPath) -> Result<&Value, EvalError> {
        let mut current = self
            .lookup(&path.root)
            .ok_or_else(|| EvalError::UnboundVariable(path.root.clone()))?;
        for field in &path.fields {
            current = match current {
                Value::Record(fields) => fields
                    .get(field)
                    .ok_or_else(|| EvalError::UnboundVariable(path.to_string()))?,
                other => {
                    return Err(EvalError::TypeMismatch(format!(
                        "cannot access field `{field}` of {} in `{path}`",
                        other.kind()
                    )))
                }
            };
        }
        Ok(current)
    }
}

impl Scope for std::collections::BTreeMap<String, Value> {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.get(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

/// Evaluates a condition to a boolean.
///
/// Unresolved references raise [`EvalError::UnboundVariable`]; `EXISTS` and
/// `EMPTY` never raise. `AND`/`OR` short-circuit left to right.
pub fn eval_condition<S: Scope + ?Sized>(expr: &ConditionExpr, scope: &S) -> Result<bool, EvalError> {
    match eval_value(expr, scope)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::TypeMismatch(format!(
            "condition evaluated to {} instead of boolean",
            other.kind()
        ))),
    }
}

fn eval_value<S: Scope + ?Sized>(expr: &ConditionExpr, scope: &S) -> Result<Value, EvalError> {
    Ok(match expr {
        ConditionExpr::Var(path) => scope.resolve(path)?.clone(),
        ConditionExpr::Number(n) => Value::Number(*n),
        ConditionExpr::Str(s) => Value::String(s.clone()),
        ConditionExpr::Bool(b) => Value::Bool(*b),
        ConditionExpr::Exists(path) => Value::Bool(scope.resolve(path).is_ok()),
        ConditionExpr::Empty(path) => Value::Bool(match scope.resolve(path) {
            Ok(v) => v.is_empty_collection(),
            Err(_) => true,
        }),
        ConditionExpr::Not(inner) => Value::Bool(!eval_condition(inner, scope)?),
        ConditionExpr::And(l, r) => Value::Bool(eval_condition(l, scope)? && eval_condition(r, scope)?),
        ConditionExpr::Or(l, r) => Value::Bool(eval_condition(l, scope)? || eval_condition(r, scope)?),
        ConditionExpr::Compare(l, op, r) => {
            let left = eval_value(l, scope)?;
            let right = eval_value(r, scope)?;
            Value::Bool(compare(&left, *op, &right)?)
        }
    })
}

fn compare(left: &Value, op: CmpOp, right: &Value) -> Result<bool, EvalError> {
    use std::cmp::Ordering;
    let ordering = match (left, right) {
        (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
        (Value::String(a), Value::String(b)) => Some(a.cmp(b)),
        (a, b) if a.kind() == b.kind() => {
            return match op {
                CmpOp::Eq => Ok(a == b),
                CmpOp::Ne => Ok(a != b),
                _ => Err(EvalError::TypeMismatch(format!(
                    "operator `{}` is not defined on {}",
                    op.symbol(),
                    a.kind()
                ))),
            }
        }
        (a, b) => {
            return Err(EvalError::TypeMismatch(format!(
                "cannot compare {} {} {}",
                a.kind(),
                op.symbol(),
                b.kind()
            )))
        }
    };
    let Some(ord) = ordering else {
        return Ok(matches!(op, CmpOp::Ne));
    };
    Ok(match op {
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Gt => ord == Ordering::Greater,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn scope(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn voltage_below_threshold() {
        let expr = ConditionExpr::compare(ConditionExpr::var("voltage"), CmpOp::Lt, ConditionExpr::Number(0.95));
        assert!(eval_condition(&expr, &scope(&[("voltage", Value::Number(0.93))])).unwrap());
        assert!(!eval_condition(&expr, &scope(&[("voltage", Value::Number(0.95))])).unwrap());
    }

    #[test]
    fn exists_on_empty_memory_is_false() {
        let expr = ConditionExpr::Exists(VarPath::var("x"));
        assert!(!eval_condition(&expr, &scope(&[])).unwrap());
    }

    #[test]
    fn empty_list_binding_is_empty() {
        let expr = ConditionExpr::Empty(VarPath::var("bus5_load_indices"));
        let s = scope(&[("bus5_load_indices", Value::List(vec![]))]);
        assert!(eval_condition(&expr, &s).unwrap());
        let s = scope(&[("bus5_load_indices", Value::List(vec![Value::Number(1.0)]))]);
        assert!(!eval_condition(&expr, &s).unwrap());
    }

    #[test]
    fn unbound_comparison_is_an_error_not_false() {
        let expr = ConditionExpr::compare(ConditionExpr::var("v"), CmpOp::Lt, ConditionExpr::Number(1.0));
        assert_eq!(
            eval_condition(&expr, &scope(&[])),
            Err(EvalError::UnboundVariable("v".into()))
        );
    }

    #[test]
    fn mixed_types_mismatch() {
        let expr = ConditionExpr::compare(ConditionExpr::var("v"), CmpOp::Eq, ConditionExpr::Number(1.0));
        let err = eval_condition(&expr, &scope(&[("v", Value::from("1"))])).unwrap_err();
        assert!(matches!(err, EvalError::TypeMismatch(_)));
    }

    #[test]
    fn booleans_have_no_ordering() {
        let expr = ConditionExpr::compare(ConditionExpr::Bool(true), CmpOp::Lt, ConditionExpr::Bool(false));
        assert!(matches!(
            eval_condition(&expr, &scope(&[])),
            Err(EvalError::TypeMismatch(_))
        ));
        let expr = ConditionExpr::compare(ConditionExpr::Bool(true), CmpOp::Ne, ConditionExpr::Bool(false));
        assert!(eval_condition(&expr, &scope(&[])).unwrap());
    }

    #[test]
    fn and_short_circuits_past_unbound_field() {
        // EXISTS(x) AND x.count > 3 must not raise when x is absent.
        let expr = ConditionExpr::and(
            ConditionExpr::Exists(VarPath::var("x")),
            ConditionExpr::compare(
                ConditionExpr::Var(VarPath::var("x").with_field("count")),
                CmpOp::Gt,
                ConditionExpr::Number(3.0),
            ),
        );
        assert!(!eval_condition(&expr, &scope(&[])).unwrap());
        let rec = Value::record([("count", Value::Number(4.0))]);
        assert!(eval_condition(&expr, &scope(&[("x", rec)])).unwrap());
    }

    #[test]
    fn field_access_on_scalar_is_type_mismatch_but_exists_is_false() {
        let s = scope(&[("page", Value::from("Could not find X."))]);
        let path = VarPath::var("page").with_field("title");
        assert!(matches!(s.resolve(&path), Err(EvalError::TypeMismatch(_))));
        assert!(!eval_condition(&ConditionExpr::Exists(path), &s).unwrap());
    }

    #[test]
    fn non_boolean_condition_is_rejected() {
        let s = scope(&[("n", Value::Number(1.0))]);
        assert!(matches!(
            eval_condition(&ConditionExpr::var("n"), &s),
            Err(EvalError::TypeMismatch(_))
        ));
    }

    #[test]
    fn depth_counts_tree_height() {
        let leaf = ConditionExpr::Bool(true);
        assert_eq!(leaf.depth(), 1);
        let e = ConditionExpr::not(ConditionExpr::and(leaf.clone(), ConditionExpr::not(leaf)));
        assert_eq!(e.depth(), 4);
    }
}
