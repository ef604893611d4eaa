//! Textual plan format: parser and canonical printer.
//!
//! A document is a header block followed by step blocks:
//!
//! ```text
//! Type: iterative
//! Termination: voltage < 0.95
//! Max iterations: 50
//! Query: Raise bus 11 load until voltage collapses
//!
//! STEP 1:
//!   CONTEXT: grid
//!   OBJECTIVE: Retrieve all loads connected to bus 11
//!   INPUTS: []
//!   OUTPUTS: [bus11_load_indices]
//!   LOGIC: {
//!     EXECUTE RetrieveTool(table='load', filter='bus'=11) -> bus11_load_indices
//!   }
//! ```
//!
//! Header and clause keys are case-insensitive; `MAX_ITERATIONS:` and
//! `Max iterations:` are the same key. Statement keywords (`EXECUTE`, `IF`,
//! `ELIF`, `ELSE`, `FOR … IN`, `WHILE`, `UNTIL`, `MAX`, `TRY`, `ON_FAILURE`,
//! `PARALLEL`, `BRANCH`, `DATA-FLOW`, `ABORT`, `ASSIGN`) are case-insensitive.
//! `#` starts a comment outside string literals.
//!
//! Condition precedence, loosest first: `OR`, `AND`, comparison
//! (non-chaining), `NOT`. Parentheses override.

mod lexer;
mod parser;
mod printer;

use thiserror::Error;

use crate::condition::ConditionExpr;
use crate::logic::{ActionCallExpr, LogicNode};
use crate::plan::Plan;
use crate::value::Value;

pub use parser::DEFAULT_MAX_ITERATIONS;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: found {found}, expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        found: String,
        expected: String,
    },
    #[error("unknown primitive `{keyword}` at {line}:{col}")]
    UnknownPrimitive { line: usize, col: usize, keyword: String },
    #[error("nesting depth exceeds {limit} at {line}:{col}")]
    DepthExceeded { line: usize, col: usize, limit: usize },
    #[error("input is not valid UTF-8 (first bad byte at offset {offset})")]
    InvalidUtf8 { offset: usize },
}

impl ParseError {
    /// 1-based line and column, when the error has a position.
    pub fn position(&self) -> Option<(usize, usize)> {
        match self {
            ParseError::Syntax { line, col, .. }
            | ParseError::UnknownPrimitive { line, col, .. }
            | ParseError::DepthExceeded { line, col, .. } => Some((*line, *col)),
            ParseError::InvalidUtf8 { .. } => None,
        }
    }
}

pub fn parse_plan(text: &str) -> Result<Plan, ParseError> {
    parser::Parser::new(text).document()
}

pub fn parse_plan_bytes(bytes: &[u8]) -> Result<Plan, ParseError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ParseError::InvalidUtf8 {
        offset: e.valid_up_to(),
    })?;
    parse_plan(text)
}

pub fn parse_condition(text: &str) -> Result<ConditionExpr, ParseError> {
    let mut p = parser::Parser::new(text);
    let expr = p.condition()?;
    p.expect_eof()?;
    Ok(expr)
}

pub fn print_plan(plan: &Plan) -> String {
    printer::plan(plan)
}

pub fn print_condition(expr: &ConditionExpr) -> String {
    printer::condition(expr)
}

/// Statement list, one per line, indented `level` steps of two spaces.
pub fn print_logic(nodes: &[LogicNode], level: usize) -> String {
    printer::logic(nodes, level)
}

pub fn print_call(call: &ActionCallExpr) -> String {
    printer::call(call)
}

pub fn print_literal(value: &Value) -> String {
    printer::literal(value)
}
