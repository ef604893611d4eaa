use std::collections::BTreeMap;

use crate::condition::{ConditionExpr, VarPath, MAX_CONDITION_DEPTH};
use crate::logic::{ActionCallExpr, ArgValue, AssignSource, Collection, LogicNode, LoopMode, MAX_NESTING_DEPTH};
use crate::plan::{Plan, Step, WorkflowTopology};
use crate::value::Value;

use super::lexer::{Lexed, Lexer, Pos, Token};
use super::ParseError;

/// Default iteration bound when a document omits `MAX_ITERATIONS`.
pub const DEFAULT_MAX_ITERATIONS: u32 = 50;

pub(super) struct Parser<'a> {
    lexer: Lexer<'a>,
    pos: Pos,
}

fn syntax(at: Pos, found: impl Into<String>, expected: impl Into<String>) -> ParseError {
    ParseError::Syntax {
        line: at.line,
        col: at.col,
        found: found.into(),
        expected: expected.into(),
    }
}

/// Header keys compare case-insensitively, with `_` and spaces equivalent.
fn header_key(words: &str) -> String {
    words
        .split(|c: char| c == '_' || c.is_whitespace())
        .filter(|w| !w.is_empty())
        .map(str::to_ascii_uppercase)
        .collect::<Vec<_>>()
        .join("_")
}

impl<'a> Parser<'a> {
    pub(super) fn new(src: &'a str) -> Self {
        Self {
            lexer: Lexer::new(src),
            pos: Pos::START,
        }
    }

    fn peek(&self) -> Result<Lexed, ParseError> {
        self.lexer.next(self.pos)
    }

    fn bump(&mut self) -> Result<Lexed, ParseError> {
        let t = self.peek()?;
        self.pos = t.end;
        Ok(t)
    }

    fn expect(&mut self, want: &Token, what: &str) -> Result<Lexed, ParseError> {
        let t = self.bump()?;
        if &t.token == want {
            Ok(t)
        } else {
            Err(syntax(t.at, t.token.to_string(), what))
        }
    }

    fn skip_newlines(&mut self) -> Result<(), ParseError> {
        while self.peek()?.token == Token::Newline {
            self.bump()?;
        }
        Ok(())
    }

    fn expect_line_end(&mut self) -> Result<(), ParseError> {
        let t = self.peek()?;
        match t.token {
            Token::Newline => {
                self.bump()?;
                Ok(())
            }
            Token::Eof => Ok(()),
            other => Err(syntax(t.at, other.to_string(), "end of line")),
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        let t = self.bump()?;
        match t.token {
            Token::Ident(s) => Ok(s),
            other => Err(syntax(t.at, other.to_string(), what)),
        }
    }

    fn peek_keyword(&self) -> Result<Option<(String, Pos)>, ParseError> {
        let t = self.peek()?;
        Ok(match t.token {
            Token::Ident(s) => Some((s.to_ascii_uppercase(), t.at)),
            _ => None,
        })
    }

    /// Reads a header or clause key, which may contain spaces
    /// (`Max iterations:`), up to its colon.
    fn clause_key(&mut self) -> Result<(String, Pos), ParseError> {
        let start = self.peek()?;
        let mut words = Vec::new();
        loop {
            let t = self.bump()?;
            match t.token {
                Token::Ident(w) => words.push(w),
                Token::Colon if !words.is_empty() => break,
                other => return Err(syntax(t.at, other.to_string(), "a clause key followed by `:`")),
            }
        }
        Ok((header_key(&words.join(" ")), start.at))
    }

    fn raw_line(&mut self) -> String {
        let (text, end) = self.lexer.rest_of_line(self.pos);
        self.pos = end;
        text
    }

    pub(super) fn document(&mut self) -> Result<Plan, ParseError> {
        let mut topology = None;
        let mut termination = None;
        let mut max_iterations = None;
        let mut query = None;
        let mut steps = Vec::new();

        loop {
            self.skip_newlines()?;
            let t = self.peek()?;
            if t.token == Token::Eof {
                break;
            }
            if let Token::Ident(word) = &t.token {
                if word.eq_ignore_ascii_case("STEP") {
                    steps.push(self.step()?);
                    continue;
                }
            }
            let (key, at) = self.clause_key()?;
            if !steps.is_empty() {
                return Err(syntax(at, format!("`{key}`"), "a STEP block (header keys come first)"));
            }
            let duplicate = || syntax(at, format!("second `{key}` header"), "each header key once");
            match key.as_str() {
                "TYPE" => {
                    if topology.is_some() {
                        return Err(duplicate());
                    }
                    let value_at = self.lexer.skip_inline(self.pos);
                    let text = self.raw_line();
                    topology = Some(WorkflowTopology::from_keyword(&text).ok_or_else(|| {
                        syntax(
                            value_at,
                            format!("{text:?}"),
                            "sequential, conditional, iterative or hybrid",
                        )
                    })?);
                }
                "TERMINATION" => {
                    if termination.is_some() {
                        return Err(duplicate());
                    }
                    let cond = self.condition()?;
                    self.expect_line_end()?;
                    termination = Some(cond);
                }
                "MAX_ITERATIONS" => {
                    if max_iterations.is_some() {
                        return Err(duplicate());
                    }
                    max_iterations = Some(self.count("a non-negative integer")?);
                    self.expect_line_end()?;
                }
                "QUERY" => {
                    if query.is_some() {
                        return Err(duplicate());
                    }
                    query = Some(self.raw_line());
                }
                _ => {
                    return Err(syntax(
                        at,
                        format!("`{key}`"),
                        "TYPE, TERMINATION, MAX_ITERATIONS, QUERY or STEP",
                    ))
                }
            }
        }

        Ok(Plan {
            topology: topology.unwrap_or_default(),
            termination,
            max_iterations: max_iterations.unwrap_or(DEFAULT_MAX_ITERATIONS),
            query: query.unwrap_or_default(),
            steps,
        })
    }

    fn count(&mut self, what: &str) -> Result<u32, ParseError> {
        let t = self.bump()?;
        match t.token {
            Token::Number(n) if n >= 0.0 && n.fract() == 0.0 && n <= u32::MAX as f64 => Ok(n as u32),
            other => Err(syntax(t.at, other.to_string(), what)),
        }
    }

    fn step(&mut self) -> Result<Step, ParseError> {
        self.bump()?; // STEP
        let id = self.count("a step number")?;
        self.expect(&Token::Colon, "`:` after the step number")?;
        self.expect_line_end()?;
        let mut step = Step::new(id, "");
        let mut seen = Vec::new();
        loop {
            self.skip_newlines()?;
            let Some((word, _)) = self.peek_keyword()? else {
                break;
            };
            if word == "STEP" {
                break;
            }
            let (key, at) = self.clause_key()?;
            if seen.contains(&key) {
                return Err(syntax(
                    at,
                    format!("second `{key}` clause"),
                    "each clause once per step",
                ));
            }
            match key.as_str() {
                "CONTEXT" => step.context = self.raw_line(),
                "OBJECTIVE" => step.objective = self.raw_line(),
                "LOGIC" => {
                    step.logic = self.block(1)?;
                    self.expect_line_end()?;
                }
                "INPUTS" => {
                    step.inputs = self.name_list()?;
                    self.expect_line_end()?;
                }
                "OUTPUTS" => {
                    step.outputs = self.name_list()?;
                    self.expect_line_end()?;
                }
                _ => {
                    return Err(syntax(
                        at,
                        format!("`{key}`"),
                        "CONTEXT, OBJECTIVE, LOGIC, INPUTS, OUTPUTS or STEP",
                    ))
                }
            }
            seen.push(key);
        }
        Ok(step)
    }

    fn name_list(&mut self) -> Result<Vec<String>, ParseError> {
        self.expect(&Token::LBracket, "`[`")?;
        let mut names = Vec::new();
        loop {
            let t = self.bump()?;
            match t.token {
                Token::RBracket => break,
                Token::Ident(name) => {
                    names.push(name);
                    let sep = self.bump()?;
                    match sep.token {
                        Token::Comma => {}
                        Token::RBracket => break,
                        other => return Err(syntax(sep.at, other.to_string(), "`,` or `]`")),
                    }
                }
                // Quoted names are tolerated: ['bus11_load_indices'].
                Token::Str(name) => {
                    names.push(name);
                    let sep = self.bump()?;
                    match sep.token {
                        Token::Comma => {}
                        Token::RBracket => break,
                        other => return Err(syntax(sep.at, other.to_string(), "`,` or `]`")),
                    }
                }
                other => return Err(syntax(t.at, other.to_string(), "a variable name or `]`")),
            }
        }
        Ok(names)
    }

    /// `{` statements `}` at nesting level `depth`.
    fn block(&mut self, depth: usize) -> Result<Vec<LogicNode>, ParseError> {
        let open = self.expect(&Token::LBrace, "`{`")?;
        if depth > MAX_NESTING_DEPTH {
            return Err(ParseError::DepthExceeded {
                line: open.at.line,
                col: open.at.col,
                limit: MAX_NESTING_DEPTH,
            });
        }
        let mut nodes = Vec::new();
        loop {
            self.skip_newlines()?;
            let t = self.peek()?;
            match t.token {
                Token::RBrace => {
                    self.bump()?;
                    return Ok(nodes);
                }
                Token::Eof => return Err(syntax(t.at, t.token.to_string(), "`}`")),
                _ => {}
            }
            nodes.push(self.statement(depth)?);
            let t = self.peek()?;
            match t.token {
                Token::Newline | Token::RBrace => {}
                other => return Err(syntax(t.at, other.to_string(), "end of line after statement")),
            }
        }
    }

    /// Peeks past newlines for a continuation keyword such as `ELIF`.
    fn continues_with(&mut self, keywords: &[&str]) -> Result<Option<String>, ParseError> {
        let saved = self.pos;
        self.skip_newlines()?;
        if let Some((word, _)) = self.peek_keyword()? {
            if keywords.contains(&word.as_str()) {
                return Ok(Some(word));
            }
        }
        self.pos = saved;
        Ok(None)
    }

    fn statement(&mut self, depth: usize) -> Result<LogicNode, ParseError> {
        let t = self.peek()?;
        let Token::Ident(word) = &t.token else {
            return Err(syntax(t.at, t.token.to_string(), "a statement keyword"));
        };
        let at = t.at;
        let keyword = word.to_ascii_uppercase();
        match keyword.as_str() {
            "EXECUTE" => {
                self.bump()?;
                let mut call = self.call()?;
                if self.peek()?.token == Token::Arrow {
                    self.bump()?;
                    call.result_binding = Some(self.ident("a result variable after `->`")?);
                }
                Ok(LogicNode::Execute(call))
            }
            "IF" => {
                self.bump()?;
                let mut branches = vec![(self.condition()?, self.block(depth + 1)?)];
                let mut else_body = None;
                while let Some(word) = self.continues_with(&["ELIF", "ELSE"])? {
                    self.bump()?;
                    if word == "ELIF" {
                        branches.push((self.condition()?, self.block(depth + 1)?));
                    } else {
                        else_body = Some(self.block(depth + 1)?);
                        break;
                    }
                }
                Ok(LogicNode::IfChain { branches, else_body })
            }
            "FOR" => {
                self.bump()?;
                let var = self.ident("a loop variable")?;
                let kw = self.ident("`IN`")?;
                if !kw.eq_ignore_ascii_case("IN") {
                    return Err(syntax(at, format!("`{kw}`"), "`IN`"));
                }
                let collection = if self.peek()?.token == Token::LBracket {
                    match self.literal()? {
                        Value::List(items) => Collection::Literal(items),
                        _ => unreachable!("`[` always starts a list literal"),
                    }
                } else {
                    Collection::Var(self.path()?)
                };
                let body = self.block(depth + 1)?;
                Ok(LogicNode::ForEach { var, collection, body })
            }
            "WHILE" | "UNTIL" => {
                self.bump()?;
                let mode = if keyword == "WHILE" {
                    LoopMode::While
                } else {
                    LoopMode::Until
                };
                let condition = self.condition()?;
                let mut bound = None;
                if let Some((w, _)) = self.peek_keyword()? {
                    if w == "MAX" {
                        self.bump()?;
                        bound = Some(self.count("a loop bound")?);
                    }
                }
                let body = self.block(depth + 1)?;
                Ok(LogicNode::While {
                    mode,
                    condition,
                    bound,
                    body,
                })
            }
            "TRY" => {
                self.bump()?;
                let body = self.block(depth + 1)?;
                if self.continues_with(&["ON_FAILURE"])?.is_none() {
                    let t = self.peek()?;
                    return Err(syntax(t.at, t.token.to_string(), "`ON_FAILURE` after TRY block"));
                }
                self.bump()?;
                let fallback = self.block(depth + 1)?;
                Ok(LogicNode::TryOnFailure { body, fallback })
            }
            "PARALLEL" => {
                self.bump()?;
                let open = self.expect(&Token::LBrace, "`{` after PARALLEL")?;
                if depth + 1 > MAX_NESTING_DEPTH {
                    return Err(ParseError::DepthExceeded {
                        line: open.at.line,
                        col: open.at.col,
                        limit: MAX_NESTING_DEPTH,
                    });
                }
                let mut branches = Vec::new();
                loop {
                    self.skip_newlines()?;
                    let t = self.peek()?;
                    match &t.token {
                        Token::RBrace => {
                            self.bump()?;
                            break;
                        }
                        Token::Ident(w) if w.eq_ignore_ascii_case("BRANCH") => {
                            self.bump()?;
                            branches.push(self.block(depth + 1)?);
                            self.expect_line_end_or_brace()?;
                        }
                        other => return Err(syntax(t.at, other.to_string(), "`BRANCH` or `}`")),
                    }
                }
                Ok(LogicNode::Parallel { branches })
            }
            "DATA" | "DATA_FLOW" | "DATAFLOW" => {
                self.bump()?;
                if keyword == "DATA" {
                    self.expect(&Token::Minus, "`-FLOW`")?;
                    let w = self.ident("`FLOW`")?;
                    if !w.eq_ignore_ascii_case("FLOW") {
                        return Err(ParseError::UnknownPrimitive {
                            line: at.line,
                            col: at.col,
                            keyword: format!("DATA-{w}"),
                        });
                    }
                }
                let source = self.path()?;
                self.expect(&Token::Arrow, "`->`")?;
                let target = self.ident("a target variable")?;
                Ok(LogicNode::DataFlow { source, target })
            }
            "ABORT" => {
                self.bump()?;
                let parens = self.peek()?.token == Token::LParen;
                if parens {
                    self.bump()?;
                }
                let t = self.bump()?;
                let reason = match t.token {
                    Token::Str(s) => s,
                    other => return Err(syntax(t.at, other.to_string(), "a quoted abort reason")),
                };
                if parens {
                    self.expect(&Token::RParen, "`)`")?;
                }
                Ok(LogicNode::Abort { reason })
            }
            "ASSIGN" => {
                self.bump()?;
                let target = self.ident("a target variable")?;
                self.expect(&Token::Assign, "`=`")?;
                let t = self.peek()?;
                let source = match &t.token {
                    Token::Ident(w) if !w.eq_ignore_ascii_case("true") && !w.eq_ignore_ascii_case("false") => {
                        let mut call = self.call()?;
                        if call.result_binding.is_some() {
                            unreachable!("call() never sets a binding");
                        }
                        call.result_binding = None;
                        AssignSource::Call(call)
                    }
                    _ => AssignSource::Literal(self.literal()?),
                };
                Ok(LogicNode::Assign { target, source })
            }
            _ => Err(ParseError::UnknownPrimitive {
                line: at.line,
                col: at.col,
                keyword: word.clone(),
            }),
        }
    }

    fn expect_line_end_or_brace(&mut self) -> Result<(), ParseError> {
        let t = self.peek()?;
        match t.token {
            Token::Newline | Token::RBrace => Ok(()),
            other => Err(syntax(t.at, other.to_string(), "end of line")),
        }
    }

    fn call(&mut self) -> Result<ActionCallExpr, ParseError> {
        let tool = self.ident("a tool name")?;
        self.expect(&Token::LParen, "`(` after the tool name")?;
        let mut call = ActionCallExpr::new(tool);
        loop {
            self.skip_newlines()?;
            let t = self.bump()?;
            let key = match t.token {
                Token::RParen => break,
                Token::Ident(k) => k,
                other => return Err(syntax(t.at, other.to_string(), "an argument name or `)`")),
            };
            let sep = self.bump()?;
            if !matches!(sep.token, Token::Assign | Token::Colon) {
                return Err(syntax(
                    sep.at,
                    sep.token.to_string(),
                    "`=` or `:` after the argument name",
                ));
            }
            let value = self.arg_value()?;
            call.args.push((key, value));
            self.skip_newlines()?;
            let t = self.bump()?;
            match t.token {
                Token::Comma => {}
                Token::RParen => break,
                other => return Err(syntax(t.at, other.to_string(), "`,` or `)`")),
            }
        }
        Ok(call)
    }

    fn arg_value(&mut self) -> Result<ArgValue, ParseError> {
        let t = self.peek()?;
        match &t.token {
            Token::Ident(w) if !w.eq_ignore_ascii_case("true") && !w.eq_ignore_ascii_case("false") => {
                Ok(ArgValue::Var(self.path()?))
            }
            Token::Str(key) => {
                let key = key.clone();
                self.bump()?;
                // `'bus'=11` and `'bus': 11` denote the one-entry record {bus: 11}.
                if matches!(self.peek()?.token, Token::Assign | Token::Colon) {
                    self.bump()?;
                    let value = self.literal()?;
                    Ok(ArgValue::Literal(Value::record([(key, value)])))
                } else {
                    Ok(ArgValue::Literal(Value::String(key)))
                }
            }
            _ => Ok(ArgValue::Literal(self.literal()?)),
        }
    }

    fn literal(&mut self) -> Result<Value, ParseError> {
        self.literal_at(0)
    }

    fn literal_at(&mut self, depth: usize) -> Result<Value, ParseError> {
        let t = self.bump()?;
        if depth > MAX_NESTING_DEPTH {
            return Err(ParseError::DepthExceeded {
                line: t.at.line,
                col: t.at.col,
                limit: MAX_NESTING_DEPTH,
            });
        }
        match t.token {
            Token::Number(n) => Ok(Value::Number(n)),
            Token::Str(s) => Ok(Value::String(s)),
            Token::Ident(w) if w.eq_ignore_ascii_case("true") => Ok(Value::Bool(true)),
            Token::Ident(w) if w.eq_ignore_ascii_case("false") => Ok(Value::Bool(false)),
            Token::LBracket => {
                let mut items = Vec::new();
                loop {
                    self.skip_newlines()?;
                    if self.peek()?.token == Token::RBracket {
                        self.bump()?;
                        break;
                    }
                    items.push(self.literal_at(depth + 1)?);
                    self.skip_newlines()?;
                    let sep = self.bump()?;
                    match sep.token {
                        Token::Comma => {}
                        Token::RBracket => break,
                        other => return Err(syntax(sep.at, other.to_string(), "`,` or `]`")),
                    }
                }
                Ok(Value::List(items))
            }
            Token::LBrace => {
                let mut fields = BTreeMap::new();
                loop {
                    self.skip_newlines()?;
                    let k = self.bump()?;
                    let key = match k.token {
                        Token::RBrace => break,
                        Token::Str(s) | Token::Ident(s) => s,
                        other => return Err(syntax(k.at, other.to_string(), "a record key or `}`")),
                    };
                    let sep = self.bump()?;
                    if !matches!(sep.token, Token::Colon | Token::Assign) {
                        return Err(syntax(sep.at, sep.token.to_string(), "`:` after the record key"));
                    }
                    let value = self.literal_at(depth + 1)?;
                    if fields.insert(key.clone(), value).is_some() {
                        return Err(syntax(k.at, format!("duplicate key {key:?}"), "unique record keys"));
                    }
                    self.skip_newlines()?;
                    let sep = self.bump()?;
                    match sep.token {
                        Token::Comma => {}
                        Token::RBrace => break,
                        other => return Err(syntax(sep.at, other.to_string(), "`,` or `}`")),
                    }
                }
                Ok(Value::Record(fields))
            }
            other => Err(syntax(t.at, other.to_string(), "a literal")),
        }
    }

    fn path(&mut self) -> Result<VarPath, ParseError> {
        let root = self.ident("a variable name")?;
        let mut path = VarPath::var(root);
        while self.peek()?.token == Token::Dot {
            self.bump()?;
            path.fields.push(self.ident("a field name after `.`")?);
        }
        Ok(path)
    }

    // Conditions: OR < AND < comparison < NOT < primary.

    pub(super) fn condition(&mut self) -> Result<ConditionExpr, ParseError> {
        let start = self.lexer.skip_inline(self.pos);
        let expr = self.or_expr(1)?;
        if expr.depth() > MAX_CONDITION_DEPTH {
            return Err(ParseError::DepthExceeded {
                line: start.line,
                col: start.col,
                limit: MAX_CONDITION_DEPTH,
            });
        }
        Ok(expr)
    }

    fn is_word(&self, word: &str) -> Result<bool, ParseError> {
        Ok(matches!(self.peek()?.token, Token::Ident(ref w) if w.eq_ignore_ascii_case(word)))
    }

    fn or_expr(&mut self, depth: usize) -> Result<ConditionExpr, ParseError> {
        let mut left = self.and_expr(depth)?;
        while self.is_word("OR")? {
            self.bump()?;
            let right = self.and_expr(depth)?;
            left = ConditionExpr::or(left, right);
        }
        Ok(left)
    }

    fn and_expr(&mut self, depth: usize) -> Result<ConditionExpr, ParseError> {
        let mut left = self.cmp_expr(depth)?;
        while self.is_word("AND")? {
            self.bump()?;
            let right = self.cmp_expr(depth)?;
            left = ConditionExpr::and(left, right);
        }
        Ok(left)
    }

    fn cmp_expr(&mut self, depth: usize) -> Result<ConditionExpr, ParseError> {
        let left = self.unary(depth)?;
        if let Token::Cmp(op) = self.peek()?.token {
            self.bump()?;
            let right = self.unary(depth)?;
            if let Token::Cmp(_) = self.peek()?.token {
                let t = self.peek()?;
                return Err(syntax(t.at, t.token.to_string(), "AND/OR (comparisons do not chain)"));
            }
            return Ok(ConditionExpr::compare(left, op, right));
        }
        Ok(left)
    }

    fn unary(&mut self, depth: usize) -> Result<ConditionExpr, ParseError> {
        let t = self.peek()?;
        if depth > MAX_CONDITION_DEPTH {
            return Err(ParseError::DepthExceeded {
                line: t.at.line,
                col: t.at.col,
                limit: MAX_CONDITION_DEPTH,
            });
        }
        if self.is_word("NOT")? {
            self.bump()?;
            return Ok(ConditionExpr::not(self.unary(depth + 1)?));
        }
        self.primary(depth)
    }

    fn primary(&mut self, depth: usize) -> Result<ConditionExpr, ParseError> {
        let t = self.peek()?;
        match &t.token {
            Token::LParen => {
                self.bump()?;
                let inner = self.or_expr(depth + 1)?;
                self.expect(&Token::RParen, "`)`")?;
                Ok(inner)
            }
            Token::Number(n) => {
                let n = *n;
                self.bump()?;
                Ok(ConditionExpr::Number(n))
            }
            Token::Str(s) => {
                let s = s.clone();
                self.bump()?;
                Ok(ConditionExpr::Str(s))
            }
            Token::Ident(w) => {
                let upper = w.to_ascii_uppercase();
                match upper.as_str() {
                    "TRUE" | "FALSE" => {
                        self.bump()?;
                        Ok(ConditionExpr::Bool(upper == "TRUE"))
                    }
                    "EXISTS" | "EMPTY" => {
                        self.bump()?;
                        self.expect(&Token::LParen, "`(`")?;
                        let path = self.path()?;
                        self.expect(&Token::RParen, "`)`")?;
                        Ok(if upper == "EXISTS" {
                            ConditionExpr::Exists(path)
                        } else {
                            ConditionExpr::Empty(path)
                        })
                    }
                    "AND" | "OR" | "NOT" => Err(syntax(t.at, t.token.to_string(), "an operand")),
                    _ => Ok(ConditionExpr::Var(self.path()?)),
                }
            }
            other => Err(syntax(t.at, other.to_string(), "an operand")),
        }
    }

    pub(super) fn expect_eof(&mut self) -> Result<(), ParseError> {
        self.skip_newlines()?;
        let t = self.peek()?;
        match t.token {
            Token::Eof => Ok(()),
            other => Err(syntax(t.at, other.to_string(), "end of input")),
        }
    }
}
