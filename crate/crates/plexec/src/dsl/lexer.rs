//! On-demand tokenizer. The parser pulls tokens from an arbitrary byte
//! offset, which lets it switch between token mode (logic, conditions,
//! lists) and raw-line mode (free-text clauses such as `OBJECTIVE:`).

use std::fmt;

use crate::condition::CmpOp;

use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Ident(String),
    Number(f64),
    Str(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Assign,
    Arrow,
    Dot,
    Minus,
    Cmp(CmpOp),
    Newline,
    Eof,
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Ident(s) => write!(f, "`{s}`"),
            Token::Number(n) => write!(f, "number {n}"),
            Token::Str(s) => write!(f, "string {s:?}"),
            Token::LBrace => f.write_str("`{`"),
            Token::RBrace => f.write_str("`}`"),
            Token::LParen => f.write_str("`(`"),
            Token::RParen => f.write_str("`)`"),
            Token::LBracket => f.write_str("`[`"),
            Token::RBracket => f.write_str("`]`"),
            Token::Comma => f.write_str("`,`"),
            Token::Colon => f.write_str("`:`"),
            Token::Assign => f.write_str("`=`"),
            Token::Arrow => f.write_str("`->`"),
            Token::Dot => f.write_str("`.`"),
            Token::Minus => f.write_str("`-`"),
            Token::Cmp(op) => write!(f, "`{}`", op.symbol()),
            Token::Newline => f.write_str("end of line"),
            Token::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pos {
    pub offset: usize,
    pub line: usize,
    pub col: usize,
}

impl Pos {
    pub const START: Pos = Pos {
        offset: 0,
        line: 1,
        col: 1,
    };
}

#[derive(Debug, Clone)]
pub struct Lexed {
    pub token: Token,
    /// Where the token starts.
    pub at: Pos,
    /// Position just past the token.
    pub end: Pos,
}

pub struct Lexer<'a> {
    src: &'a str,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Self { src }
    }

    fn advance(&self, mut pos: Pos, n_bytes: usize) -> Pos {
        for c in self.src[pos.offset..pos.offset + n_bytes].chars() {
            if c == '\n' {
                pos.line += 1;
                pos.col = 1;
            } else {
                pos.col += 1;
            }
        }
        pos.offset += n_bytes;
        pos
    }

    /// Skips spaces, tabs, carriage returns and `#` comments, stopping at a
    /// newline or the next significant character.
    pub fn skip_inline(&self, mut pos: Pos) -> Pos {
        let bytes = self.src.as_bytes();
        while pos.offset < bytes.len() {
            match bytes[pos.offset] {
                b' ' | b'\t' | b'\r' => pos = self.advance(pos, 1),
                b'#' => {
                    let rest = &self.src[pos.offset..];
                    let len = rest.find('\n').unwrap_or(rest.len());
                    pos = self.advance(pos, len);
                }
                _ => break,
            }
        }
        pos
    }

    /// Raw text from `pos` to the end of the line, trimmed. Returns the text
    /// and the position of the terminating newline (or end of input).
    pub fn rest_of_line(&self, pos: Pos) -> (String, Pos) {
        let rest = &self.src[pos.offset..];
        let len = rest.find('\n').unwrap_or(rest.len());
        let text = rest[..len].trim().to_string();
        (text, self.advance(pos, len))
    }

    pub fn next(&self, pos: Pos) -> Result<Lexed, ParseError> {
        let at = self.skip_inline(pos);
        let rest = &self.src[at.offset..];
        let Some(c) = rest.chars().next() else {
            return Ok(Lexed {
                token: Token::Eof,
                at,
                end: at,
            });
        };
        let two = rest.get(..2).unwrap_or("");
        let simple = |token: Token, len: usize| {
            Ok(Lexed {
                token,
                at,
                end: self.advance(at, len),
            })
        };
        match c {
            '\n' => simple(Token::Newline, 1),
            '{' => simple(Token::LBrace, 1),
            '}' => simple(Token::RBrace, 1),
            '(' => simple(Token::LParen, 1),
            ')' => simple(Token::RParen, 1),
            '[' => simple(Token::LBracket, 1),
            ']' => simple(Token::RBracket, 1),
            ',' => simple(Token::Comma, 1),
            ':' => simple(Token::Colon, 1),
            '.' => simple(Token::Dot, 1),
            '<' if two == "<=" => simple(Token::Cmp(CmpOp::Le), 2),
            '<' => simple(Token::Cmp(CmpOp::Lt), 1),
            '>' if two == ">=" => simple(Token::Cmp(CmpOp::Ge), 2),
            '>' => simple(Token::Cmp(CmpOp::Gt), 1),
            '=' if two == "==" => simple(Token::Cmp(CmpOp::Eq), 2),
            '=' => simple(Token::Assign, 1),
            '!' if two == "!=" => simple(Token::Cmp(CmpOp::Ne), 2),
            '-' if two == "->" => simple(Token::Arrow, 2),
            '-' if rest[1..].starts_with(|c: char| c.is_ascii_digit()) => self.number(at),
            '-' => simple(Token::Minus, 1),
            '\'' | '"' => self.string(at, c),
            c if c.is_ascii_digit() => self.number(at),
            c if c.is_ascii_alphabetic() || c == '_' => {
                let len = rest
                    .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                    .unwrap_or(rest.len());
                simple(Token::Ident(rest[..len].to_string()), len)
            }
            other => Err(ParseError::Syntax {
                line: at.line,
                col: at.col,
                found: format!("character {other:?}"),
                expected: "a token".into(),
            }),
        }
    }

    fn number(&self, at: Pos) -> Result<Lexed, ParseError> {
        let bytes = self.src.as_bytes();
        let start = at.offset;
        let mut i = start;
        if bytes.get(i) == Some(&b'-') {
            i += 1;
        }
        let digits = |mut i: usize| {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            i
        };
        i = digits(i);
        if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
            i = digits(i + 1);
        }
        if matches!(bytes.get(i), Some(b'e' | b'E')) {
            let mut j = i + 1;
            if matches!(bytes.get(j), Some(b'+' | b'-')) {
                j += 1;
            }
            if bytes.get(j).is_some_and(u8::is_ascii_digit) {
                i = digits(j);
            }
        }
        let text = &self.src[start..i];
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            line: at.line,
            col: at.col,
            found: format!("`{text}`"),
            expected: "a number".into(),
        })?;
        if !value.is_finite() {
            return Err(ParseError::Syntax {
                line: at.line,
                col: at.col,
                found: format!("`{text}`"),
                expected: "a finite number".into(),
            });
        }
        Ok(Lexed {
            token: Token::Number(value),
            at,
            end: self.advance(at, i - start),
        })
    }

    fn string(&self, at: Pos, quote: char) -> Result<Lexed, ParseError> {
        let body = &self.src[at.offset + 1..];
        let mut out = String::new();
        let mut chars = body.char_indices();
        let unterminated = || ParseError::Syntax {
            line: at.line,
            col: at.col,
            found: "unterminated string".into(),
            expected: format!("closing {quote}"),
        };
        while let Some((i, c)) = chars.next() {
            match c {
                '\n' => return Err(unterminated()),
                '\\' => {
                    let (_, esc) = chars.next().ok_or_else(unterminated)?;
                    out.push(match esc {
                        'n' => '\n',
                        'r' => '\r',
                        't' => '\t',
                        '\\' | '\'' | '"' => esc,
                        other => {
                            return Err(ParseError::Syntax {
                                line: at.line,
                                col: at.col,
                                found: format!("escape \\{other}"),
                                expected: "one of \\n \\r \\t \\\\ \\' \\\"".into(),
                            })
                        }
                    });
                }
                c if c == quote => {
                    return Ok(Lexed {
                        token: Token::Str(out),
                        at,
                        end: self.advance(at, i + 2),
                    });
                }
                c => out.push(c),
            }
        }
        Err(unterminated())
    }
}
