//! Scalar expressions of time.
//!
//! Grammar (whitespace ignored):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | atom
//! atom   := number | 't' | func '(' expr ')' | '(' expr ')'
//! func   := 'sin' | 'cos' | 'exp'
//! ```
//!
//! Only the variable `t` exists and there is no power operator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Func::Sin => x.sin(),
            Func::Cos => x.cos(),
            Func::Exp => x.exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
        }
    }
}

/// Expression tree over `t`.
#[derive(Debug, Clone, PartialEq)]
pub enum TimeExpr {
    Const(f64),
    Time,
    Neg(Box<TimeExpr>),
    Binary(BinOp, Box<TimeExpr>, Box<TimeExpr>),
    Call(Func, Box<TimeExpr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown identifier `{name}` at byte {offset}")]
    UnknownIdentifier { offset: usize, name: String },
    #[error("unbalanced parentheses at byte {offset}")]
    Unbalanced { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero at t = {t}")]
    DivisionByZero { t: f64 },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'+' => out.push((start, Tok::Plus)),
            b'-' => out.push((start, Tok::Minus)),
            b'*' => out.push((start, Tok::Star)),
            b'/' => out.push((start, Tok::Slash)),
            b'(' => out.push((start, Tok::LParen)),
            b')' => out.push((start, Tok::RParen)),
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                // scientific suffix: e[+-]digits, only if digits follow
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let lit = &text[start..i];
                let v = lit.parse::<f64>().map_err(|_| ParseError::Syntax {
                    offset: start,
                    message: format!("malformed number `{lit}`"),
                })?;
                out.push((start, Tok::Num(v)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((start, Tok::Ident(text[start..i].to_string())));
                continue;
            }
            _ => {
                let ch = text[start..].chars().next().unwrap_or('?');
                return Err(ParseError::Syntax {
                    offset: start,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    open: Vec<usize>,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<TimeExpr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = TimeExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<TimeExpr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = TimeExpr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<TimeExpr, ParseError> {
        if let Some(Tok::Minus) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(TimeExpr::Neg(Box::new(inner)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<TimeExpr, ParseError> {
        let offset = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(TimeExpr::Const(v)),
            Some(Tok::Ident(name)) => {
                let func = match name.as_str() {
                    "t" => return Ok(TimeExpr::Time),
                    "sin" => Func::Sin,
                    "cos" => Func::Cos,
                    "exp" => Func::Exp,
                    _ => return Err(ParseError::UnknownIdentifier { offset, name }),
                };
                let lp = self.offset();
                match self.bump() {
                    Some(Tok::LParen) => {}
                    _ => {
                        return Err(ParseError::Syntax {
                            offset: lp,
                            message: format!("expected `(` after `{}`", func.name()),
                        })
                    }
                }
                let arg = self.parenthesized(lp)?;
                Ok(TimeExpr::Call(func, Box::new(arg)))
            }
            Some(Tok::LParen) => self.parenthesized(offset),
            Some(Tok::RParen) => Err(ParseError::Unbalanced { offset }),
            Some(_) => Err(ParseError::Syntax {
                offset,
                message: "expected a number, `t`, a function or `(`".into(),
            }),
            None => Err(ParseError::Syntax {
                offset,
                message: "unexpected end of input".into(),
            }),
        }
    }

    // Called after consuming `(` at `open_at`.
    fn parenthesized(&mut self, open_at: usize) -> Result<TimeExpr, ParseError> {
        self.open.push(open_at);
        let inner = self.expr()?;
        match self.peek() {
            Some(Tok::RParen) => {
                self.pos += 1;
                self.open.pop();
                Ok(inner)
            }
            None => Err(ParseError::Unbalanced { offset: open_at }),
            Some(_) => Err(ParseError::Syntax {
                offset: self.offset(),
                message: "expected `)`".into(),
            }),
        }
    }
}

impl TimeExpr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        if text.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        let toks = tokenize(text)?;
        let mut p = Parser {
            toks,
            pos: 0,
            end: text.len(),
            open: Vec::new(),
        };
        let e = p.expr()?;
        if p.pos < p.toks.len() {
            let offset = p.offset();
            return Err(match p.peek() {
                Some(Tok::RParen) => ParseError::Unbalanced { offset },
                _ => ParseError::Syntax {
                    offset,
                    message: "unexpected trailing input".into(),
                },
            });
        }
        debug_assert!(p.open.is_empty());
        Ok(e)
    }

    pub fn constant(v: f64) -> Self {
        TimeExpr::Const(v)
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        Ok(match self {
            TimeExpr::Const(v) => *v,
            TimeExpr::Time => t,
            TimeExpr::Neg(e) => -e.eval(t)?,
            TimeExpr::Call(f, e) => f.apply(e.eval(t)?),
            TimeExpr::Binary(op, a, b) => {
                let x = a.eval(t)?;
                let y = b.eval(t)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero { t });
                        }
                        x / y
                    }
                }
            }
        })
    }

    pub fn depends_on_time(&self) -> bool {
        match self {
            TimeExpr::Const(_) => false,
            TimeExpr::Time => true,
            TimeExpr::Neg(e) | TimeExpr::Call(_, e) => e.depends_on_time(),
            TimeExpr::Binary(_, a, b) => a.depends_on_time() || b.depends_on_time(),
        }
    }

    /// Collapses every `t`-free subtree into a literal. A constant division by
    /// zero is left unfolded so that it still errors at evaluation time.
    pub fn fold(&self) -> TimeExpr {
        match self {
            TimeExpr::Const(_) | TimeExpr::Time => self.clone(),
            TimeExpr::Neg(e) => match e.fold() {
                TimeExpr::Const(v) => TimeExpr::Const(-v),
                f => TimeExpr::Neg(Box::new(f)),
            },
            TimeExpr::Call(func, e) => match e.fold() {
                TimeExpr::Const(v) => TimeExpr::Const(func.apply(v)),
                f => TimeExpr::Call(*func, Box::new(f)),
            },
            TimeExpr::Binary(op, a, b) => {
                let (fa, fb) = (a.fold(), b.fold());
                let both_const = matches!((&fa, &fb), (TimeExpr::Const(_), TimeExpr::Const(_)));
                let folded = TimeExpr::Binary(*op, Box::new(fa), Box::new(fb));
                if both_const {
                    if let Ok(v) = folded.eval(0.0) {
                        return TimeExpr::Const(v);
                    }
                }
                folded
            }
        }
    }

    /// True iff the constant-folded tree is the literal zero.
    pub fn is_structurally_zero(&self) -> bool {
        matches!(self.fold(), TimeExpr::Const(v) if v == 0.0)
    }
}

// Fully parenthesised so that printing and re-parsing preserves evaluation.
impl fmt::Display for TimeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeExpr::Const(v) => {
                if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) {
                    write!(f, "(-{:?})", -v)
                } else {
                    write!(f, "{v:?}")
                }
            }
            TimeExpr::Time => write!(f, "t"),
            TimeExpr::Neg(e) => write!(f, "(-{e})"),
            TimeExpr::Call(func, e) => write!(f, "{}({e})", func.name()),
            TimeExpr::Binary(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
        }
    }
}

impl FromStr for TimeExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TimeExpr::parse(s)
    }
}

/// An expression that remembers the text it was parsed from, so config files
/// round-trip verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceExpr {
    source: String,
    expr: TimeExpr,
}

impl SourceExpr {
    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(SourceExpr {
            source: text.to_string(),
            expr: TimeExpr::parse(text)?,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn expr(&self) -> &TimeExpr {
        &self.expr
    }

    pub fn eval(&self, t: f64) -> Result<f64, EvalError> {
        self.expr.eval(t)
    }

    pub fn is_structurally_zero(&self) -> bool {
        self.expr.is_structurally_zero()
    }
}

impl FromStr for SourceExpr {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SourceExpr::parse(s)
    }
}

impl fmt::Display for SourceExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl Serialize for SourceExpr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl<'de> Deserialize<'de> for SourceExpr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        SourceExpr::parse(&text).map_err(serde::de::Error::custom)
    }
}
