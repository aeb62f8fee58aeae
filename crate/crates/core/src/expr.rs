//! Arithmetic expression language for reaction rates and custom propensities.
//!
//! Grammar (precedence low to high, binary operators left-associative):
//!
//! ```text
//! expr    := term  (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | primary
//! primary := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Identifiers resolve against a network's parameters and species; `t` is
//! reserved for the current simulation time. Built-in functions are
//! `min(a,b)`, `max(a,b)`, `exp(x)` and `step(x)` (1 if x > 0, else 0).
//!
//! Byte offsets in parse errors are 1-based.

use thiserror::Error;

/// Expression AST. Identifiers come out of the parser as [`Expr::Var`] and
/// are rewritten to [`Expr::Param`] / [`Expr::Species`] when the expression
/// is bound to a network.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// Current simulation time (the reserved identifier `t`).
    Time,
    /// Unresolved identifier; present only between parsing and binding.
    Var(String),
    /// Parameter value by index into the network's parameter list.
    Param(usize),
    /// Current count of the species at this index, as a real.
    Species(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Exp(Box<Expr>),
    Step(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExprParseError {
    #[error("unbalanced parenthesis at offset {offset}")]
    Unbalanced { offset: usize },
    #[error("unknown function '{name}' at offset {offset}")]
    UnknownFunction { name: String, offset: usize },
    #[error("function '{name}' expects {expected} argument(s), got {got}, at offset {offset}")]
    ArgCount {
        name: String,
        expected: usize,
        got: usize,
        offset: usize,
    },
    #[error("expected {expected}, found {found} at offset {offset}")]
    Expected {
        expected: &'static str,
        found: String,
        offset: usize,
    },
    #[error("malformed number at offset {offset}")]
    BadNumber { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("unresolved identifier '{0}'")]
    Unresolved(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown identifier '{0}'")]
pub struct BindError(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Num(f64),
    Ident(&'a str),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    Comma,
}

struct Lexer<'a> {
    src: &'a str,
    /// Byte position of the next unread character.
    pos: usize,
    peeked: Option<(Tok<'a>, usize)>,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src,
            pos: 0,
            peeked: None,
        }
    }

    /// 1-based offset of the next token (or end of input).
    fn offset(&mut self) -> usize {
        match self.peek() {
            Ok(Some((_, at))) => at + 1,
            _ => self.skip_ws() + 1,
        }
    }

    fn skip_ws(&mut self) -> usize {
        let bytes = self.src.as_bytes();
        let mut p = self.pos;
        while p < bytes.len() && bytes[p].is_ascii_whitespace() {
            p += 1;
        }
        p
    }

    fn peek(&mut self) -> Result<Option<(Tok<'a>, usize)>, ExprParseError> {
        if self.peeked.is_none() {
            self.peeked = self.lex()?;
        }
        Ok(self.peeked)
    }

    fn next(&mut self) -> Result<Option<(Tok<'a>, usize)>, ExprParseError> {
        match self.peeked.take() {
            Some(t) => Ok(Some(t)),
            None => self.lex(),
        }
    }

    fn lex(&mut self) -> Result<Option<(Tok<'a>, usize)>, ExprParseError> {
        let bytes = self.src.as_bytes();
        let start = self.skip_ws();
        self.pos = start;
        if start >= bytes.len() {
            return Ok(None);
        }
        let c = bytes[start];
        let tok = match c {
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            b',' => Some(Tok::Comma),
            _ => None,
        };
        if let Some(tok) = tok {
            self.pos = start + 1;
            return Ok(Some((tok, start)));
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut p = start;
            while p < bytes.len() && bytes[p].is_ascii_digit() {
                p += 1;
            }
            if p < bytes.len() && bytes[p] == b'.' {
                p += 1;
                while p < bytes.len() && bytes[p].is_ascii_digit() {
                    p += 1;
                }
            }
            if p < bytes.len() && (bytes[p] == b'e' || bytes[p] == b'E') {
                let mut q = p + 1;
                if q < bytes.len() && (bytes[q] == b'+' || bytes[q] == b'-') {
                    q += 1;
                }
                if q >= bytes.len() || !bytes[q].is_ascii_digit() {
                    return Err(ExprParseError::BadNumber { offset: start + 1 });
                }
                p = q;
                while p < bytes.len() && bytes[p].is_ascii_digit() {
                    p += 1;
                }
            }
            let text = &self.src[start..p];
            let value: f64 = text
                .parse()
                .map_err(|_| ExprParseError::BadNumber { offset: start + 1 })?;
            self.pos = p;
            return Ok(Some((Tok::Num(value), start)));
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            let mut p = start + 1;
            while p < bytes.len() && (bytes[p].is_ascii_alphanumeric() || bytes[p] == b'_') {
                p += 1;
            }
            self.pos = p;
            return Ok(Some((Tok::Ident(&self.src[start..p]), start)));
        }
        Err(ExprParseError::Expected {
            expected: "expression",
            found: format!("'{}'", &self.src[start..start + 1]),
            offset: start + 1,
        })
    }
}

fn describe(tok: Tok<'_>) -> String {
    match tok {
        Tok::Num(v) => format!("number {v}"),
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Plus => "'+'".into(),
        Tok::Minus => "'-'".into(),
        Tok::Star => "'*'".into(),
        Tok::Slash => "'/'".into(),
        Tok::LParen => "'('".into(),
        Tok::RParen => "')'".into(),
        Tok::Comma => "','".into(),
    }
}

/// Parse an expression. Identifiers other than the reserved `t` are left
/// unresolved; bind them with [`Expr::resolve`] before evaluating.
pub fn parse_expr(source: &str) -> Result<Expr, ExprParseError> {
    let mut lx = Lexer::new(source);
    let e = parse_sum(&mut lx)?;
    match lx.next()? {
        None => Ok(e),
        Some((Tok::RParen, at)) => Err(ExprParseError::Unbalanced { offset: at + 1 }),
        Some((tok, at)) => Err(ExprParseError::Expected {
            expected: "end of input",
            found: describe(tok),
            offset: at + 1,
        }),
    }
}

fn parse_sum<'a>(lx: &mut Lexer<'a>) -> Result<Expr, ExprParseError> {
    let mut lhs = parse_term(lx)?;
    while let Some((tok, _)) = lx.peek()? {
        match tok {
            Tok::Plus => {
                lx.next()?;
                lhs = Expr::Add(Box::new(lhs), Box::new(parse_term(lx)?));
            }
            Tok::Minus => {
                lx.next()?;
                lhs = Expr::Sub(Box::new(lhs), Box::new(parse_term(lx)?));
            }
            _ => break,
        }
    }
    Ok(lhs)
}

fn parse_term<'a>(lx: &mut Lexer<'a>) -> Result<Expr, ExprParseError> {
    let mut lhs = parse_unary(lx)?;
    while let Some((tok, _)) = lx.peek()? {
        match tok {
            Tok::Star => {
                lx.next()?;
                lhs = Expr::Mul(Box::new(lhs), Box::new(parse_unary(lx)?));
            }
            Tok::Slash => {
                lx.next()?;
                lhs = Expr::Div(Box::new(lhs), Box::new(parse_unary(lx)?));
            }
            _ => break,
        }
    }
    Ok(lhs)
}

fn parse_unary<'a>(lx: &mut Lexer<'a>) -> Result<Expr, ExprParseError> {
    if let Some((Tok::Minus, _)) = lx.peek()? {
        lx.next()?;
        return Ok(Expr::Neg(Box::new(parse_unary(lx)?)));
    }
    parse_primary(lx)
}

fn parse_primary<'a>(lx: &mut Lexer<'a>) -> Result<Expr, ExprParseError> {
    let at_end = lx.offset();
    match lx.next()? {
        None => Err(ExprParseError::Expected {
            expected: "expression",
            found: "end of input".into(),
            offset: at_end,
        }),
        Some((Tok::Num(v), _)) => Ok(Expr::Const(v)),
        Some((Tok::Ident(name), at)) => {
            if let Some((Tok::LParen, _)) = lx.peek()? {
                lx.next()?;
                let args = parse_args(lx)?;
                return apply_function(name, args, at + 1);
            }
            if name == "t" {
                Ok(Expr::Time)
            } else {
                Ok(Expr::Var(name.to_owned()))
            }
        }
        Some((Tok::LParen, _)) => {
            let inner = parse_sum(lx)?;
            match lx.next()? {
                Some((Tok::RParen, _)) => Ok(inner),
                Some((tok, p)) => Err(ExprParseError::Expected {
                    expected: "')'",
                    found: describe(tok),
                    offset: p + 1,
                }),
                None => Err(ExprParseError::Unbalanced {
                    offset: lx.src.len() + 1,
                }),
            }
        }
        Some((tok, at)) => Err(ExprParseError::Expected {
            expected: "expression",
            found: describe(tok),
            offset: at + 1,
        }),
    }
}

fn parse_args<'a>(lx: &mut Lexer<'a>) -> Result<Vec<Expr>, ExprParseError> {
    let mut args = vec![parse_sum(lx)?];
    loop {
        match lx.next()? {
            Some((Tok::Comma, _)) => args.push(parse_sum(lx)?),
            Some((Tok::RParen, _)) => return Ok(args),
            Some((tok, at)) => {
                return Err(ExprParseError::Expected {
                    expected: "',' or ')'",
                    found: describe(tok),
                    offset: at + 1,
                })
            }
            None => {
                return Err(ExprParseError::Unbalanced {
                    offset: lx.src.len() + 1,
                })
            }
        }
    }
}

fn apply_function(name: &str, mut args: Vec<Expr>, offset: usize) -> Result<Expr, ExprParseError> {
    let expect = |n: usize, args: &Vec<Expr>| -> Result<(), ExprParseError> {
        if args.len() == n {
            Ok(())
        } else {
            Err(ExprParseError::ArgCount {
                name: name.to_owned(),
                expected: n,
                got: args.len(),
                offset,
            })
        }
    };
    match name {
        "min" => {
            expect(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(Expr::Min(Box::new(a), Box::new(b)))
        }
        "max" => {
            expect(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(Expr::Max(Box::new(a), Box::new(b)))
        }
        "exp" => {
            expect(1, &args)?;
            Ok(Expr::Exp(Box::new(args.pop().unwrap())))
        }
        "step" => {
            expect(1, &args)?;
            Ok(Expr::Step(Box::new(args.pop().unwrap())))
        }
        _ => Err(ExprParseError::UnknownFunction {
            name: name.to_owned(),
            offset,
        }),
    }
}

impl Expr {
    /// Rewrite unresolved identifiers to parameter/species references using
    /// the given lookup. The lookup returns `Some(resolved)` or `None` for an
    /// unknown name.
    pub fn resolve(
        self,
        lookup: &mut impl FnMut(&str) -> Option<Expr>,
    ) -> Result<Expr, BindError> {
        Ok(match self {
            Expr::Var(name) => lookup(&name).ok_or(BindError(name))?,
            Expr::Neg(e) => Expr::Neg(Box::new(e.resolve(lookup)?)),
            Expr::Add(a, b) => Expr::Add(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Sub(a, b) => Expr::Sub(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Mul(a, b) => Expr::Mul(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Div(a, b) => Expr::Div(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Min(a, b) => Expr::Min(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Max(a, b) => Expr::Max(Box::new(a.resolve(lookup)?), Box::new(b.resolve(lookup)?)),
            Expr::Exp(e) => Expr::Exp(Box::new(e.resolve(lookup)?)),
            Expr::Step(e) => Expr::Step(Box::new(e.resolve(lookup)?)),
            leaf => leaf,
        })
    }

    /// Evaluate against the current state. `counts` is the integer state
    /// vector, `params` the parameter values, `time` the simulation time.
    ///
    /// Evaluation is pure: the same inputs produce the same value to the
    /// last bit. `step` returns exactly 0.0 or 1.0.
    pub fn eval(&self, counts: &[i64], params: &[f64], time: f64) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(v) => *v,
            Expr::Time => time,
            Expr::Var(name) => return Err(EvalError::Unresolved(name.clone())),
            Expr::Param(i) => params[*i],
            Expr::Species(i) => counts[*i] as f64,
            Expr::Neg(e) => -e.eval(counts, params, time)?,
            Expr::Add(a, b) => a.eval(counts, params, time)? + b.eval(counts, params, time)?,
            Expr::Sub(a, b) => a.eval(counts, params, time)? - b.eval(counts, params, time)?,
            Expr::Mul(a, b) => a.eval(counts, params, time)? * b.eval(counts, params, time)?,
            Expr::Div(a, b) => {
                let d = b.eval(counts, params, time)?;
                if d == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                a.eval(counts, params, time)? / d
            }
            Expr::Min(a, b) => f64::min(a.eval(counts, params, time)?, b.eval(counts, params, time)?),
            Expr::Max(a, b) => f64::max(a.eval(counts, params, time)?, b.eval(counts, params, time)?),
            Expr::Exp(e) => e.eval(counts, params, time)?.exp(),
            Expr::Step(e) => {
                if e.eval(counts, params, time)? > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// True if the value can change during a run, i.e. the expression reads
    /// the state vector or the time.
    pub fn depends_on_state_or_time(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Param(_) | Expr::Var(_) => false,
            Expr::Time | Expr::Species(_) => true,
            Expr::Neg(e) | Expr::Exp(e) | Expr::Step(e) => e.depends_on_state_or_time(),
            Expr::Add(a, b)
            | Expr::Sub(a, b)
            | Expr::Mul(a, b)
            | Expr::Div(a, b)
            | Expr::Min(a, b)
            | Expr::Max(a, b) => a.depends_on_state_or_time() || b.depends_on_state_or_time(),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(_) => 3,
            _ => 4,
        }
    }

    fn fmt_child(
        &self,
        f: &mut std::fmt::Formatter<'_>,
        parent: u8,
        tight: bool,
    ) -> std::fmt::Result {
        // `tight` forces parentheses at equal precedence (right operand of
        // `-` and `/`), preserving left associativity on re-parse.
        let me = self.precedence();
        if me < parent || (tight && me == parent) {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

/// Renders with minimal parentheses; `parse_expr(e.to_string())` rebuilds an
/// identical tree for resolved or unresolved expressions alike (parameter and
/// species references render as their display name only when formatted via
/// [`crate::modelfile::serialize_model`], which re-binds names; on a bare
/// expression they render positionally).
impl std::fmt::Display for Expr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expr::Const(v) => write!(f, "{v}"),
            Expr::Time => write!(f, "t"),
            Expr::Var(name) => write!(f, "{name}"),
            Expr::Param(i) => write!(f, "$p{i}"),
            Expr::Species(i) => write!(f, "$s{i}"),
            Expr::Neg(e) => {
                write!(f, "-")?;
                e.fmt_child(f, 3, true)
            }
            Expr::Add(a, b) => {
                a.fmt_child(f, 1, false)?;
                write!(f, " + ")?;
                b.fmt_child(f, 1, false)
            }
            Expr::Sub(a, b) => {
                a.fmt_child(f, 1, false)?;
                write!(f, " - ")?;
                b.fmt_child(f, 1, true)
            }
            Expr::Mul(a, b) => {
                a.fmt_child(f, 2, false)?;
                write!(f, "*")?;
                b.fmt_child(f, 2, false)
            }
            Expr::Div(a, b) => {
                a.fmt_child(f, 2, false)?;
                write!(f, "/")?;
                b.fmt_child(f, 2, true)
            }
            Expr::Min(a, b) => write!(f, "min({a}, {b})"),
            Expr::Max(a, b) => write!(f, "max({a}, {b})"),
            Expr::Exp(e) => write!(f, "exp({e})"),
            Expr::Step(e) => write!(f, "step({e})"),
        }
    }
}
