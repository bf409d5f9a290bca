//! Scalar coefficient expressions over the space variable `x` and the state
//! variables of a compartment model.
//!
//! Expressions are parsed from conventional infix text, evaluated pointwise and
//! differentiated symbolically. Variables are resolved against a [`Vocabulary`]
//! at parse time, so a parsed tree only ever refers to `x` or to a state index.

use std::fmt;
use std::ops;

use indexmap::IndexMap;
use thiserror::Error;

/// Unary functions understood by the parser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Abs => "abs",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => return None,
        })
    }
}

/// Expression tree. `State(i)` refers to the zero-based compartment index `i`.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    X,
    State(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    /// Power with a constant exponent.
    Pow(Box<Expr>, f64),
    Func(Func, Box<Expr>),
}

/// Reason an evaluation was refused.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero")]
    DivisionByZero,
    #[error("log of non-positive argument {0}")]
    LogDomain(f64),
    #[error("sqrt of negative argument {0}")]
    SqrtDomain(f64),
    #[error("0 raised to negative power {0}")]
    PowDomain(f64),
    #[error("negative base {base} raised to non-integer power {exponent}")]
    PowNegativeBase { base: f64, exponent: f64 },
    #[error("state variable u{} is not bound", .0 + 1)]
    UnboundState(usize),
    #[error("non-finite intermediate result")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("empty expression")]
    Empty,
    #[error("unexpected character '{ch}' at column {column}")]
    UnexpectedChar { ch: char, column: usize },
    #[error("unexpected {found} at column {column}, expected {expected}")]
    UnexpectedToken {
        found: String,
        expected: &'static str,
        column: usize,
    },
    #[error("unknown identifier '{name}' at column {column}")]
    UnknownIdentifier { name: String, column: usize },
    #[error("unknown function '{name}' at column {column}")]
    UnknownFunction { name: String, column: usize },
    #[error("exponent at column {column} must be a constant")]
    NonConstantExponent { column: usize },
    #[error("function '{name}' at column {column} takes {expected} argument(s)")]
    Arity {
        name: String,
        expected: usize,
        column: usize,
    },
    #[error("invalid number '{text}' at column {column}")]
    BadNumber { text: String, column: usize },
}

impl ParseError {
    /// One-based column of the error, when known.
    pub fn column(&self) -> Option<usize> {
        match self {
            ParseError::Empty => None,
            ParseError::UnexpectedChar { column, .. }
            | ParseError::UnexpectedToken { column, .. }
            | ParseError::UnknownIdentifier { column, .. }
            | ParseError::UnknownFunction { column, .. }
            | ParseError::NonConstantExponent { column }
            | ParseError::Arity { column, .. }
            | ParseError::BadNumber { column, .. } => Some(*column),
        }
    }
}

/// Legal variable names: `x`, the declared compartment names, and the
/// positional aliases `u1..un`.
#[derive(Debug, Clone, Default)]
pub struct Vocabulary {
    states: Vec<String>,
}

impl Vocabulary {
    /// Build from a name list. The entry `x` (if present) is the space
    /// variable; all other names become states in the order given.
    pub fn new<S: AsRef<str>>(names: &[S]) -> Self {
        Vocabulary {
            states: names
                .iter()
                .map(|s| s.as_ref().to_string())
                .filter(|s| s != "x")
                .collect(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_names(&self) -> &[String] {
        &self.states
    }

    fn resolve(&self, name: &str) -> Option<Expr> {
        if name == "x" {
            return Some(Expr::X);
        }
        if let Some(i) = self.states.iter().position(|s| s == name) {
            return Some(Expr::State(i));
        }
        let idx: usize = name.strip_prefix('u')?.parse().ok()?;
        (1..=self.states.len())
            .contains(&idx)
            .then(|| Expr::State(idx - 1))
    }
}

/// Parse `text` with variables drawn from `vocabulary`.
pub fn parse_expression<S: AsRef<str>>(text: &str, vocabulary: &[S]) -> Result<Expr, ParseError> {
    parse_with(text, &Vocabulary::new(vocabulary), &IndexMap::new())
}

/// Parse `text`, substituting named parameters by their expression trees.
pub fn parse_with(
    text: &str,
    vocabulary: &Vocabulary,
    params: &IndexMap<String, Expr>,
) -> Result<Expr, ParseError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(ParseError::Empty);
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        vocabulary,
        params,
        end_column: text.chars().count() + 1,
    };
    let e = parser.expr()?;
    if let Some(t) = parser.peek() {
        return Err(ParseError::UnexpectedToken {
            found: t.kind.describe(),
            expected: "end of input",
            column: t.column,
        });
    }
    Ok(e)
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

impl TokenKind {
    fn describe(&self) -> String {
        match self {
            TokenKind::Num(v) => format!("number {v}"),
            TokenKind::Ident(s) => format!("identifier '{s}'"),
            TokenKind::Op(c) => format!("'{c}'"),
            TokenKind::LParen => "'('".into(),
            TokenKind::RParen => "')'".into(),
            TokenKind::Comma => "','".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    column: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let s: String = chars[start..i].iter().collect();
            let v = s.parse::<f64>().map_err(|_| ParseError::BadNumber {
                text: s.clone(),
                column,
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                column,
            });
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(chars[start..i].iter().collect()),
                column,
            });
            continue;
        }
        let kind = match c {
            '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
            '(' => TokenKind::LParen,
            ')' => TokenKind::RParen,
            ',' => TokenKind::Comma,
            _ => return Err(ParseError::UnexpectedChar { ch: c, column }),
        };
        out.push(Token { kind, column });
        i += 1;
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    pos: usize,
    vocabulary: &'a Vocabulary,
    params: &'a IndexMap<String, Expr>,
    end_column: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    fn peek_op(&self) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) => Some(*c),
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind, expected: &'static str) -> Result<(), ParseError> {
        match self.next() {
            Some(t) if t.kind == kind => Ok(()),
            Some(t) => Err(ParseError::UnexpectedToken {
                found: t.kind.describe(),
                expected,
                column: t.column,
            }),
            None => Err(ParseError::UnexpectedToken {
                found: "end of input".into(),
                expected,
                column: self.end_column,
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op @ ('+' | '-')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.term()?;
            lhs = if op == '+' {
                Expr::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.power()?;
        while let Some(op @ ('*' | '/')) = self.peek_op() {
            self.pos += 1;
            let rhs = self.power()?;
            lhs = if op == '*' {
                Expr::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Expr::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    // unary minus binds tighter than '^'; '^' is right associative
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.unary()?;
        if self.peek_op() == Some('^') {
            let column = self.next().map(|t| t.column).unwrap_or(self.end_column);
            let exponent = self.power()?;
            let c = exponent
                .constant_value()
                .ok_or(ParseError::NonConstantExponent { column })?;
            return Ok(Expr::Pow(Box::new(base), c));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek_op() {
            Some('-') => {
                self.pos += 1;
                Ok(Expr::Neg(Box::new(self.unary()?)))
            }
            Some('+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.next() else {
            return Err(ParseError::UnexpectedToken {
                found: "end of input".into(),
                expected: "operand",
                column: self.end_column,
            });
        };
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "')'")?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                if matches!(
                    self.peek(),
                    Some(Token {
                        kind: TokenKind::LParen,
                        ..
                    })
                ) {
                    self.pos += 1;
                    return self.call(name, tok.column);
                }
                if name == "pi" {
                    return Ok(Expr::Const(std::f64::consts::PI));
                }
                if let Some(e) = self.params.get(&name) {
                    return Ok(e.clone());
                }
                self.vocabulary
                    .resolve(&name)
                    .ok_or(ParseError::UnknownIdentifier {
                        name,
                        column: tok.column,
                    })
            }
            other => Err(ParseError::UnexpectedToken {
                found: other.describe(),
                expected: "operand",
                column: tok.column,
            }),
        }
    }

    fn call(&mut self, name: String, column: usize) -> Result<Expr, ParseError> {
        let mut args = vec![self.expr()?];
        while matches!(
            self.peek(),
            Some(Token {
                kind: TokenKind::Comma,
                ..
            })
        ) {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(TokenKind::RParen, "')'")?;
        if name == "pow" {
            if args.len() != 2 {
                return Err(ParseError::Arity {
                    name,
                    expected: 2,
                    column,
                });
            }
            let exponent = args.pop().unwrap();
            let c = exponent
                .constant_value()
                .ok_or(ParseError::NonConstantExponent { column })?;
            return Ok(Expr::Pow(Box::new(args.pop().unwrap()), c));
        }
        let func = Func::from_name(&name).ok_or_else(|| ParseError::UnknownFunction {
            name: name.clone(),
            column,
        })?;
        if args.len() != 1 {
            return Err(ParseError::Arity {
                name,
                expected: 1,
                column,
            });
        }
        Ok(Expr::Func(func, Box::new(args.pop().unwrap())))
    }
}

fn checked(v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite)
    }
}

impl Expr {
    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn state(i: usize) -> Expr {
        Expr::State(i)
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    fn is_one(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 1.0)
    }

    /// Value of the expression when it involves neither `x` nor any state.
    pub fn constant_value(&self) -> Option<f64> {
        if self.depends_on_x() || self.max_state().is_some() {
            return None;
        }
        self.eval(0.0, &[]).ok()
    }

    pub fn depends_on_x(&self) -> bool {
        match self {
            Expr::X => true,
            Expr::Const(_) | Expr::State(_) => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Func(_, a) => a.depends_on_x(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_x() || b.depends_on_x()
            }
        }
    }

    /// Largest state index referenced.
    pub fn max_state(&self) -> Option<usize> {
        match self {
            Expr::State(i) => Some(*i),
            Expr::Const(_) | Expr::X => None,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Func(_, a) => a.max_state(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.max_state().max(b.max_state())
            }
        }
    }

    pub fn depends_on_state(&self, i: usize) -> bool {
        match self {
            Expr::State(j) => *j == i,
            Expr::Const(_) | Expr::X => false,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Func(_, a) => a.depends_on_state(i),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_state(i) || b.depends_on_state(i)
            }
        }
    }

    /// Evaluate at position `x` and state `u`. Domain violations are errors,
    /// never NaN.
    pub fn eval(&self, x: f64, u: &[f64]) -> Result<f64, EvalError> {
        match self {
            Expr::Const(c) => Ok(*c),
            Expr::X => Ok(x),
            Expr::State(i) => u.get(*i).copied().ok_or(EvalError::UnboundState(*i)),
            Expr::Neg(a) => Ok(-a.eval(x, u)?),
            Expr::Add(a, b) => checked(a.eval(x, u)? + b.eval(x, u)?),
            Expr::Sub(a, b) => checked(a.eval(x, u)? - b.eval(x, u)?),
            Expr::Mul(a, b) => checked(a.eval(x, u)? * b.eval(x, u)?),
            Expr::Div(a, b) => {
                let num = a.eval(x, u)?;
                let den = b.eval(x, u)?;
                if den == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                checked(num / den)
            }
            Expr::Pow(a, c) => {
                let base = a.eval(x, u)?;
                if *c == 0.0 {
                    return Ok(1.0);
                }
                if base == 0.0 && *c < 0.0 {
                    return Err(EvalError::PowDomain(*c));
                }
                if base < 0.0 && c.fract() != 0.0 {
                    return Err(EvalError::PowNegativeBase {
                        base,
                        exponent: *c,
                    });
                }
                checked(base.powf(*c))
            }
            Expr::Func(f, a) => {
                let v = a.eval(x, u)?;
                match f {
                    Func::Sin => Ok(v.sin()),
                    Func::Cos => Ok(v.cos()),
                    Func::Exp => checked(v.exp()),
                    Func::Log if v <= 0.0 => Err(EvalError::LogDomain(v)),
                    Func::Log => Ok(v.ln()),
                    Func::Sqrt if v < 0.0 => Err(EvalError::SqrtDomain(v)),
                    Func::Sqrt => Ok(v.sqrt()),
                    Func::Abs => Ok(v.abs()),
                }
            }
        }
    }

    /// Symbolic partial derivative with respect to `var` (`Expr::X` or
    /// `Expr::State(i)`), with constant folding.
    pub fn differentiate(&self, var: &Expr) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::X | Expr::State(_) => Expr::Const(if self == var { 1.0 } else { 0.0 }),
            Expr::Neg(a) => neg(a.differentiate(var)),
            Expr::Add(a, b) => add(a.differentiate(var), b.differentiate(var)),
            Expr::Sub(a, b) => sub(a.differentiate(var), b.differentiate(var)),
            Expr::Mul(a, b) => add(
                mul(a.differentiate(var), (**b).clone()),
                mul((**a).clone(), b.differentiate(var)),
            ),
            Expr::Div(a, b) => {
                let da = a.differentiate(var);
                let db = b.differentiate(var);
                if db.is_zero() {
                    return div(da, (**b).clone());
                }
                div(
                    sub(mul(da, (**b).clone()), mul((**a).clone(), db)),
                    pow((**b).clone(), 2.0),
                )
            }
            Expr::Pow(a, c) => {
                let da = a.differentiate(var);
                mul(mul(Expr::Const(*c), pow((**a).clone(), c - 1.0)), da)
            }
            Expr::Func(f, a) => {
                let da = a.differentiate(var);
                if da.is_zero() {
                    return Expr::Const(0.0);
                }
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => func(Func::Cos, inner),
                    Func::Cos => neg(func(Func::Sin, inner)),
                    Func::Exp => func(Func::Exp, inner),
                    Func::Log => return div(da, inner),
                    Func::Sqrt => {
                        return div(da, mul(Expr::Const(2.0), func(Func::Sqrt, inner)));
                    }
                    Func::Abs => div(inner.clone(), func(Func::Abs, inner)),
                };
                mul(outer, da)
            }
        }
    }

    /// Derivative with respect to state `i`.
    pub fn d_state(&self, i: usize) -> Expr {
        self.differentiate(&Expr::State(i))
    }

    /// Display adaptor that prints states by name.
    pub fn display_with<'a>(&'a self, names: &'a [String]) -> NamedDisplay<'a> {
        NamedDisplay { expr: self, names }
    }

    fn write(&self, f: &mut fmt::Formatter<'_>, names: Option<&[String]>) -> fmt::Result {
        match self {
            Expr::Const(c) => {
                if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) {
                    write!(f, "(-{})", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::X => write!(f, "x"),
            Expr::State(i) => match names.and_then(|n| n.get(*i)) {
                Some(name) => write!(f, "{name}"),
                None => write!(f, "u{}", i + 1),
            },
            Expr::Neg(a) => {
                write!(f, "-(")?;
                a.write(f, names)?;
                write!(f, ")")
            }
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                let op = match self {
                    Expr::Add(..) => "+",
                    Expr::Sub(..) => "-",
                    Expr::Mul(..) => "*",
                    _ => "/",
                };
                write!(f, "(")?;
                a.write(f, names)?;
                write!(f, " {op} ")?;
                b.write(f, names)?;
                write!(f, ")")
            }
            Expr::Pow(a, c) => {
                write!(f, "pow(")?;
                a.write(f, names)?;
                write!(f, ", ")?;
                Expr::Const(*c).write(f, names)?;
                write!(f, ")")
            }
            Expr::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write(f, names)?;
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write(f, None)
    }
}

pub struct NamedDisplay<'a> {
    expr: &'a Expr,
    names: &'a [String],
}

impl fmt::Display for NamedDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.expr.write(f, Some(self.names))
    }
}

// Folding constructors. Only constants and the 0/1 identities are simplified.

pub fn neg(a: Expr) -> Expr {
    match a {
        Expr::Const(c) => Expr::Const(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

pub fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x + y),
        _ if a.is_zero() => b,
        _ if b.is_zero() => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x - y),
        _ if b.is_zero() => a,
        _ if a.is_zero() => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) => Expr::Const(x * y),
        _ if a.is_zero() || b.is_zero() => Expr::Const(0.0),
        _ if a.is_one() => b,
        _ if b.is_one() => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
        _ if a.is_zero() => Expr::Const(0.0),
        _ if b.is_one() => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

pub fn pow(a: Expr, c: f64) -> Expr {
    if c == 0.0 {
        return Expr::Const(1.0);
    }
    if c == 1.0 {
        return a;
    }
    match a {
        Expr::Const(v) if v != 0.0 || c > 0.0 => Expr::Const(v.powf(c)),
        other => Expr::Pow(Box::new(other), c),
    }
}

pub fn func(f: Func, a: Expr) -> Expr {
    match a {
        Expr::Const(v) => match Expr::Func(f, Box::new(Expr::Const(v))).eval(0.0, &[]) {
            Ok(r) => Expr::Const(r),
            Err(_) => Expr::Func(f, Box::new(Expr::Const(v))),
        },
        other => Expr::Func(f, Box::new(other)),
    }
}

impl From<f64> for Expr {
    fn from(v: f64) -> Self {
        Expr::Const(v)
    }
}

macro_rules! binop {
    ($trait:ident, $method:ident, $ctor:ident) => {
        impl ops::$trait for Expr {
            type Output = Expr;
            fn $method(self, rhs: Expr) -> Expr {
                $ctor(self, rhs)
            }
        }
        impl ops::$trait<&Expr> for &Expr {
            type Output = Expr;
            fn $method(self, rhs: &Expr) -> Expr {
                $ctor(self.clone(), rhs.clone())
            }
        }
        impl ops::$trait<f64> for Expr {
            type Output = Expr;
            fn $method(self, rhs: f64) -> Expr {
                $ctor(self, Expr::Const(rhs))
            }
        }
    };
}

binop!(Add, add, add);
binop!(Sub, sub, sub);
binop!(Mul, mul, mul);
binop!(Div, div, div);

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str, vocab: &[&str]) -> Expr {
        parse_expression(text, vocab).unwrap()
    }

    #[test]
    fn parses_cosine_coefficient() {
        let e = p("2 + cos(pi*x)", &["x"]);
        assert_eq!(
            e,
            Expr::Add(
                Box::new(Expr::Const(2.0)),
                Box::new(Expr::Func(
                    Func::Cos,
                    Box::new(Expr::Mul(
                        Box::new(Expr::Const(std::f64::consts::PI)),
                        Box::new(Expr::X)
                    ))
                ))
            )
        );
        assert_eq!(e.eval(0.0, &[]).unwrap(), 3.0);
    }

    #[test]
    fn unknown_identifier_is_named() {
        match parse_expression("beta", &["x"]) {
            Err(ParseError::UnknownIdentifier { name, column }) => {
                assert_eq!(name, "beta");
                assert_eq!(column, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn division_tree() {
        let e = p("u1*u3/(u1+u2+u3)", &["x", "u1", "u2", "u3"]);
        assert!(matches!(e, Expr::Div(..)));
        assert_eq!(e.eval(0.0, &[1.0, 2.0, 3.0]).unwrap(), 0.5);
    }

    #[test]
    fn projection_and_positional_aliases() {
        let e = p("u3", &["x", "I", "V", "S"]);
        assert_eq!(e.eval(0.0, &[0.0, 0.0, 5.0]).unwrap(), 5.0);
        let named = p("S", &["x", "I", "V", "S"]);
        assert_eq!(named, e);
    }

    #[test]
    fn domain_violations_are_errors() {
        let e = p("1/u1", &["x", "u1"]);
        assert_eq!(e.eval(0.0, &[0.0]), Err(EvalError::DivisionByZero));
        assert!(matches!(
            p("log(u1)", &["u1"]).eval(0.0, &[-1.0]),
            Err(EvalError::LogDomain(_))
        ));
        assert!(matches!(
            p("sqrt(u1)", &["u1"]).eval(0.0, &[-1.0]),
            Err(EvalError::SqrtDomain(_))
        ));
        assert!(matches!(
            p("u1^(-0.5)", &["u1"]).eval(0.0, &[0.0]),
            Err(EvalError::PowDomain(_))
        ));
    }

    #[test]
    fn syntax_error_reports_column() {
        let err = parse_expression("2 + * x", &["x"]).unwrap_err();
        assert_eq!(err.column(), Some(5));
        let err = parse_expression("(x + 1", &["x"]).unwrap_err();
        assert!(matches!(err, ParseError::UnexpectedToken { .. }));
        assert_eq!(parse_expression("  ", &["x"]), Err(ParseError::Empty));
        assert!(matches!(
            parse_expression("x # 2", &["x"]),
            Err(ParseError::UnexpectedChar { ch: '#', column: 3 })
        ));
    }

    #[test]
    fn precedence() {
        // unary minus binds tighter than '^'
        assert_eq!(p("-2^2", &["x"]).eval(0.0, &[]).unwrap(), 4.0);
        assert_eq!(p("2^3^2", &["x"]).eval(0.0, &[]).unwrap(), 512.0);
        assert_eq!(p("1 + 2*3 - 4/2", &["x"]).eval(0.0, &[]).unwrap(), 5.0);
        assert_eq!(p("2^-1", &["x"]).eval(0.0, &[]).unwrap(), 0.5);
        assert_eq!(p("pow(x, 2)", &["x"]).eval(3.0, &[]).unwrap(), 9.0);
        assert!(matches!(
            parse_expression("x^x", &["x"]),
            Err(ParseError::NonConstantExponent { .. })
        ));
    }

    #[test]
    fn product_rule_folds() {
        let mut params = IndexMap::new();
        params.insert("b".to_string(), Expr::Const(0.7));
        let vocab = Vocabulary::new(&["x", "u1", "u2", "u3"]);
        let e = parse_with("b*u1*u3", &vocab, &params).unwrap();
        let d = e.d_state(0);
        assert_eq!(d, Expr::Mul(Box::new(Expr::Const(0.7)), Box::new(Expr::State(2))));
        assert_eq!(d.to_string(), "(0.7 * u3)");
    }

    #[test]
    fn derivative_of_u_free_term_is_zero() {
        let e = p("cos(pi*x)", &["x", "u1", "u2"]);
        assert!(e.d_state(1).is_zero());
    }

    #[test]
    fn params_substitute_subtrees() {
        let vocab = Vocabulary::new(&["x"]);
        let mut params = IndexMap::new();
        params.insert(
            "beta".into(),
            parse_with("2 + cos(pi*x)", &vocab, &IndexMap::new()).unwrap(),
        );
        let e = parse_with("beta/2", &vocab, &params).unwrap();
        assert!((e.eval(1.0, &[]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn printing_round_trips() {
        let vocab = ["x", "S", "I"];
        for text in [
            "-x^2 + 3*S/(I+1)",
            "exp(-x) * sqrt(S) - log(1 + I)",
            "abs(x - 0.5) * (S + I)^(-0.25)",
            "-(-1.5e-7) * sin(2*pi*x)",
        ] {
            let e = p(text, &vocab);
            let printed = e.to_string();
            let back = p(&printed, &vocab);
            assert_eq!(back, e, "{text} -> {printed}");
        }
    }
}
