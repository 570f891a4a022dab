//! Symbolic ground-truth expressions: a small recursive-descent parser, a
//! pure evaluator and a registry of the benchmark functions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr     := term (('+' | '-') term)*
//! term     := unary (('*' | '/') unary)*
//! unary    := ('-' | '+') unary | implicit
//! implicit := NUMBER power            -- only when NUMBER is directly followed by a name or '('
//!           | power
//! power    := atom ('^' exponent)?
//! exponent := ('-' | '+') exponent | power
//! atom     := NUMBER | NAME | FUNC '(' expr ')' | '(' expr ')'
//! ```
//!
//! So `-x^2` is `-(x^2)`, `2^3^2` is `2^(3^2)`, `3x^4` is `3*(x^4)` and `xy`
//! is a single variable named `xy`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use crate::error::{EvalError, ExprError, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Abs,
}

impl UnaryOp {
    fn function(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Abs => "abs",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    fn symbol(self) -> char {
        match self {
            BinaryOp::Add => '+',
            BinaryOp::Sub => '-',
            BinaryOp::Mul => '*',
            BinaryOp::Div => '/',
            BinaryOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Pi,
    Var(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    fn unary(op: UnaryOp, e: Expr) -> Self {
        Expr::Unary(op, Box::new(e))
    }

    fn binary(op: BinaryOp, l: Expr, r: Expr) -> Self {
        Expr::Binary(op, Box::new(l), Box::new(r))
    }

    /// Variable names referenced by the expression, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Var(v) => {
                out.insert(v.clone());
            }
            Expr::Unary(_, e) => e.collect_vars(out),
            Expr::Binary(_, l, r) => {
                l.collect_vars(out);
                r.collect_vars(out);
            }
            Expr::Const(_) | Expr::Pi => {}
        }
    }

    pub fn eval(&self, bindings: &dyn Bindings) -> Result<f64, EvalError> {
        let v = self.eval_inner(bindings)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_inner(&self, b: &dyn Bindings) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(name) => b.get(name).ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Unary(op, e) => {
                let v = e.eval_inner(b)?;
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Abs => v.abs(),
                }
            }
            Expr::Binary(op, l, r) => {
                let (a, c) = (l.eval_inner(b)?, r.eval_inner(b)?);
                match op {
                    BinaryOp::Add => a + c,
                    BinaryOp::Sub => a - c,
                    BinaryOp::Mul => a * c,
                    BinaryOp::Div => {
                        if c == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / c
                    }
                    BinaryOp::Pow => power(a, c)?,
                }
            }
        })
    }
}

fn power(base: f64, exponent: f64) -> Result<f64, EvalError> {
    if exponent.fract() == 0.0 && exponent.abs() <= i32::MAX as f64 {
        if base == 0.0 && exponent < 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        return Ok(base.powi(exponent as i32));
    }
    if base < 0.0 {
        return Err(EvalError::NegativeFractionalPower { base, exponent });
    }
    Ok(base.powf(exponent))
}

/// Variable lookup used during evaluation.
pub trait Bindings {
    fn get(&self, name: &str) -> Option<f64>;
}

impl Bindings for HashMap<String, f64> {
    fn get(&self, name: &str) -> Option<f64> {
        HashMap::get(self, name).copied()
    }
}

impl Bindings for HashMap<&str, f64> {
    fn get(&self, name: &str) -> Option<f64> {
        HashMap::get(self, name).copied()
    }
}

impl Bindings for [(&str, f64)] {
    fn get(&self, name: &str) -> Option<f64> {
        self.iter().find(|(n, _)| *n == name).map(|(_, v)| *v)
    }
}

impl<const N: usize> Bindings for [(&str, f64); N] {
    fn get(&self, name: &str) -> Option<f64> {
        Bindings::get(self.as_slice(), name)
    }
}

pub fn eval_expr(e: &Expr, bindings: &dyn Bindings) -> Result<f64, EvalError> {
    e.eval(bindings)
}

/// Fully parenthesised rendering that parses back to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Pi => f.write_str("pi"),
            Expr::Var(v) => f.write_str(v),
            Expr::Unary(UnaryOp::Neg, e) => write!(f, "(-{e})"),
            Expr::Unary(op, e) => write!(f, "{}({e})", op.name()),
            Expr::Binary(op, l, r) => write!(f, "({l}{}{r})", op.symbol()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Num(v) => write!(f, "{v}"),
            Tok::Name(n) => f.write_str(n),
            Tok::Op(c) => write!(f, "{c}"),
            Tok::LParen => f.write_str("("),
            Tok::RParen => f.write_str(")"),
        }
    }
}

fn err(offset: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { offset, kind }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            // Exponent only when digits follow, so `2exp(x)` stays `2 * exp(x)`.
            if i < bytes.len() && matches!(bytes[i], b'e' | b'E') {
                let mut j = i + 1;
                if j < bytes.len() && matches!(bytes[j], b'+' | b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| err(start, ParseErrorKind::BadNumber(text.to_string())))?;
            if !v.is_finite() {
                return Err(err(start, ParseErrorKind::BadNumber(text.to_string())));
            }
            out.push((start, Tok::Num(v)));
            continue;
        }
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push((start, Tok::Name(src[start..i].to_string())));
            continue;
        }
        let tok = match c {
            b'+' | b'-' | b'*' | b'/' | b'^' => Tok::Op(c as char),
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            _ => {
                let ch = src[start..].chars().next().unwrap_or('?');
                return Err(err(start, ParseErrorKind::UnexpectedChar(ch)));
            }
        };
        out.push((start, tok));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn peek_at(&self, k: usize) -> Option<&Tok> {
        self.toks.get(self.pos + k).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    /// Error for a missing operand after the operator at `op_offset`.
    fn operand_error(&self, op: char, op_offset: usize) -> ParseError {
        match self.peek() {
            None | Some(Tok::RParen) | Some(Tok::Op(_)) => err(op_offset, ParseErrorKind::DanglingOperator(op)),
            Some(t) => err(self.offset(), ParseErrorKind::UnexpectedToken(t.to_string())),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek().cloned() {
            let at = self.offset();
            self.bump();
            let rhs = self.term_after(c, at)?;
            let op = if c == '+' { BinaryOp::Add } else { BinaryOp::Sub };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn term_after(&mut self, op: char, at: usize) -> Result<Expr, ParseError> {
        if self.starts_operand() {
            self.term()
        } else {
            Err(self.operand_error(op, at))
        }
    }

    fn starts_operand(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Num(_) | Tok::Name(_) | Tok::LParen | Tok::Op('-' | '+'))
        )
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek().cloned() {
            let at = self.offset();
            self.bump();
            if !self.starts_operand() {
                return Err(self.operand_error(c, at));
            }
            let rhs = self.unary()?;
            let op = if c == '*' { BinaryOp::Mul } else { BinaryOp::Div };
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Op(c @ ('-' | '+'))) => {
                let c = *c;
                let at = self.offset();
                self.bump();
                if !self.starts_operand() {
                    return Err(self.operand_error(c, at));
                }
                let inner = self.unary()?;
                Ok(if c == '-' { Expr::unary(UnaryOp::Neg, inner) } else { inner })
            }
            _ => self.implicit(),
        }
    }

    fn implicit(&mut self) -> Result<Expr, ParseError> {
        if let (Some(Tok::Num(v)), Some(Tok::Name(_) | Tok::LParen)) = (self.peek(), self.peek_at(1)) {
            let v = *v;
            self.bump();
            let rhs = self.power()?;
            return Ok(Expr::binary(BinaryOp::Mul, Expr::Const(v), rhs));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            let at = self.offset();
            self.bump();
            if !self.starts_operand() {
                return Err(self.operand_error('^', at));
            }
            let exp = self.exponent()?;
            return Ok(Expr::binary(BinaryOp::Pow, base, exp));
        }
        Ok(base)
    }

    fn exponent(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(Tok::Op(c @ ('-' | '+'))) => {
                let c = *c;
                let at = self.offset();
                self.bump();
                if !self.starts_operand() {
                    return Err(self.operand_error(c, at));
                }
                let inner = self.exponent()?;
                Ok(if c == '-' { Expr::unary(UnaryOp::Neg, inner) } else { inner })
            }
            _ => self.power(),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(Expr::Const(v)),
            Some(Tok::Name(name)) => {
                if let Some(Tok::LParen) = self.peek() {
                    let op = UnaryOp::function(&name)
                        .ok_or_else(|| err(at, ParseErrorKind::UnknownFunction(name.clone())))?;
                    let open = self.offset();
                    self.bump();
                    let arg = self.group(open)?;
                    return Ok(Expr::unary(op, arg));
                }
                if name == "pi" {
                    Ok(Expr::Pi)
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => self.group(at),
            Some(Tok::RParen) => Err(err(at, ParseErrorKind::UnbalancedParen)),
            Some(Tok::Op(c)) => Err(err(at, ParseErrorKind::DanglingOperator(c))),
            None => Err(err(at, ParseErrorKind::UnexpectedEnd)),
        }
    }

    /// Parses `expr ')'` after an opening parenthesis at `open`.
    fn group(&mut self, open: usize) -> Result<Expr, ParseError> {
        if self.peek().is_none() {
            return Err(err(open, ParseErrorKind::UnbalancedParen));
        }
        let inner = self.expr()?;
        match self.peek() {
            Some(Tok::RParen) => {
                self.bump();
                Ok(inner)
            }
            None => Err(err(open, ParseErrorKind::UnbalancedParen)),
            Some(t) => Err(err(self.offset(), ParseErrorKind::UnexpectedToken(t.to_string()))),
        }
    }
}

pub fn parse_expr(text: &str) -> Result<Expr, ParseError> {
    let toks = lex(text)?;
    let mut p = Parser { toks, pos: 0, end: text.len() };
    if p.peek().is_none() {
        return Err(err(0, ParseErrorKind::UnexpectedEnd));
    }
    let e = p.expr()?;
    match p.peek() {
        None => Ok(e),
        Some(Tok::RParen) => Err(err(p.offset(), ParseErrorKind::UnbalancedParen)),
        Some(t) => Err(err(p.offset(), ParseErrorKind::UnexpectedToken(t.to_string()))),
    }
}

/// `target = expression`, as written in knowledge files and CLI flags.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub target: String,
    pub source: String,
    pub expr: Expr,
}

impl Equation {
    pub fn parse(line: &str) -> Result<Self, ExprError> {
        let (lhs, rhs) = line
            .split_once('=')
            .ok_or_else(|| ExprError::BadEquation(line.to_string()))?;
        let target = lhs.trim();
        let valid_name = target
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && target.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid_name {
            return Err(ExprError::BadEquation(line.to_string()));
        }
        let source = rhs.trim().to_string();
        let expr = parse_expr(&source)?;
        Ok(Self { target: target.to_string(), source, expr })
    }

    /// Evaluates the right-hand side with named bindings.
    pub fn eval(&self, bindings: &dyn Bindings) -> Result<f64, EvalError> {
        self.expr.eval(bindings)
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}", self.target, self.source)
    }
}

/// A registry function: its canonical source, output column and the input
/// domain used to build fixtures.
#[derive(Debug, Clone, Copy)]
pub struct BuiltinFunction {
    pub name: &'static str,
    pub source: &'static str,
    pub target: &'static str,
    pub domain: &'static [(&'static str, f64, f64)],
}

impl BuiltinFunction {
    pub fn expr(&self) -> Expr {
        parse_expr(self.source).expect("registry sources are valid")
    }

    pub fn equation(&self) -> Equation {
        Equation {
            target: self.target.to_string(),
            source: self.source.to_string(),
            expr: self.expr(),
        }
    }
}

/// Benchmark functions. `bohachevsky_3d` is the first Bohachevsky function;
/// `sigmoid_2d` is the standard logistic curve.
pub const BUILTINS: &[BuiltinFunction] = &[
    BuiltinFunction {
        name: "sigmoid_2d",
        source: "1/(1+exp(-x))",
        target: "y",
        domain: &[("x", -6.0, 6.0)],
    },
    BuiltinFunction {
        name: "bohachevsky_3d",
        source: "x1^2+2x2^2-0.3cos(3*pi*x1)-0.4cos(4*pi*x2)+0.7",
        target: "y",
        domain: &[("x1", -2.0, 2.0), ("x2", -2.0, 2.0)],
    },
    BuiltinFunction {
        name: "frac_power",
        source: "3x^(5/3)-15x^(2/3)",
        target: "y",
        domain: &[("x", 0.0, 8.0)],
    },
    BuiltinFunction {
        name: "cubic",
        source: "x^3-3x^2+1",
        target: "y",
        domain: &[("x", -1.5, 3.5)],
    },
    BuiltinFunction {
        name: "cubic_rising",
        source: "2x^3-15x^2+36x",
        target: "y",
        domain: &[("x", 0.0, 5.0)],
    },
    BuiltinFunction {
        name: "x_plus_2sin",
        source: "x+2sin(x)",
        target: "y",
        domain: &[("x", -6.0, 6.0)],
    },
    BuiltinFunction {
        name: "quartic",
        source: "3x^4+4x^3-12x^2+2",
        target: "y",
        domain: &[("x", -4.0, 4.0)],
    },
];

pub fn builtin_function(name: &str) -> Result<&'static BuiltinFunction, ExprError> {
    BUILTINS
        .iter()
        .find(|b| b.name == name)
        .ok_or_else(|| ExprError::UnknownBuiltin(name.to_string()))
}

pub fn builtin(name: &str) -> Result<Expr, ExprError> {
    Ok(builtin_function(name)?.expr())
}
