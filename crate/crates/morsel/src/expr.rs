//! Expression language for smooth scalar fields.
//!
//! Sources like `x1^2 + sin(x2)*x3` parse into an [`Expr`] tree over variables
//! `x1..xn`, the arithmetic operators `+ - * /`, integer powers `^k`, unary
//! negation and the functions `sin cos exp log sqrt`. Evaluation propagates
//! second-order forward-mode jets, so values, gradients and Hessians are exact
//! to floating point (no truncation error).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Built-in unary functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            "log" => Some(Func::Log),
            "sqrt" => Some(Func::Sqrt),
            _ => None,
        }
    }
}

/// Abstract syntax tree of a scalar expression.
///
/// Variables are stored zero-based; the surface syntax `x1..xn` is one-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Call(Func, Box<Expr>),
}

impl Expr {
    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            Expr::Const(_) | Expr::Var(_) | Expr::Call(..) => 5,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "(")?;
                write!(f, "{e}")?;
                write!(f, ")")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                child(f, a, 3)
            }
            Expr::Add(a, b) => {
                child(f, a, 1)?;
                write!(f, "+")?;
                child(f, b, 2)
            }
            Expr::Sub(a, b) => {
                child(f, a, 1)?;
                write!(f, "-")?;
                child(f, b, 2)
            }
            Expr::Mul(a, b) => {
                child(f, a, 2)?;
                write!(f, "*")?;
                child(f, b, 3)
            }
            Expr::Div(a, b) => {
                child(f, a, 2)?;
                write!(f, "/")?;
                child(f, b, 3)
            }
            Expr::Pow(a, k) => {
                child(f, a, 5)?;
                write!(f, "^{k}")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

// ---------------------------------------------------------------------------
// Lexer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.src.get(self.pos), Some(b' ' | b'\t' | b'\r' | b'\n')) {
            self.pos += 1;
        }
    }

    /// Next token plus the byte offset where it starts.
    fn next(&mut self) -> Result<(Tok, usize)> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::Eof, start));
        };
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => return self.lex_number(),
            c if c.is_ascii_alphabetic() || c == b'_' => return self.lex_ident(),
            other => {
                return Err(Error::Parse {
                    offset: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn lex_number(&mut self) -> Result<(Tok, usize)> {
        let start = self.pos;
        while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        if matches!(self.src.get(self.pos), Some(b'.')) {
            self.pos += 1;
            while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                self.pos += 1;
            }
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                while matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
            } else {
                // `e` belonged to an identifier or was stray; back off.
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii digits");
        let value: f64 = text.parse().map_err(|_| Error::Parse {
            offset: start,
            message: format!("malformed number literal `{text}`"),
        })?;
        Ok((Tok::Num(value), start))
    }

    fn lex_ident(&mut self) -> Result<(Tok, usize)> {
        let start = self.pos;
        while self
            .src
            .get(self.pos)
            .is_some_and(|c| c.is_ascii_alphanumeric() || *c == b'_')
        {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos])
            .expect("ascii identifier")
            .to_owned();
        Ok((Tok::Ident(text), start))
    }
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

struct Parser<'a> {
    lexer: Lexer<'a>,
    peeked: (Tok, usize),
    dim: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str, dim: usize) -> Result<Self> {
        let mut lexer = Lexer::new(src);
        let peeked = lexer.next()?;
        Ok(Parser { lexer, peeked, dim })
    }

    fn peek(&self) -> &Tok {
        &self.peeked.0
    }

    fn offset(&self) -> usize {
        self.peeked.1
    }

    fn advance(&mut self) -> Result<(Tok, usize)> {
        let next = self.lexer.next()?;
        Ok(std::mem::replace(&mut self.peeked, next))
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<()> {
        if *self.peek() == tok {
            self.advance()?;
            Ok(())
        } else {
            Err(Error::Parse {
                offset: self.offset(),
                message: format!("expected {what}"),
            })
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut node = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.advance()?;
                    node = Expr::Add(Box::new(node), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.advance()?;
                    node = Expr::Sub(Box::new(node), Box::new(self.term()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut node = self.unary()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.advance()?;
                    node = Expr::Mul(Box::new(node), Box::new(self.unary()?));
                }
                Tok::Slash => {
                    self.advance()?;
                    node = Expr::Div(Box::new(node), Box::new(self.unary()?));
                }
                _ => return Ok(node),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if *self.peek() == Tok::Minus {
            self.advance()?;
            Ok(Expr::Neg(Box::new(self.unary()?)))
        } else {
            self.power()
        }
    }

    fn power(&mut self) -> Result<Expr> {
        let mut node = self.atom()?;
        while *self.peek() == Tok::Caret {
            self.advance()?;
            node = Expr::Pow(Box::new(node), self.integer_exponent()?);
        }
        Ok(node)
    }

    /// Exponents are integer literals, optionally negated.
    fn integer_exponent(&mut self) -> Result<i32> {
        let negate = if *self.peek() == Tok::Minus {
            self.advance()?;
            true
        } else {
            false
        };
        let (tok, offset) = self.advance()?;
        let Tok::Num(value) = tok else {
            return Err(Error::Parse {
                offset,
                message: "exponent must be an integer literal".into(),
            });
        };
        if value.fract() != 0.0 || value.abs() > i32::MAX as f64 {
            return Err(Error::Parse {
                offset,
                message: format!("non-integer exponent literal `{value}`"),
            });
        }
        let k = value as i32;
        Ok(if negate { -k } else { k })
    }

    fn atom(&mut self) -> Result<Expr> {
        let (tok, offset) = self.advance()?;
        match tok {
            Tok::Num(value) => Ok(Expr::Const(value)),
            Tok::LParen => {
                let inner = self.expr()?;
                self.expect(Tok::RParen, "closing `)`")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    let func = Func::from_name(&name).ok_or_else(|| Error::Parse {
                        offset,
                        message: format!("unknown identifier `{name}`"),
                    })?;
                    self.advance()?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "closing `)`")?;
                    Ok(Expr::Call(func, Box::new(arg)))
                } else {
                    self.variable(&name, offset)
                }
            }
            Tok::Eof => Err(Error::Parse {
                offset,
                message: "unexpected end of input".into(),
            }),
            other => Err(Error::Parse {
                offset,
                message: format!("unexpected token `{other:?}`"),
            }),
        }
    }

    fn variable(&self, name: &str, offset: usize) -> Result<Expr> {
        let index = name
            .strip_prefix('x')
            .filter(|rest| !rest.is_empty() && rest.bytes().all(|b| b.is_ascii_digit()))
            .and_then(|rest| rest.parse::<usize>().ok())
            .ok_or_else(|| Error::Parse {
                offset,
                message: format!("unknown identifier `{name}`"),
            })?;
        if index == 0 {
            return Err(Error::Parse {
                offset,
                message: "variable index must be at least 1".into(),
            });
        }
        if index > self.dim {
            return Err(Error::Parse {
                offset,
                message: format!("variable index exceeds dimension ({index} > {})", self.dim),
            });
        }
        Ok(Expr::Var(index - 1))
    }
}

/// Parse `src` against ambient dimension `dim` (number of variables).
pub fn parse(src: &str, dim: usize) -> Result<Expr> {
    if dim == 0 {
        return Err(Error::Scenario("ambient dimension must be at least 1".into()));
    }
    let mut parser = Parser::new(src, dim)?;
    let expr = parser.expr()?;
    if *parser.peek() != Tok::Eof {
        return Err(Error::Parse {
            offset: parser.offset(),
            message: "trailing input after expression".into(),
        });
    }
    Ok(expr)
}

// ---------------------------------------------------------------------------
// Second-order forward jets
// ---------------------------------------------------------------------------

/// Value, gradient and Hessian of a scalar field at one point.
///
/// The Hessian is symmetric bit-for-bit: every update below is assembled from
/// symmetric rank updates, and IEEE addition of the same two summands is
/// order-insensitive.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl Jet2 {
    fn constant(value: f64, n: usize) -> Self {
        Jet2 {
            value,
            gradient: DVector::zeros(n),
            hessian: DMatrix::zeros(n, n),
        }
    }

    fn variable(value: f64, index: usize, n: usize) -> Self {
        let mut gradient = DVector::zeros(n);
        gradient[index] = 1.0;
        Jet2 {
            value,
            gradient,
            hessian: DMatrix::zeros(n, n),
        }
    }
}

/// `u v^T + v u^T`, entrywise symmetric including at the bit level.
fn sym_outer(u: &DVector<f64>, v: &DVector<f64>) -> DMatrix<f64> {
    let n = u.len();
    DMatrix::from_fn(n, n, |i, j| u[i] * v[j] + v[i] * u[j])
}

/// Chain rule for a unary map with derivatives `du`, `ddu` at `a.value`.
fn unary_jet(a: Jet2, value: f64, du: f64, ddu: f64) -> Jet2 {
    let n = a.gradient.len();
    let hessian = DMatrix::from_fn(n, n, |i, j| {
        ddu * (a.gradient[i] * a.gradient[j]) + du * a.hessian[(i, j)]
    });
    Jet2 {
        value,
        gradient: du * a.gradient,
        hessian,
    }
}

fn eval_jet_node(e: &Expr, x: &DVector<f64>) -> Result<Jet2> {
    let n = x.len();
    match e {
        Expr::Const(c) => Ok(Jet2::constant(*c, n)),
        Expr::Var(i) => Ok(Jet2::variable(x[*i], *i, n)),
        Expr::Neg(a) => {
            let a = eval_jet_node(a, x)?;
            Ok(Jet2 {
                value: -a.value,
                gradient: -a.gradient,
                hessian: -a.hessian,
            })
        }
        Expr::Add(a, b) => {
            let a = eval_jet_node(a, x)?;
            let b = eval_jet_node(b, x)?;
            Ok(Jet2 {
                value: a.value + b.value,
                gradient: a.gradient + b.gradient,
                hessian: a.hessian + b.hessian,
            })
        }
        Expr::Sub(a, b) => {
            let a = eval_jet_node(a, x)?;
            let b = eval_jet_node(b, x)?;
            Ok(Jet2 {
                value: a.value - b.value,
                gradient: a.gradient - b.gradient,
                hessian: a.hessian - b.hessian,
            })
        }
        Expr::Mul(a, b) => {
            let a = eval_jet_node(a, x)?;
            let b = eval_jet_node(b, x)?;
            let hessian = a.value * &b.hessian + b.value * &a.hessian
                + sym_outer(&a.gradient, &b.gradient);
            Ok(Jet2 {
                value: a.value * b.value,
                gradient: a.value * &b.gradient + b.value * &a.gradient,
                hessian,
            })
        }
        Expr::Div(a, b) => {
            let ja = eval_jet_node(a, x)?;
            let jb = eval_jet_node(b, x)?;
            if jb.value == 0.0 {
                return Err(Error::domain(e, "division by zero"));
            }
            let q = ja.value / jb.value;
            let gradient = (&ja.gradient - q * &jb.gradient) / jb.value;
            let hessian =
                (ja.hessian - q * jb.hessian - sym_outer(&gradient, &jb.gradient)) / jb.value;
            Ok(Jet2 {
                value: q,
                gradient,
                hessian,
            })
        }
        Expr::Pow(a, k) => {
            let ja = eval_jet_node(a, x)?;
            let k = *k;
            if k == 0 {
                return Ok(Jet2::constant(1.0, n));
            }
            if k < 0 && ja.value == 0.0 {
                return Err(Error::domain(e, "zero raised to a negative power"));
            }
            let kf = k as f64;
            let du = kf * ja.value.powi(k - 1);
            let ddu = kf * (kf - 1.0) * ja.value.powi(k - 2);
            let value = ja.value.powi(k);
            Ok(unary_jet(ja, value, du, ddu))
        }
        Expr::Call(func, a) => {
            let ja = eval_jet_node(a, x)?;
            let v = ja.value;
            match func {
                Func::Sin => Ok(unary_jet(ja, v.sin(), v.cos(), -v.sin())),
                Func::Cos => Ok(unary_jet(ja, v.cos(), -v.sin(), -v.cos())),
                Func::Exp => {
                    let ev = v.exp();
                    Ok(unary_jet(ja, ev, ev, ev))
                }
                Func::Log => {
                    if v <= 0.0 {
                        return Err(Error::domain(e, "log of a non-positive value"));
                    }
                    Ok(unary_jet(ja, v.ln(), 1.0 / v, -1.0 / (v * v)))
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(Error::domain(e, "sqrt of a negative value"));
                    }
                    if v == 0.0 {
                        return Err(Error::domain(e, "sqrt derivative is unbounded at zero"));
                    }
                    let s = v.sqrt();
                    Ok(unary_jet(ja, s, 0.5 / s, -0.25 / (s * v)))
                }
            }
        }
    }
}

fn eval_value_node(e: &Expr, x: &DVector<f64>) -> Result<f64> {
    match e {
        Expr::Const(c) => Ok(*c),
        Expr::Var(i) => Ok(x[*i]),
        Expr::Neg(a) => Ok(-eval_value_node(a, x)?),
        Expr::Add(a, b) => Ok(eval_value_node(a, x)? + eval_value_node(b, x)?),
        Expr::Sub(a, b) => Ok(eval_value_node(a, x)? - eval_value_node(b, x)?),
        Expr::Mul(a, b) => Ok(eval_value_node(a, x)? * eval_value_node(b, x)?),
        Expr::Div(a, b) => {
            let den = eval_value_node(b, x)?;
            if den == 0.0 {
                return Err(Error::domain(e, "division by zero"));
            }
            Ok(eval_value_node(a, x)? / den)
        }
        Expr::Pow(a, k) => {
            let base = eval_value_node(a, x)?;
            if *k < 0 && base == 0.0 {
                return Err(Error::domain(e, "zero raised to a negative power"));
            }
            Ok(base.powi(*k))
        }
        Expr::Call(func, a) => {
            let v = eval_value_node(a, x)?;
            match func {
                Func::Sin => Ok(v.sin()),
                Func::Cos => Ok(v.cos()),
                Func::Exp => Ok(v.exp()),
                Func::Log => {
                    if v <= 0.0 {
                        Err(Error::domain(e, "log of a non-positive value"))
                    } else {
                        Ok(v.ln())
                    }
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        Err(Error::domain(e, "sqrt of a negative value"))
                    } else {
                        Ok(v.sqrt())
                    }
                }
            }
        }
    }
}

/// First-order pass: value and gradient only. Cheaper than the full jet when
/// Hessians are not needed (projection inner loops).
fn eval_grad_node(e: &Expr, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    let n = x.len();
    match e {
        Expr::Const(c) => Ok((*c, DVector::zeros(n))),
        Expr::Var(i) => {
            let mut g = DVector::zeros(n);
            g[*i] = 1.0;
            Ok((x[*i], g))
        }
        Expr::Neg(a) => {
            let (v, g) = eval_grad_node(a, x)?;
            Ok((-v, -g))
        }
        Expr::Add(a, b) => {
            let (va, ga) = eval_grad_node(a, x)?;
            let (vb, gb) = eval_grad_node(b, x)?;
            Ok((va + vb, ga + gb))
        }
        Expr::Sub(a, b) => {
            let (va, ga) = eval_grad_node(a, x)?;
            let (vb, gb) = eval_grad_node(b, x)?;
            Ok((va - vb, ga - gb))
        }
        Expr::Mul(a, b) => {
            let (va, ga) = eval_grad_node(a, x)?;
            let (vb, gb) = eval_grad_node(b, x)?;
            Ok((va * vb, va * gb + vb * ga))
        }
        Expr::Div(a, b) => {
            let (va, ga) = eval_grad_node(a, x)?;
            let (vb, gb) = eval_grad_node(b, x)?;
            if vb == 0.0 {
                return Err(Error::domain(e, "division by zero"));
            }
            let q = va / vb;
            Ok((q, (ga - q * gb) / vb))
        }
        Expr::Pow(a, k) => {
            let (va, ga) = eval_grad_node(a, x)?;
            if *k == 0 {
                return Ok((1.0, DVector::zeros(n)));
            }
            if *k < 0 && va == 0.0 {
                return Err(Error::domain(e, "zero raised to a negative power"));
            }
            let kf = *k as f64;
            Ok((va.powi(*k), kf * va.powi(*k - 1) * ga))
        }
        Expr::Call(func, a) => {
            let (v, g) = eval_grad_node(a, x)?;
            let (value, du) = match func {
                Func::Sin => (v.sin(), v.cos()),
                Func::Cos => (v.cos(), -v.sin()),
                Func::Exp => (v.exp(), v.exp()),
                Func::Log => {
                    if v <= 0.0 {
                        return Err(Error::domain(e, "log of a non-positive value"));
                    }
                    (v.ln(), 1.0 / v)
                }
                Func::Sqrt => {
                    if v < 0.0 {
                        return Err(Error::domain(e, "sqrt of a negative value"));
                    }
                    if v == 0.0 {
                        return Err(Error::domain(e, "sqrt derivative is unbounded at zero"));
                    }
                    (v.sqrt(), 0.5 / v.sqrt())
                }
            };
            Ok((value, du * g))
        }
    }
}

// ---------------------------------------------------------------------------
// SmoothMap
// ---------------------------------------------------------------------------

/// A twice-differentiable scalar field on ambient space, backed by a parsed
/// expression. Immutable after construction; evaluation is reentrant.
#[derive(Debug, Clone)]
pub struct SmoothMap {
    src: String,
    expr: Expr,
    dim: usize,
}

impl SmoothMap {
    /// Parse `src` as a field on `dim`-dimensional ambient space.
    pub fn parse(src: &str, dim: usize) -> Result<Self> {
        let expr = parse(src, dim)?;
        Ok(SmoothMap {
            src: src.to_owned(),
            expr,
            dim,
        })
    }

    pub fn from_expr(expr: Expr, dim: usize) -> Self {
        SmoothMap {
            src: expr.to_string(),
            expr,
            dim,
        }
    }

    pub fn src(&self) -> &str {
        &self.src
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn value(&self, x: &DVector<f64>) -> Result<f64> {
        self.check_dim(x)?;
        let value = eval_value_node(&self.expr, x)?;
        self.check_finite(value)?;
        Ok(value)
    }

    /// Value and gradient in one pass.
    pub fn value_gradient(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.check_dim(x)?;
        let (value, gradient) = eval_grad_node(&self.expr, x)?;
        self.check_finite(value)?;
        Ok((value, gradient))
    }

    pub fn gradient(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.value_gradient(x)?.1)
    }

    /// Full second-order jet: value, gradient and (exactly symmetric) Hessian.
    pub fn jet2(&self, x: &DVector<f64>) -> Result<Jet2> {
        self.check_dim(x)?;
        let jet = eval_jet_node(&self.expr, x)?;
        self.check_finite(jet.value)?;
        Ok(jet)
    }

    /// Overflow (exp of a huge argument, large powers) is a domain error, so
    /// non-finite values never leak into solvers or reports.
    fn check_finite(&self, value: f64) -> Result<()> {
        if value.is_finite() {
            Ok(())
        } else {
            Err(Error::domain(&self.expr, "evaluation overflowed"))
        }
    }

    fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Precondition(format!(
                "point has dimension {}, expression expects {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("point has non-finite coordinates".into()));
        }
        Ok(())
    }
}

/// Evaluate an expression's full jet at a point.
pub fn eval_jet2(e: &Expr, x: &DVector<f64>) -> Result<Jet2> {
    eval_jet_node(e, x)
}
