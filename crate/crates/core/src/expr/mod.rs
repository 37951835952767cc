//! Expression trees over the chart coordinates `(x, z1, ..., zn)`.
//!
//! A [`ScalarExpr`] is an immutable, reference-counted tree. Trees built
//! through the arithmetic operators and the helper methods are constant
//! folded (literals combined, `0` and `1` elided); trees produced by the
//! parser keep the structure of the source text.

mod diff;
mod parse;

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::Arc;

use thiserror::Error;

pub use parse::{parse, ParseError};

/// A chart coordinate: index 0 is `x`, index `k >= 1` is `z_k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coord(pub usize);

impl Coord {
    pub const X: Coord = Coord(0);

    pub fn z(k: usize) -> Coord {
        assert!(k >= 1, "z coordinates are numbered from 1");
        Coord(k)
    }

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == 0 {
            write!(f, "x")
        } else {
            write!(f, "z{}", self.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl UnaryOp {
    fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinaryOp::Add | BinaryOp::Sub => 1,
            BinaryOp::Mul | BinaryOp::Div => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
    Var(Coord),
    Unary(UnaryOp, ScalarExpr),
    Binary(BinaryOp, ScalarExpr, ScalarExpr),
    Powi(ScalarExpr, i32),
}

#[derive(Clone, PartialEq)]
pub struct ScalarExpr(Arc<Node>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("division by zero in `{0}`")]
    DivisionByZero(String),
    #[error("{func} outside its domain in `{expr}`")]
    DomainError { func: &'static str, expr: String },
    #[error("coordinate {coord} not present in a point of dimension {dim}")]
    DimensionMismatch { coord: Coord, dim: usize },
}

impl ScalarExpr {
    pub fn from_node(node: Node) -> Self {
        ScalarExpr(Arc::new(node))
    }

    pub fn node(&self) -> &Node {
        &self.0
    }

    pub fn num(v: f64) -> Self {
        Self::from_node(Node::Num(v))
    }

    pub fn zero() -> Self {
        Self::num(0.0)
    }

    pub fn one() -> Self {
        Self::num(1.0)
    }

    pub fn var(c: Coord) -> Self {
        Self::from_node(Node::Var(c))
    }

    pub fn x() -> Self {
        Self::var(Coord::X)
    }

    pub fn z(k: usize) -> Self {
        Self::var(Coord::z(k))
    }

    /// Literal value, if this node is a number.
    pub fn as_num(&self) -> Option<f64> {
        match *self.0 {
            Node::Num(v) => Some(v),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.as_num() == Some(0.0)
    }

    pub fn is_one(&self) -> bool {
        self.as_num() == Some(1.0)
    }

    fn unary(op: UnaryOp, e: ScalarExpr) -> Self {
        if let Some(v) = e.as_num() {
            let folded = match op {
                UnaryOp::Neg => Some(-v),
                UnaryOp::Sin => Some(v.sin()),
                UnaryOp::Cos => Some(v.cos()),
                UnaryOp::Exp => Some(v.exp()),
                UnaryOp::Log if v > 0.0 => Some(v.ln()),
                UnaryOp::Sqrt if v >= 0.0 => Some(v.sqrt()),
                _ => None,
            };
            if let Some(r) = folded {
                return Self::num(r);
            }
        }
        if op == UnaryOp::Neg {
            if let Node::Unary(UnaryOp::Neg, inner) = e.node() {
                return inner.clone();
            }
        }
        Self::from_node(Node::Unary(op, e))
    }

    pub fn sin(&self) -> Self {
        Self::unary(UnaryOp::Sin, self.clone())
    }

    pub fn cos(&self) -> Self {
        Self::unary(UnaryOp::Cos, self.clone())
    }

    pub fn exp(&self) -> Self {
        Self::unary(UnaryOp::Exp, self.clone())
    }

    pub fn ln(&self) -> Self {
        Self::unary(UnaryOp::Log, self.clone())
    }

    pub fn sqrt(&self) -> Self {
        Self::unary(UnaryOp::Sqrt, self.clone())
    }

    pub fn powi(&self, n: i32) -> Self {
        match n {
            0 => return Self::one(),
            1 => return self.clone(),
            _ => {}
        }
        if let Some(v) = self.as_num() {
            if v != 0.0 || n > 0 {
                return Self::num(v.powi(n));
            }
        }
        Self::from_node(Node::Powi(self.clone(), n))
    }

    fn binary(op: BinaryOp, a: ScalarExpr, b: ScalarExpr) -> Self {
        if let (Some(u), Some(v)) = (a.as_num(), b.as_num()) {
            match op {
                BinaryOp::Add => return Self::num(u + v),
                BinaryOp::Sub => return Self::num(u - v),
                BinaryOp::Mul => return Self::num(u * v),
                BinaryOp::Div if v != 0.0 => return Self::num(u / v),
                BinaryOp::Div => {}
            }
        }
        match op {
            BinaryOp::Add => {
                if a.is_zero() {
                    return b;
                }
                if b.is_zero() {
                    return a;
                }
            }
            BinaryOp::Sub => {
                if b.is_zero() {
                    return a;
                }
                if a.is_zero() {
                    return Self::unary(UnaryOp::Neg, b);
                }
            }
            BinaryOp::Mul => {
                if a.is_zero() || b.is_zero() {
                    return Self::zero();
                }
                if a.is_one() {
                    return b;
                }
                if b.is_one() {
                    return a;
                }
                if a.as_num() == Some(-1.0) {
                    return Self::unary(UnaryOp::Neg, b);
                }
                if b.as_num() == Some(-1.0) {
                    return Self::unary(UnaryOp::Neg, a);
                }
            }
            BinaryOp::Div => {
                if a.is_zero() {
                    return Self::zero();
                }
                if b.is_one() {
                    return a;
                }
            }
        }
        Self::from_node(Node::Binary(op, a, b))
    }

    /// Evaluate at a point `p = (x, z1, ..., zn)`.
    pub fn eval(&self, p: &[f64]) -> Result<f64, EvalError> {
        match self.node() {
            Node::Num(v) => Ok(*v),
            Node::Var(c) => p.get(c.0).copied().ok_or(EvalError::DimensionMismatch {
                coord: *c,
                dim: p.len(),
            }),
            Node::Unary(op, e) => {
                let v = e.eval(p)?;
                match op {
                    UnaryOp::Neg => Ok(-v),
                    UnaryOp::Sin => Ok(v.sin()),
                    UnaryOp::Cos => Ok(v.cos()),
                    UnaryOp::Exp => Ok(v.exp()),
                    UnaryOp::Log if v > 0.0 => Ok(v.ln()),
                    UnaryOp::Sqrt if v >= 0.0 => Ok(v.sqrt()),
                    UnaryOp::Log | UnaryOp::Sqrt => Err(EvalError::DomainError {
                        func: op.name(),
                        expr: self.to_string(),
                    }),
                }
            }
            Node::Binary(op, a, b) => {
                let u = a.eval(p)?;
                let v = b.eval(p)?;
                match op {
                    BinaryOp::Add => Ok(u + v),
                    BinaryOp::Sub => Ok(u - v),
                    BinaryOp::Mul => Ok(u * v),
                    BinaryOp::Div if v == 0.0 => Err(EvalError::DivisionByZero(self.to_string())),
                    BinaryOp::Div => Ok(u / v),
                }
            }
            Node::Powi(e, n) => {
                let v = e.eval(p)?;
                if v == 0.0 && *n < 0 {
                    return Err(EvalError::DivisionByZero(self.to_string()));
                }
                Ok(v.powi(*n))
            }
        }
    }

    /// Largest coordinate index referenced, or `None` for constants.
    pub fn max_coord(&self) -> Option<usize> {
        match self.node() {
            Node::Num(_) => None,
            Node::Var(c) => Some(c.0),
            Node::Unary(_, e) | Node::Powi(e, _) => e.max_coord(),
            Node::Binary(_, a, b) => match (a.max_coord(), b.max_coord()) {
                (Some(i), Some(j)) => Some(i.max(j)),
                (i, j) => i.or(j),
            },
        }
    }

    /// Smallest `k <= max_order` such that the `k`-th derivative along
    /// `along` is nonzero at `at` (`|value| > 1e-9`). `None` if all vanish.
    pub fn vanishing_order(
        &self,
        along: Coord,
        at: &[f64],
        max_order: u32,
    ) -> Result<Option<u32>, EvalError> {
        let mut d = self.clone();
        for k in 0..=max_order {
            if d.eval(at)?.abs() > VANISHING_TOL {
                return Ok(Some(k));
            }
            d = d.diff(along);
        }
        Ok(None)
    }

    fn precedence(&self) -> u8 {
        match self.node() {
            Node::Num(_) | Node::Var(_) => 5,
            Node::Unary(UnaryOp::Neg, _) => 3,
            Node::Unary(..) => 5,
            Node::Binary(op, ..) => op.precedence(),
            Node::Powi(..) => 4,
        }
    }
}

/// Absolute threshold below which a derivative value counts as vanishing.
pub const VANISHING_TOL: f64 = 1e-9;

fn write_num(f: &mut fmt::Formatter<'_>, v: f64) -> fmt::Result {
    if v.is_nan() {
        return write!(f, "(0/0)");
    }
    if v.is_infinite() {
        return write!(f, "{}", if v > 0.0 { "1e999" } else { "(-1e999)" });
    }
    let a = v.abs();
    let body = if a != 0.0 && !(1e-4..1e15).contains(&a) {
        format!("{a:e}")
    } else {
        format!("{a}")
    };
    if v < 0.0 || (v == 0.0 && v.is_sign_negative()) {
        write!(f, "(-{body})")
    } else {
        write!(f, "{body}")
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &ScalarExpr, parens: bool) -> fmt::Result {
    if parens {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.node() {
            Node::Num(v) => write_num(f, *v),
            Node::Var(c) => write!(f, "{c}"),
            Node::Unary(UnaryOp::Neg, e) => {
                write!(f, "-")?;
                write_child(f, e, e.precedence() < 3)
            }
            Node::Unary(op, e) => write!(f, "{}({e})", op.name()),
            Node::Binary(op, a, b) => {
                let p = op.precedence();
                write_child(f, a, a.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_child(f, b, b.precedence() <= p)
            }
            Node::Powi(e, n) => {
                write_child(f, e, e.precedence() < 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
        }
    }
}

impl fmt::Debug for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ScalarExpr({self})")
    }
}

macro_rules! impl_binary_ops {
    ($($trait:ident, $method:ident, $op:expr);*) => {
        $(
            impl $trait<ScalarExpr> for ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, self, rhs)
                }
            }
            impl $trait<&ScalarExpr> for &ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: &ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, self.clone(), rhs.clone())
                }
            }
            impl $trait<&ScalarExpr> for ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: &ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, self, rhs.clone())
                }
            }
            impl $trait<ScalarExpr> for &ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, self.clone(), rhs)
                }
            }
            impl $trait<f64> for ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: f64) -> ScalarExpr {
                    ScalarExpr::binary($op, self, ScalarExpr::num(rhs))
                }
            }
            impl $trait<f64> for &ScalarExpr {
                type Output = ScalarExpr;
                fn $method(self, rhs: f64) -> ScalarExpr {
                    ScalarExpr::binary($op, self.clone(), ScalarExpr::num(rhs))
                }
            }
            impl $trait<ScalarExpr> for f64 {
                type Output = ScalarExpr;
                fn $method(self, rhs: ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, ScalarExpr::num(self), rhs)
                }
            }
            impl $trait<&ScalarExpr> for f64 {
                type Output = ScalarExpr;
                fn $method(self, rhs: &ScalarExpr) -> ScalarExpr {
                    ScalarExpr::binary($op, ScalarExpr::num(self), rhs.clone())
                }
            }
        )*
    };
}

impl_binary_ops!(
    Add, add, BinaryOp::Add;
    Sub, sub, BinaryOp::Sub;
    Mul, mul, BinaryOp::Mul;
    Div, div, BinaryOp::Div
);

impl Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::unary(UnaryOp::Neg, self)
    }
}

impl Neg for &ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> ScalarExpr {
        ScalarExpr::unary(UnaryOp::Neg, self.clone())
    }
}

impl From<f64> for ScalarExpr {
    fn from(v: f64) -> Self {
        ScalarExpr::num(v)
    }
}

impl std::iter::Sum for ScalarExpr {
    fn sum<I: Iterator<Item = ScalarExpr>>(iter: I) -> Self {
        iter.fold(ScalarExpr::zero(), |acc, e| acc + e)
    }
}
