//! Scalar symbolic expressions in the chart variables `x1..xn`.
//!
//! Expressions are immutable trees. Constructors fold constants and absorb
//! zeros and ones; nothing beyond that is simplified. The parser returns the
//! raw tree for the input text, so `parse(print(parse(t))) == parse(t)` holds
//! structurally.

mod parse;
mod poly;

pub use parse::parse_expr;
pub use poly::Polynomial;

use std::fmt;
use std::ops;

use crate::error::{DomainKind, Error, Result};

/// Elementary functions accepted by the grammar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
        }
    }

    pub fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> Option<f64> {
        match self {
            Func::Sin => Some(v.sin()),
            Func::Cos => Some(v.cos()),
            Func::Exp => Some(v.exp()),
            Func::Log if v > 0.0 => Some(v.ln()),
            Func::Sqrt if v >= 0.0 => Some(v.sqrt()),
            Func::Log | Func::Sqrt => None,
        }
    }
}

/// A scalar expression. Variables are stored zero-based: `Var(0)` is `x1`.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalarExpr {
    Const(f64),
    Var(usize),
    Neg(Box<ScalarExpr>),
    Func(Func, Box<ScalarExpr>),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
    Div(Box<ScalarExpr>, Box<ScalarExpr>),
    Pow(Box<ScalarExpr>, u32),
}

use ScalarExpr as E;

impl ScalarExpr {
    pub fn zero() -> Self {
        E::Const(0.0)
    }

    pub fn one() -> Self {
        E::Const(1.0)
    }

    pub fn constant(c: f64) -> Self {
        E::Const(c)
    }

    /// Zero-based variable index.
    pub fn var(i: usize) -> Self {
        E::Var(i)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            E::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_const_zero(&self) -> bool {
        matches!(self, E::Const(c) if *c == 0.0)
    }

    fn is_const_one(&self) -> bool {
        matches!(self, E::Const(c) if *c == 1.0)
    }

    // Folding constructors.

    pub fn neg(a: Self) -> Self {
        match a {
            E::Const(c) => E::Const(-c),
            E::Neg(inner) => *inner,
            a => E::Neg(Box::new(a)),
        }
    }

    pub fn func(f: Func, a: Self) -> Self {
        if let E::Const(c) = a {
            if let Some(v) = f.apply(c) {
                return E::Const(v);
            }
        }
        E::Func(f, Box::new(a))
    }

    pub fn add(a: Self, b: Self) -> Self {
        match (a, b) {
            (E::Const(x), E::Const(y)) => E::Const(x + y),
            (a, b) if a.is_const_zero() => b,
            (a, b) if b.is_const_zero() => a,
            (a, E::Neg(b)) => Self::sub(a, *b),
            (a, b) => E::Add(Box::new(a), Box::new(b)),
        }
    }

    pub fn sub(a: Self, b: Self) -> Self {
        match (a, b) {
            (E::Const(x), E::Const(y)) => E::Const(x - y),
            (a, b) if b.is_const_zero() => a,
            (a, b) if a.is_const_zero() => Self::neg(b),
            (a, b) if a == b => E::zero(),
            (a, E::Neg(b)) => Self::add(a, *b),
            (a, b) => E::Sub(Box::new(a), Box::new(b)),
        }
    }

    pub fn mul(a: Self, b: Self) -> Self {
        match (a, b) {
            (E::Const(x), E::Const(y)) => E::Const(x * y),
            (a, b) if a.is_const_zero() || b.is_const_zero() => E::zero(),
            (a, b) if a.is_const_one() => b,
            (a, b) if b.is_const_one() => a,
            (E::Const(-1.0), b) => Self::neg(b),
            (a, E::Const(-1.0)) => Self::neg(a),
            (a, b) => E::Mul(Box::new(a), Box::new(b)),
        }
    }

    pub fn div(a: Self, b: Self) -> Self {
        match (a, b) {
            (E::Const(x), E::Const(y)) if y != 0.0 => E::Const(x / y),
            (a, b) if a.is_const_zero() && !b.is_const_zero() => E::zero(),
            (a, b) if b.is_const_one() => a,
            (a, b) => E::Div(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(a: Self, n: u32) -> Self {
        match (a, n) {
            (_, 0) => E::one(),
            (a, 1) => a,
            (E::Const(c), n) => E::Const(c.powi(n as i32)),
            (a, n) => E::Pow(Box::new(a), n),
        }
    }

    /// Rebuild the tree through the folding constructors.
    pub fn fold(&self) -> Self {
        self.map_leaves(&|_| None)
    }

    /// Replace variables by expressions (`None` keeps the variable), folding
    /// on the way back up.
    pub fn substitute(&self, sub: &dyn Fn(usize) -> Option<ScalarExpr>) -> Self {
        self.map_leaves(sub)
    }

    /// Substitute constant values for a set of variables.
    pub fn substitute_values(&self, values: &[(usize, f64)]) -> Self {
        self.substitute(&|i| {
            values
                .iter()
                .find(|(j, _)| *j == i)
                .map(|(_, v)| E::Const(*v))
        })
    }

    fn map_leaves(&self, sub: &dyn Fn(usize) -> Option<ScalarExpr>) -> Self {
        match self {
            E::Const(c) => E::Const(*c),
            E::Var(i) => sub(*i).unwrap_or(E::Var(*i)),
            E::Neg(a) => Self::neg(a.map_leaves(sub)),
            E::Func(f, a) => Self::func(*f, a.map_leaves(sub)),
            E::Add(a, b) => Self::add(a.map_leaves(sub), b.map_leaves(sub)),
            E::Sub(a, b) => Self::sub(a.map_leaves(sub), b.map_leaves(sub)),
            E::Mul(a, b) => Self::mul(a.map_leaves(sub), b.map_leaves(sub)),
            E::Div(a, b) => Self::div(a.map_leaves(sub), b.map_leaves(sub)),
            E::Pow(a, n) => Self::pow(a.map_leaves(sub), *n),
        }
    }

    pub fn depends_on(&self, i: usize) -> bool {
        match self {
            E::Const(_) => false,
            E::Var(j) => *j == i,
            E::Neg(a) | E::Func(_, a) | E::Pow(a, _) => a.depends_on(i),
            E::Add(a, b) | E::Sub(a, b) | E::Mul(a, b) | E::Div(a, b) => {
                a.depends_on(i) || b.depends_on(i)
            }
        }
    }

    /// Largest zero-based variable index appearing in the tree.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            E::Const(_) => None,
            E::Var(j) => Some(*j),
            E::Neg(a) | E::Func(_, a) | E::Pow(a, _) => a.max_var(),
            E::Add(a, b) | E::Sub(a, b) | E::Mul(a, b) | E::Div(a, b) => {
                match (a.max_var(), b.max_var()) {
                    (Some(x), Some(y)) => Some(x.max(y)),
                    (x, y) => x.or(y),
                }
            }
        }
    }

    pub fn check_dimension(&self, n: usize) -> Result<()> {
        match self.max_var() {
            Some(i) if i >= n => Err(Error::VariableOutOfRange { index: i + 1, n }),
            _ => Ok(()),
        }
    }

    /// Exact symbolic partial derivative with respect to the zero-based
    /// variable `i`.
    pub fn diff(&self, i: usize) -> Self {
        if !self.depends_on(i) {
            return E::zero();
        }
        match self {
            E::Const(_) => E::zero(),
            E::Var(j) => {
                if *j == i {
                    E::one()
                } else {
                    E::zero()
                }
            }
            E::Neg(a) => Self::neg(a.diff(i)),
            E::Add(a, b) => Self::add(a.diff(i), b.diff(i)),
            E::Sub(a, b) => Self::sub(a.diff(i), b.diff(i)),
            E::Mul(a, b) => Self::add(
                Self::mul(a.diff(i), (**b).clone()),
                Self::mul((**a).clone(), b.diff(i)),
            ),
            E::Div(a, b) => {
                // (a' b - a b') / b^2
                let num = Self::sub(
                    Self::mul(a.diff(i), (**b).clone()),
                    Self::mul((**a).clone(), b.diff(i)),
                );
                Self::div(num, Self::pow((**b).clone(), 2))
            }
            E::Pow(a, n) => Self::mul(
                Self::mul(E::Const(*n as f64), Self::pow((**a).clone(), n - 1)),
                a.diff(i),
            ),
            E::Func(f, a) => {
                let inner = (**a).clone();
                let outer = match f {
                    Func::Sin => Self::func(Func::Cos, inner),
                    Func::Cos => Self::neg(Self::func(Func::Sin, inner)),
                    Func::Exp => Self::func(Func::Exp, inner),
                    Func::Log => return Self::div(a.diff(i), inner),
                    Func::Sqrt => {
                        return Self::div(
                            a.diff(i),
                            Self::mul(E::Const(2.0), Self::func(Func::Sqrt, inner)),
                        )
                    }
                };
                Self::mul(outer, a.diff(i))
            }
        }
    }

    /// Evaluate at `q` in double precision.
    pub fn eval(&self, q: &[f64]) -> Result<f64> {
        let v = match self {
            E::Const(c) => *c,
            E::Var(j) => *q.get(*j).ok_or(Error::VariableOutOfRange {
                index: j + 1,
                n: q.len(),
            })?,
            E::Neg(a) => -a.eval(q)?,
            E::Add(a, b) => a.eval(q)? + b.eval(q)?,
            E::Sub(a, b) => a.eval(q)? - b.eval(q)?,
            E::Mul(a, b) => a.eval(q)? * b.eval(q)?,
            E::Div(a, b) => {
                let den = b.eval(q)?;
                if den == 0.0 {
                    return Err(self.domain(DomainKind::DivisionByZero));
                }
                a.eval(q)? / den
            }
            E::Pow(a, n) => a.eval(q)?.powi(*n as i32),
            E::Func(f, a) => {
                let v = a.eval(q)?;
                match f.apply(v) {
                    Some(r) => r,
                    None if *f == Func::Log => {
                        return Err(self.domain(DomainKind::LogNonPositive))
                    }
                    None => return Err(self.domain(DomainKind::SqrtNegative)),
                }
            }
        };
        if !v.is_finite() {
            return Err(self.domain(DomainKind::NonFinite));
        }
        Ok(v)
    }

    fn domain(&self, kind: DomainKind) -> Error {
        Error::Domain {
            kind,
            node: self.to_string(),
        }
    }

    /// True when the expression folds to zero, or is a polynomial whose
    /// canonical form has no surviving terms.
    pub fn is_zero(&self) -> bool {
        if self.is_const_zero() {
            return true;
        }
        Polynomial::from_expr(self).is_some_and(|p| p.is_zero())
    }

    /// `Const(0)` if [`Self::is_zero`], otherwise the folded expression.
    pub fn cancel(&self) -> Self {
        if self.is_zero() {
            E::zero()
        } else {
            self.fold()
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            E::Add(..) | E::Sub(..) => 1,
            E::Mul(..) | E::Div(..) => 2,
            E::Pow(..) => 3,
            E::Neg(_) => 4,
            E::Const(c) if *c < 0.0 => 4,
            E::Const(_) | E::Var(_) | E::Func(..) => 5,
        }
    }

    fn write_with(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let paren = self.precedence() < min_prec;
        if paren {
            f.write_str("(")?;
        }
        match self {
            E::Const(c) if *c < 0.0 => write!(f, "-{}", -c)?,
            E::Const(c) => write!(f, "{c}")?,
            E::Var(j) => write!(f, "x{}", j + 1)?,
            E::Neg(a) => {
                f.write_str("-")?;
                a.write_with(f, 4)?;
            }
            E::Func(func, a) => {
                write!(f, "{}(", func.name())?;
                a.write_with(f, 0)?;
                f.write_str(")")?;
            }
            E::Add(a, b) => {
                a.write_with(f, 1)?;
                f.write_str(" + ")?;
                b.write_with(f, 2)?;
            }
            E::Sub(a, b) => {
                a.write_with(f, 1)?;
                f.write_str(" - ")?;
                b.write_with(f, 2)?;
            }
            E::Mul(a, b) => {
                a.write_with(f, 2)?;
                f.write_str("*")?;
                b.write_with(f, 3)?;
            }
            E::Div(a, b) => {
                a.write_with(f, 2)?;
                f.write_str("/")?;
                b.write_with(f, 3)?;
            }
            E::Pow(a, n) => {
                a.write_with(f, 4)?;
                write!(f, "^{n}")?;
            }
        }
        if paren {
            f.write_str(")")?;
        }
        Ok(())
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_with(f, 0)
    }
}

impl From<f64> for ScalarExpr {
    fn from(c: f64) -> Self {
        E::Const(c)
    }
}

impl ops::Add for ScalarExpr {
    type Output = ScalarExpr;
    fn add(self, rhs: Self) -> Self {
        ScalarExpr::add(self, rhs)
    }
}

impl ops::Sub for ScalarExpr {
    type Output = ScalarExpr;
    fn sub(self, rhs: Self) -> Self {
        ScalarExpr::sub(self, rhs)
    }
}

impl ops::Mul for ScalarExpr {
    type Output = ScalarExpr;
    fn mul(self, rhs: Self) -> Self {
        ScalarExpr::mul(self, rhs)
    }
}

impl ops::Div for ScalarExpr {
    type Output = ScalarExpr;
    fn div(self, rhs: Self) -> Self {
        ScalarExpr::div(self, rhs)
    }
}

impl ops::Neg for ScalarExpr {
    type Output = ScalarExpr;
    fn neg(self) -> Self {
        ScalarExpr::neg(self)
    }
}
