//! The scalar abstraction that differentiable programs are written against.
//!
//! A program written once over `S: Scalar` runs on plain `f64`, on
//! [`Dual`](crate::dual::Dual) numbers, on tape variables
//! ([`Var`](crate::tape::Var)), on the tagged tower
//! [`Generic`](crate::nest::Generic), and on the operation-counting
//! [`Counted`](crate::bench::Counted) scalar.
//!
//! Addition, subtraction, multiplication and negation are total and go through
//! the std operator traits. Every other elementary function returns a
//! `Result` so that out-of-domain arguments surface as [`AdError::Domain`].

use std::fmt::Debug;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{domain, AdError, Result};

/// Unary elementary operations with known derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Recip,
    Ln,
    Exp,
    Sin,
    Cos,
    Sqrt,
    Tanh,
}

impl UnaryOp {
    pub fn name(self) -> &'static str {
        match self {
            UnaryOp::Neg => "neg",
            UnaryOp::Recip => "recip",
            UnaryOp::Ln => "ln",
            UnaryOp::Exp => "exp",
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Tanh => "tanh",
        }
    }

    /// Evaluates the operation on a plain real, checking its domain.
    ///
    /// The functions themselves are the platform's libm primitives.
    pub fn eval(self, x: f64) -> Result<f64> {
        match self {
            UnaryOp::Neg => Ok(-x),
            UnaryOp::Recip if x == 0.0 || x.is_nan() => Err(domain("recip", x)),
            UnaryOp::Recip => Ok(1.0 / x),
            // ln(0) = -inf is rejected as well: traces must stay finite.
            UnaryOp::Ln if !(x > 0.0) => Err(domain("ln", x)),
            UnaryOp::Ln => Ok(x.ln()),
            UnaryOp::Exp => Ok(x.exp()),
            UnaryOp::Sin => Ok(x.sin()),
            UnaryOp::Cos => Ok(x.cos()),
            UnaryOp::Sqrt if !(x >= 0.0) => Err(domain("sqrt", x)),
            UnaryOp::Sqrt => Ok(x.sqrt()),
            UnaryOp::Tanh => Ok(x.tanh()),
        }
    }
}

/// Binary elementary operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    /// `atan2(y, x)` with the left operand as `y`.
    Atan2,
}

impl BinaryOp {
    pub fn name(self) -> &'static str {
        match self {
            BinaryOp::Add => "add",
            BinaryOp::Sub => "sub",
            BinaryOp::Mul => "mul",
            BinaryOp::Div => "div",
            BinaryOp::Atan2 => "atan2",
        }
    }
}

/// A real-like number that differentiable programs compute with.
pub trait Scalar:
    Clone + Debug + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self>
{
    /// Lifts a plain real. The result carries no derivative information.
    fn constant(c: f64) -> Self;

    /// The plain real value at the bottom of this number.
    fn value(&self) -> f64;

    fn unary(&self, op: UnaryOp) -> Result<Self>;

    /// Division; a divisor whose value is zero is a domain error.
    fn try_div(&self, rhs: &Self) -> Result<Self>;

    /// `atan2(self, x)`, i.e. the angle of the point `(x, self)`.
    fn atan2(&self, x: &Self) -> Result<Self>;

    fn ln(&self) -> Result<Self> {
        self.unary(UnaryOp::Ln)
    }

    fn exp(&self) -> Result<Self> {
        self.unary(UnaryOp::Exp)
    }

    fn sin(&self) -> Result<Self> {
        self.unary(UnaryOp::Sin)
    }

    fn cos(&self) -> Result<Self> {
        self.unary(UnaryOp::Cos)
    }

    fn sqrt(&self) -> Result<Self> {
        self.unary(UnaryOp::Sqrt)
    }

    fn tanh(&self) -> Result<Self> {
        self.unary(UnaryOp::Tanh)
    }

    fn recip(&self) -> Result<Self> {
        self.unary(UnaryOp::Recip)
    }

    fn square(&self) -> Self {
        self.clone() * self.clone()
    }

    /// `c * self`, with the constant on the left.
    fn scale(&self, c: f64) -> Self {
        Self::constant(c) * self.clone()
    }

    /// `self + c * x`. Tapes record this as one node instead of two.
    fn add_scaled(&self, x: &Self, c: f64) -> Self {
        self.clone() + x.scale(c)
    }
}

impl Scalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }

    fn value(&self) -> f64 {
        *self
    }

    fn unary(&self, op: UnaryOp) -> Result<Self> {
        op.eval(*self)
    }

    fn try_div(&self, rhs: &Self) -> Result<Self> {
        if *rhs == 0.0 || rhs.is_nan() {
            return Err(domain("div", *rhs));
        }
        Ok(self / rhs)
    }

    fn atan2(&self, x: &Self) -> Result<Self> {
        Ok(f64::atan2(*self, *x))
    }
}

/// Value and derivative of a unary elementary function at `x`, both computed
/// in `S`. Carriers one level up use this to propagate `f(v + v'e) = f(v) + f'(v)v'e`.
pub(crate) fn unary_rule<S: Scalar>(op: UnaryOp, x: &S) -> Result<(S, S)> {
    match op {
        UnaryOp::Neg => Ok((-x.clone(), S::constant(-1.0))),
        UnaryOp::Recip => {
            let r = x.recip()?;
            let d = -r.square();
            Ok((r, d))
        }
        UnaryOp::Ln => Ok((x.ln()?, x.recip()?)),
        UnaryOp::Exp => {
            let e = x.exp()?;
            Ok((e.clone(), e))
        }
        UnaryOp::Sin => Ok((x.sin()?, x.cos()?)),
        UnaryOp::Cos => Ok((x.cos()?, -x.sin()?)),
        UnaryOp::Sqrt => {
            let s = x.sqrt()?;
            if s.value() == 0.0 {
                // no one-sided subgradient convention
                return Err(domain("sqrt", x.value()));
            }
            let d = s.scale(2.0).recip()?;
            Ok((s, d))
        }
        UnaryOp::Tanh => {
            let t = x.tanh()?;
            let d = S::constant(1.0) - t.square();
            Ok((t, d))
        }
    }
}

/// Value and the two partials of a binary elementary operation at `(a, b)`.
pub(crate) fn binary_rule<S: Scalar>(op: BinaryOp, a: &S, b: &S) -> Result<(S, S, S)> {
    match op {
        BinaryOp::Add => Ok((a.clone() + b.clone(), S::constant(1.0), S::constant(1.0))),
        BinaryOp::Sub => Ok((a.clone() - b.clone(), S::constant(1.0), S::constant(-1.0))),
        BinaryOp::Mul => Ok((a.clone() * b.clone(), b.clone(), a.clone())),
        BinaryOp::Div => {
            let q = a.try_div(b)?;
            let da = b.recip()?;
            let db = -(q.clone() * da.clone());
            Ok((q, da, db))
        }
        BinaryOp::Atan2 => {
            let r2 = a.square() + b.square();
            if r2.value() == 0.0 {
                return Err(domain("atan2", 0.0));
            }
            let v = a.atan2(b)?;
            let da = b.try_div(&r2)?;
            let db = -a.try_div(&r2)?;
            Ok((v, da, db))
        }
    }
}

pub(crate) fn check_finite(op: &'static str, arg: f64, partial: f64) -> Result<()> {
    if partial.is_finite() {
        Ok(())
    } else {
        Err(AdError::Domain { op, arg })
    }
}
