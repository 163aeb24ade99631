//! Operation counting: a scalar that tallies every elementary operation it
//! performs, giving a machine-independent `ops(f)`.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::Result;
use crate::scalar::{BinaryOp, Scalar, UnaryOp};
use crate::tape::{OpKind, Tape, Var};

thread_local! {
    static COUNTS: RefCell<OpCounter> = RefCell::new(OpCounter::default());
}

/// Per-kind operation tallies.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpCounter {
    counts: BTreeMap<OpKind, u64>,
}

impl OpCounter {
    pub fn get(&self, kind: OpKind) -> u64 {
        self.counts.get(&kind).copied().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (OpKind, u64)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    fn bump(&mut self, kind: OpKind) {
        *self.counts.entry(kind).or_insert(0) += 1;
    }
}

impl fmt::Display for OpCounter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .counts
            .iter()
            .map(|(k, v)| format!("{}:{v}", k.name()))
            .collect();
        write!(f, "{{{}}}", parts.join(", "))
    }
}

fn bump(kind: OpKind) {
    COUNTS.with(|c| c.borrow_mut().bump(kind));
}

fn take() -> OpCounter {
    COUNTS.with(|c| std::mem::take(&mut *c.borrow_mut()))
}

/// A real that records each operation into a thread-local counter.
///
/// Operations whose operands are all constants are folded and not counted;
/// a product with exactly one constant operand counts as [`OpKind::Scale`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Counted {
    value: f64,
    constant: bool,
}

impl Counted {
    pub fn var(value: f64) -> Self {
        Counted {
            value,
            constant: false,
        }
    }

    fn binary(self, rhs: Self, kind: OpKind, value: f64) -> Self {
        let constant = self.constant && rhs.constant;
        if !constant {
            let kind = if kind == OpKind::Mul && (self.constant || rhs.constant) {
                OpKind::Scale
            } else {
                kind
            };
            bump(kind);
        }
        Counted { value, constant }
    }
}

impl Add for Counted {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Add, self.value + rhs.value)
    }
}

impl Sub for Counted {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Sub, self.value - rhs.value)
    }
}

impl Mul for Counted {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, OpKind::Mul, self.value * rhs.value)
    }
}

impl Neg for Counted {
    type Output = Self;

    fn neg(self) -> Self {
        if !self.constant {
            bump(OpKind::Neg);
        }
        Counted {
            value: -self.value,
            constant: self.constant,
        }
    }
}

impl Scalar for Counted {
    fn constant(c: f64) -> Self {
        Counted {
            value: c,
            constant: true,
        }
    }

    fn value(&self) -> f64 {
        self.value
    }

    fn unary(&self, op: UnaryOp) -> Result<Self> {
        let value = op.eval(self.value)?;
        if !self.constant {
            bump(op.into());
        }
        Ok(Counted {
            value,
            constant: self.constant,
        })
    }

    fn try_div(&self, rhs: &Self) -> Result<Self> {
        let value = self.value.try_div(&rhs.value)?;
        Ok(self.binary(*rhs, BinaryOp::Div.into(), value))
    }

    fn atan2(&self, x: &Self) -> Result<Self> {
        let value = Scalar::atan2(&self.value, &x.value)?;
        Ok(self.binary(*x, BinaryOp::Atan2.into(), value))
    }
}

/// Evaluates `f` once on counting scalars and returns the tallies.
pub fn count_ops<F>(f: F, x: &[f64]) -> Result<OpCounter>
where
    F: FnOnce(&[Counted]) -> Result<Counted>,
{
    take();
    let inputs: Vec<Counted> = x.iter().map(|&v| Counted::var(v)).collect();
    let out = f(&inputs);
    let counts = take();
    out.map(|_| counts)
}

/// Operation count of one reverse-mode gradient: the recording (primal
/// operations plus local partials) and the adjoint sweep, all performed in
/// counting arithmetic.
pub fn count_reverse_ops<F>(f: F, x: &[f64]) -> Result<OpCounter>
where
    F: for<'t> Fn(&[Var<'t, Counted>]) -> Result<Var<'t, Counted>>,
{
    take();
    let tape = Tape::new();
    let vars: Vec<Var<'_, Counted>> = x.iter().map(|&v| tape.var(Counted::var(v))).collect();
    let out = f(&vars).and_then(|y| tape.reverse_sweep(&y, Counted::constant(1.0)));
    let counts = take();
    out.map(|_| counts)
}
