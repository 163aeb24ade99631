//! Nested and higher-order differentiation.
//!
//! Two routes are provided:
//!
//! - Statically typed nesting: a tape over dual numbers (`Var<Dual>`) gives
//!   Hessian-vector products by one reverse sweep over a forward-augmented
//!   evaluation ([`hvp`], [`hessian`]).
//! - A dynamically tagged tower, [`Generic`], in which every active
//!   differentiation owns a fresh [`EpsilonTag`]. When two operands carry
//!   different tags, the one with the lower tag is treated as a constant at
//!   the higher level, so perturbations introduced by distinct
//!   differentiations are never conflated ([`derivative`], [`gradient`]).
//!
//! ```
//! use adkit::nest::{derivative, Generic};
//!
//! // d/dx [ x * d/dy (x + y) |_{y=1} ] at x = 1
//! let d = derivative(
//!     |x| {
//!         let inner = derivative(|y| Ok(x.clone() + y), Generic::from(1.0))?;
//!         Ok(x * inner)
//!     },
//!     Generic::from(1.0),
//! )
//! .unwrap();
//! assert_eq!(d.as_real(), Some(1.0));
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::dual::Dual;
use crate::error::{check_len, AdError, Result};
use crate::scalar::{binary_rule, check_finite, unary_rule, BinaryOp, Scalar, UnaryOp};
use crate::tape::{gradient_in, OpKind, Tape, Var};

static NEXT_TAG: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static LIVE_TAGS: RefCell<Vec<EpsilonTag>> = const { RefCell::new(Vec::new()) };
}

/// Identifies one active differentiation. Tags are issued from a global
/// counter, so a later differentiation always has a larger tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EpsilonTag(u64);

impl EpsilonTag {
    pub fn fresh() -> Self {
        EpsilonTag(NEXT_TAG.fetch_add(1, Ordering::Relaxed))
    }

    pub fn generation(self) -> u64 {
        self.0
    }

    fn is_live(self) -> bool {
        LIVE_TAGS.with(|l| l.borrow().contains(&self))
    }
}

/// Marks a tag live for the duration of one differentiation.
struct Scope(EpsilonTag);

impl Scope {
    fn enter() -> Self {
        let tag = EpsilonTag::fresh();
        LIVE_TAGS.with(|l| l.borrow_mut().push(tag));
        Scope(tag)
    }
}

impl Drop for Scope {
    fn drop(&mut self) {
        LIVE_TAGS.with(|l| l.borrow_mut().retain(|t| *t != self.0));
    }
}

/// A scalar that is a plain real, a tagged dual number over a lower-level
/// `Generic`, or a tagged tape variable over a lower-level `Generic`.
///
/// Tags strictly increase from the inside of the tower outward.
#[derive(Clone)]
pub enum Generic {
    Real(f64),
    Dual(Rc<TaggedDual>),
    Var(Rc<TaggedVar>),
}

pub struct TaggedDual {
    pub tag: EpsilonTag,
    pub primal: Generic,
    pub tangent: Generic,
}

pub struct TaggedVar {
    pub tag: EpsilonTag,
    tape: Rc<Tape<Generic>>,
    index: usize,
    pub value: Generic,
}

impl fmt::Debug for Generic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Generic::Real(v) => write!(f, "{v:?}"),
            Generic::Dual(d) => write!(
                f,
                "Dual[{}]({:?}, {:?})",
                d.tag.0, d.primal, d.tangent
            ),
            Generic::Var(v) => write!(f, "Var[{}]#{}({:?})", v.tag.0, v.index, v.value),
        }
    }
}

impl From<f64> for Generic {
    fn from(v: f64) -> Self {
        Generic::Real(v)
    }
}

impl Generic {
    pub fn tag(&self) -> Option<EpsilonTag> {
        match self {
            Generic::Real(_) => None,
            Generic::Dual(d) => Some(d.tag),
            Generic::Var(v) => Some(v.tag),
        }
    }

    pub fn as_real(&self) -> Option<f64> {
        match self {
            Generic::Real(v) => Some(*v),
            _ => None,
        }
    }

    /// A tagged dual `primal + tangent e_tag`.
    pub fn dual(tag: EpsilonTag, primal: Generic, tangent: Generic) -> Self {
        Generic::Dual(Rc::new(TaggedDual {
            tag,
            primal,
            tangent,
        }))
    }

    fn zero() -> Self {
        Generic::Real(0.0)
    }

    /// Primal and tangent with respect to `tag`. Anything below `tag` is a
    /// constant there.
    fn split(&self, tag: EpsilonTag) -> (Generic, Generic) {
        match self {
            Generic::Dual(d) if d.tag == tag => (d.primal.clone(), d.tangent.clone()),
            _ => (self.clone(), Generic::zero()),
        }
    }

    /// The value one level below `tag`, stripping a tape variable at `tag`.
    fn below(&self, tag: EpsilonTag) -> Generic {
        match self {
            Generic::Var(v) if v.tag == tag => v.value.clone(),
            _ => self.clone(),
        }
    }

    fn var_at(&self, tag: EpsilonTag) -> Option<&TaggedVar> {
        match self {
            Generic::Var(v) if v.tag == tag => Some(v),
            _ => None,
        }
    }

    fn binary(&self, rhs: &Generic, op: BinaryOp) -> Result<Generic> {
        let tag = match self.tag().max(rhs.tag()) {
            None => {
                let (a, b) = (self.value(), rhs.value());
                let v = match op {
                    BinaryOp::Add => a + b,
                    BinaryOp::Sub => a - b,
                    BinaryOp::Mul => a * b,
                    BinaryOp::Div => a.try_div(&b)?,
                    BinaryOp::Atan2 => Scalar::atan2(&a, &b)?,
                };
                return Ok(Generic::Real(v));
            }
            Some(t) => t,
        };
        let lead = if self.tag() == Some(tag) { self } else { rhs };
        match lead {
            Generic::Dual(_) => {
                if self.var_at(tag).is_some() || rhs.var_at(tag).is_some() {
                    return Err(confusion(tag, "tag shared by a dual and a tape variable"));
                }
                let (ap, at) = self.split(tag);
                let (bp, bt) = rhs.split(tag);
                let (primal, tangent) = match op {
                    BinaryOp::Add => (ap + bp, at + bt),
                    BinaryOp::Sub => (ap - bp, at - bt),
                    BinaryOp::Mul => (ap.clone() * bp.clone(), ap * bt + at * bp),
                    BinaryOp::Div | BinaryOp::Atan2 => {
                        let (v, da, db) = binary_rule(op, &ap, &bp)?;
                        (v, da * at + db * bt)
                    }
                };
                Ok(Generic::dual(tag, primal, tangent))
            }
            Generic::Var(lead_var) => {
                if matches!(self, Generic::Dual(d) if d.tag == tag)
                    || matches!(rhs, Generic::Dual(d) if d.tag == tag)
                {
                    return Err(confusion(tag, "tag shared by a dual and a tape variable"));
                }
                let (av, bv) = (self.below(tag), rhs.below(tag));
                let (value, pa, pb) = binary_rule(op, &av, &bv)?;
                let mut parents = Vec::with_capacity(2);
                for (operand, p) in [(self, pa), (rhs, pb)] {
                    if let Some(v) = operand.var_at(tag) {
                        if !Rc::ptr_eq(&v.tape, &lead_var.tape) {
                            return Err(AdError::CrossTape {
                                expected: lead_var.tape.id(),
                                found: v.tape.id(),
                            });
                        }
                        if matches!(op, BinaryOp::Div | BinaryOp::Atan2) {
                            check_finite(op.name(), operand.value(), p.value())?;
                        }
                        parents.push((v.index, p));
                    }
                }
                let kind = if op == BinaryOp::Mul && parents.len() == 1 {
                    OpKind::Scale
                } else {
                    op.into()
                };
                let index = lead_var.tape.push(kind, &parents, value.clone());
                Ok(Generic::Var(Rc::new(TaggedVar {
                    tag,
                    tape: lead_var.tape.clone(),
                    index,
                    value,
                })))
            }
            Generic::Real(_) => unreachable!("lead operand carries the top tag"),
        }
    }

    /// Checks that every tag in the tower is live and that tags decrease
    /// strictly going inward.
    fn validate(&self, bound: Option<EpsilonTag>) -> Result<()> {
        let (tag, children): (EpsilonTag, Vec<&Generic>) = match self {
            Generic::Real(_) => return Ok(()),
            Generic::Dual(d) => (d.tag, vec![&d.primal, &d.tangent]),
            Generic::Var(v) => (v.tag, vec![&v.value]),
        };
        if let Some(b) = bound {
            if tag >= b {
                return Err(confusion(tag, "tag nested inside a tag that is not larger"));
            }
        }
        if !tag.is_live() {
            return Err(confusion(tag, "value escaped the differentiation that created it"));
        }
        children.into_iter().try_for_each(|c| c.validate(Some(tag)))
    }
}

fn confusion(tag: EpsilonTag, what: &str) -> AdError {
    AdError::PerturbationConfusion(format!("{what} (tag {})", tag.0))
}

fn total(r: Result<Generic>) -> Generic {
    r.unwrap_or_else(|e| panic!("{e}"))
}

impl Add for Generic {
    type Output = Generic;

    fn add(self, rhs: Generic) -> Generic {
        total(self.binary(&rhs, BinaryOp::Add))
    }
}

impl Sub for Generic {
    type Output = Generic;

    fn sub(self, rhs: Generic) -> Generic {
        total(self.binary(&rhs, BinaryOp::Sub))
    }
}

impl Mul for Generic {
    type Output = Generic;

    fn mul(self, rhs: Generic) -> Generic {
        total(self.binary(&rhs, BinaryOp::Mul))
    }
}

impl Neg for Generic {
    type Output = Generic;

    fn neg(self) -> Generic {
        total(self.unary(UnaryOp::Neg))
    }
}

impl Scalar for Generic {
    fn constant(c: f64) -> Self {
        Generic::Real(c)
    }

    fn value(&self) -> f64 {
        match self {
            Generic::Real(v) => *v,
            Generic::Dual(d) => d.primal.value(),
            Generic::Var(v) => v.value.value(),
        }
    }

    fn unary(&self, op: UnaryOp) -> Result<Self> {
        match self {
            Generic::Real(v) => Ok(Generic::Real(op.eval(*v)?)),
            Generic::Dual(d) => {
                let (v, dv) = unary_rule(op, &d.primal)?;
                Ok(Generic::dual(d.tag, v, dv * d.tangent.clone()))
            }
            Generic::Var(var) => {
                let (value, dv) = unary_rule(op, &var.value)?;
                check_finite(op.name(), var.value.value(), dv.value())?;
                let index = var.tape.push(op.into(), &[(var.index, dv)], value.clone());
                Ok(Generic::Var(Rc::new(TaggedVar {
                    tag: var.tag,
                    tape: var.tape.clone(),
                    index,
                    value,
                })))
            }
        }
    }

    fn try_div(&self, rhs: &Self) -> Result<Self> {
        self.binary(rhs, BinaryOp::Div)
    }

    fn atan2(&self, x: &Self) -> Result<Self> {
        self.binary(x, BinaryOp::Atan2)
    }
}

/// Derivative of a scalar program at `x`: the coefficient of a fresh epsilon
/// in `f(x + 1e)`.
///
/// `f` may close over values from enclosing differentiations and may itself
/// call `derivative`. A value that escapes the differentiation that created
/// it is reported as [`AdError::PerturbationConfusion`] when it reaches a
/// later result.
pub fn derivative<F>(f: F, x: Generic) -> Result<Generic>
where
    F: FnOnce(Generic) -> Result<Generic>,
{
    x.validate(None)?;
    let scope = Scope::enter();
    let tag = scope.0;
    let y = f(Generic::dual(tag, x, Generic::Real(1.0)))?;
    if y.tag().is_some_and(|t| t > tag) {
        return Err(confusion(y.tag().unwrap(), "result carries a tag newer than its differentiation"));
    }
    let (_, tangent) = y.split(tag);
    drop(scope);
    tangent.validate(None)?;
    Ok(tangent)
}

/// Value and gradient of a scalar program over [`Generic`], by reverse mode
/// on a tape tagged with a fresh epsilon.
pub fn gradient<F>(f: F, x: &[Generic]) -> Result<(Generic, Vec<Generic>)>
where
    F: FnOnce(&[Generic]) -> Result<Generic>,
{
    for v in x {
        v.validate(None)?;
    }
    let scope = Scope::enter();
    let tag = scope.0;
    let tape = Rc::new(Tape::<Generic>::new());
    let vars: Vec<Generic> = x
        .iter()
        .map(|v| {
            let index = tape.push_input(v.clone());
            Generic::Var(Rc::new(TaggedVar {
                tag,
                tape: tape.clone(),
                index,
                value: v.clone(),
            }))
        })
        .collect();
    let y = f(&vars)?;
    if y.tag().is_some_and(|t| t > tag) {
        return Err(confusion(y.tag().unwrap(), "result carries a tag newer than its differentiation"));
    }
    let grad = match y.var_at(tag) {
        Some(v) if Rc::ptr_eq(&v.tape, &tape) => tape.sweep_ids(&[(v.index, Generic::Real(1.0))]),
        Some(_) => return Err(confusion(tag, "result recorded on a foreign tape")),
        None => vec![Generic::zero(); x.len()],
    };
    let value = y.below(tag);
    drop(vars);
    drop(scope);
    value.validate(None)?;
    for g in &grad {
        g.validate(None)?;
    }
    Ok((value, grad))
}

/// Hessian-vector product through the tagged tower: a reverse-mode gradient
/// evaluated on inputs that carry the direction `v` as tangents.
pub fn hvp_generic<F>(f: F, x: &[f64], v: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[Generic]) -> Result<Generic>,
{
    check_len(x.len(), v.len())?;
    let scope = Scope::enter();
    let tag = scope.0;
    let inputs: Vec<Generic> = x
        .iter()
        .zip(v)
        .map(|(&xi, &vi)| Generic::dual(tag, Generic::Real(xi), Generic::Real(vi)))
        .collect();
    let (_, grad) = gradient(f, &inputs)?;
    grad.iter()
        .map(|g| {
            let (_, t) = g.split(tag);
            t.as_real()
                .ok_or_else(|| confusion(tag, "Hessian-vector entry is not a plain real"))
        })
        .collect()
}

/// `H_f(x) v` by one reverse sweep over a tape of dual numbers whose
/// tangents are seeded with `v`. Cost is a constant multiple of one
/// evaluation of `f`; the Hessian is never formed.
pub fn hvp<F>(f: F, x: &[f64], v: &[f64]) -> Result<Vec<f64>>
where
    F: for<'t> Fn(&[Var<'t, Dual>]) -> Result<Var<'t, Dual>>,
{
    check_len(x.len(), v.len())?;
    let inputs: Vec<Dual> = x.iter().zip(v).map(|(&a, &b)| Dual::seed(a, b)).collect();
    let (_, grad, _) = gradient_in(f, &inputs)?;
    Ok(grad.into_iter().map(|g| g.tangent).collect())
}

/// Dense Hessian, column `i` being `hvp(f, x, e_i)`. Symmetry is not forced.
pub fn hessian<F>(f: F, x: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: for<'t> Fn(&[Var<'t, Dual>]) -> Result<Var<'t, Dual>>,
{
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut e = vec![0.0; n];
    for i in 0..n {
        e[i] = 1.0;
        let col = hvp(&f, x, &e)?;
        e[i] = 0.0;
        for (row, c) in h.iter_mut().zip(col) {
            row[i] = c;
        }
    }
    Ok(h)
}

/// Largest `|H_ij - H_ji|` relative to `max(1, |H_ij|)`.
pub fn asymmetry(h: &[Vec<f64>]) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..h.len() {
        for j in 0..i {
            let scale = h[i][j].abs().max(h[j][i].abs()).max(1.0);
            worst = worst.max((h[i][j] - h[j][i]).abs() / scale);
        }
    }
    worst
}
