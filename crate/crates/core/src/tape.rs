//! Reverse-mode differentiation on an append-only tape.
//!
//! Evaluating a program on [`Var`]s records every elementary operation as a
//! [`TapeNode`] holding its value and the local partials with respect to its
//! (at most two) parents. The partials are computed at record time, so the
//! reverse sweep is a single pass in decreasing index order:
//!
//! ```text
//! adjoint[parent] += adjoint[node] * partial
//! ```
//!
//! After a sweep seeded with `1` at output `y`, the adjoint of input `x_i`
//! is `dy/dx_i`. Adjoint slots are reset before every sweep, so one recorded
//! tape supports as many sweeps as there are outputs.
//!
//! ```
//! use adkit::tape::Tape;
//! use adkit::Scalar;
//!
//! let tape = Tape::new();
//! let x1 = tape.var(2.0);
//! let x2 = tape.var(5.0);
//! let y = x1.ln().unwrap() + x1 * x2 - x2.sin().unwrap();
//! let grad = tape.reverse_sweep(&y, 1.0).unwrap();
//! assert_eq!(grad[0], 5.5);
//! assert!((grad[1] - 1.716).abs() < 1e-3);
//! ```

use std::any::Any;
use std::cell::{Cell, RefCell};
use std::fmt::{self, Write as _};
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{check_len, AdError, Result};
use crate::scalar::{binary_rule, check_finite, unary_rule, BinaryOp, Scalar, UnaryOp};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Elementary operation kinds, shared by tape nodes and operation counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpKind {
    Input,
    Add,
    Sub,
    Mul,
    /// Multiplication where one operand is a constant.
    Scale,
    /// `a + c * b` for a constant `c`.
    AddScaled,
    Div,
    Neg,
    Recip,
    Ln,
    Exp,
    Sin,
    Cos,
    Sqrt,
    Tanh,
    Atan2,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
            OpKind::Scale => "scale",
            OpKind::AddScaled => "axpy",
            OpKind::Div => "div",
            OpKind::Neg => "neg",
            OpKind::Recip => "recip",
            OpKind::Ln => "ln",
            OpKind::Exp => "exp",
            OpKind::Sin => "sin",
            OpKind::Cos => "cos",
            OpKind::Sqrt => "sqrt",
            OpKind::Tanh => "tanh",
            OpKind::Atan2 => "atan2",
        }
    }

    pub fn is_input(self) -> bool {
        self == OpKind::Input
    }
}

impl From<UnaryOp> for OpKind {
    fn from(op: UnaryOp) -> Self {
        match op {
            UnaryOp::Neg => OpKind::Neg,
            UnaryOp::Recip => OpKind::Recip,
            UnaryOp::Ln => OpKind::Ln,
            UnaryOp::Exp => OpKind::Exp,
            UnaryOp::Sin => OpKind::Sin,
            UnaryOp::Cos => OpKind::Cos,
            UnaryOp::Sqrt => OpKind::Sqrt,
            UnaryOp::Tanh => OpKind::Tanh,
        }
    }
}

impl From<BinaryOp> for OpKind {
    fn from(op: BinaryOp) -> Self {
        match op {
            BinaryOp::Add => OpKind::Add,
            BinaryOp::Sub => OpKind::Sub,
            BinaryOp::Mul => OpKind::Mul,
            BinaryOp::Div => OpKind::Div,
            BinaryOp::Atan2 => OpKind::Atan2,
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One recorded operation. Parents always have smaller indices.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeNode<T = f64> {
    pub op: OpKind,
    parents: [u32; 2],
    arity: u8,
    partials: [T; 2],
    pub value: T,
}

impl<T> TapeNode<T> {
    pub fn parents(&self) -> &[u32] {
        &self.parents[..self.arity as usize]
    }

    pub fn partials(&self) -> &[T] {
        &self.partials[..self.arity as usize]
    }
}

/// Node count and sweep count of a tape, for cost accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeStats {
    pub nodes: usize,
    pub inputs: usize,
    pub sweeps: usize,
}

struct Buffers<T> {
    nodes: Vec<TapeNode<T>>,
    inputs: Vec<u32>,
    adjoints: Vec<T>,
}

impl<T> Default for Buffers<T> {
    fn default() -> Self {
        Buffers {
            nodes: Vec::new(),
            inputs: Vec::new(),
            adjoints: Vec::new(),
        }
    }
}

thread_local! {
    // one spare set of buffers per element type
    static POOL: RefCell<Vec<Box<dyn Any>>> = const { RefCell::new(Vec::new()) };
}

/// Append-only evaluation trace (Wengert list).
///
/// A tape is confined to one thread; variables borrow it and cannot outlive it.
pub struct Tape<T = f64> {
    id: u64,
    nodes: RefCell<Vec<TapeNode<T>>>,
    inputs: RefCell<Vec<u32>>,
    adjoints: RefCell<Vec<T>>,
    sweeps: Cell<usize>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("id", &self.id)
            .field("nodes", &self.nodes.borrow().len())
            .field("inputs", &self.inputs.borrow().len())
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(nodes: usize) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::with_capacity(nodes)),
            inputs: RefCell::new(Vec::new()),
            adjoints: RefCell::new(Vec::new()),
            sweeps: Cell::new(0),
        }
    }

    /// A tape built on buffers left by an earlier [`Tape::recycle`] on this
    /// thread, so repeated gradients do not reallocate.
    pub fn recycled() -> Self
    where
        T: 'static,
    {
        let b = POOL.with(|p| {
            p.borrow_mut()
                .iter_mut()
                .find_map(|slot| slot.downcast_mut::<Buffers<T>>())
                .map(std::mem::take)
                .unwrap_or_default()
        });
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(b.nodes),
            inputs: RefCell::new(b.inputs),
            adjoints: RefCell::new(b.adjoints),
            sweeps: Cell::new(0),
        }
    }

    /// Returns the buffers to the per-thread pool used by [`Tape::recycled`].
    pub fn recycle(self)
    where
        T: 'static,
    {
        let mut b = Buffers {
            nodes: self.nodes.into_inner(),
            inputs: self.inputs.into_inner(),
            adjoints: self.adjoints.into_inner(),
        };
        b.nodes.clear();
        b.inputs.clear();
        b.adjoints.clear();
        POOL.with(|p| {
            let mut pool = p.borrow_mut();
            match pool.iter_mut().find_map(|slot| slot.downcast_mut::<Buffers<T>>()) {
                // keep whichever set has more room
                Some(slot) if slot.nodes.capacity() >= b.nodes.capacity() => {}
                Some(slot) => *slot = b,
                None => pool.push(Box::new(b)),
            }
        });
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> TapeStats {
        TapeStats {
            nodes: self.len(),
            inputs: self.inputs.borrow().len(),
            sweeps: self.sweeps.get(),
        }
    }

    /// Registers an independent variable.
    pub fn var(&self, value: T) -> Var<'_, T> {
        let index = self.push_input(value.clone());
        Var {
            tape: Some(self),
            index: index as u32,
            value,
        }
    }

    /// Appends a node computed outside the operator overloads.
    ///
    /// `inputs` and `partials` pair up; constants (variables without a tape)
    /// are dropped together with their partial.
    pub fn record(
        &self,
        op: OpKind,
        inputs: &[&Var<'_, T>],
        value: T,
        partials: &[T],
    ) -> Result<Var<'_, T>> {
        check_len(inputs.len(), partials.len())?;
        if inputs.len() > 2 {
            return Err(AdError::InvalidArgument(format!(
                "tape nodes take at most 2 inputs, got {}",
                inputs.len()
            )));
        }
        let mut parents = Vec::with_capacity(2);
        for (v, p) in inputs.iter().zip(partials) {
            match v.tape {
                None => continue,
                Some(t) if t.id != self.id => {
                    return Err(AdError::CrossTape {
                        expected: self.id,
                        found: t.id,
                    })
                }
                Some(_) => {}
            }
            check_finite(op.name(), value.value(), p.value())?;
            parents.push((v.index as usize, p.clone()));
        }
        let index = self.push(op, &parents, value.clone());
        Ok(Var {
            tape: Some(self),
            index: index as u32,
            value,
        })
    }

    pub(crate) fn push_input(&self, value: T) -> usize {
        let index = self.push(OpKind::Input, &[], value);
        self.inputs.borrow_mut().push(index as u32);
        index
    }

    pub(crate) fn push(&self, op: OpKind, parents: &[(usize, T)], value: T) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        let zero = || T::constant(0.0);
        let node = match parents {
            [] => TapeNode {
                op,
                parents: [0, 0],
                arity: 0,
                partials: [zero(), zero()],
                value,
            },
            [(a, pa)] => TapeNode {
                op,
                parents: [*a as u32, 0],
                arity: 1,
                partials: [pa.clone(), zero()],
                value,
            },
            [(a, pa), (b, pb)] => TapeNode {
                op,
                parents: [*a as u32, *b as u32],
                arity: 2,
                partials: [pa.clone(), pb.clone()],
                value,
            },
            _ => unreachable!("tape nodes take at most 2 parents"),
        };
        nodes.push(node);
        index
    }

    fn push_unary(&self, op: OpKind, a: u32, pa: T, value: T) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(TapeNode {
            op,
            parents: [a, 0],
            arity: 1,
            partials: [pa, T::constant(0.0)],
            value,
        });
        index
    }

    fn push_binary(&self, op: OpKind, a: u32, b: u32, pa: T, pb: T, value: T) -> u32 {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len() as u32;
        nodes.push(TapeNode {
            op,
            parents: [a, b],
            arity: 2,
            partials: [pa, pb],
            value,
        });
        index
    }

    /// Propagates adjoints backward from `output` seeded with `seed` and
    /// returns the adjoints of the inputs in registration order.
    pub fn reverse_sweep(&self, output: &Var<'_, T>, seed: T) -> Result<Vec<T>> {
        self.reverse_sweep_many(&[(output, seed)])
    }

    /// One sweep with several seeded outputs, giving `J^T r` when the seeds
    /// are the entries of `r`.
    pub fn reverse_sweep_many(&self, seeds: &[(&Var<'_, T>, T)]) -> Result<Vec<T>> {
        let mut ids = Vec::with_capacity(seeds.len());
        for (v, s) in seeds {
            match v.tape {
                None => {}
                Some(t) if t.id != self.id => {
                    return Err(AdError::CrossTape {
                        expected: self.id,
                        found: t.id,
                    })
                }
                Some(_) => ids.push((v.index as usize, s.clone())),
            }
        }
        Ok(self.sweep_ids(&ids))
    }

    pub(crate) fn sweep_ids(&self, seeds: &[(usize, T)]) -> Vec<T> {
        let nodes = self.nodes.borrow();
        let mut adj = self.adjoints.borrow_mut();
        adj.clear();
        adj.resize(nodes.len(), T::constant(0.0));
        self.sweeps.set(self.sweeps.get() + 1);

        let mut top = 0;
        for (id, s) in seeds {
            adj[*id] = adj[*id].clone() + s.clone();
            top = top.max(id + 1);
        }
        for i in (0..top).rev() {
            let node = &nodes[i];
            if node.arity == 0 {
                continue;
            }
            let a = adj[i].clone();
            for k in 0..node.arity as usize {
                let p = node.parents[k] as usize;
                adj[p] = adj[p].clone() + a.clone() * node.partials[k].clone();
            }
        }
        self.inputs
            .borrow()
            .iter()
            .map(|&i| adj[i as usize].clone())
            .collect()
    }

    /// Adjoint of node `index` left by the most recent sweep.
    pub fn adjoint(&self, index: usize) -> Option<T> {
        self.adjoints.borrow().get(index).cloned()
    }

    pub fn node(&self, index: usize) -> Option<TapeNode<T>> {
        self.nodes.borrow().get(index).cloned()
    }

    pub fn input_ids(&self) -> Vec<usize> {
        self.inputs.borrow().iter().map(|&i| i as usize).collect()
    }

    /// Text dump, one node per line: `id opkind in0 in1 value p0 p1`.
    /// Missing parents and partials print as `-`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.borrow().iter().enumerate() {
            let slot = |k: usize| -> (String, String) {
                if k < node.arity as usize {
                    (
                        node.parents[k].to_string(),
                        node.partials[k].value().to_string(),
                    )
                } else {
                    ("-".into(), "-".into())
                }
            };
            let (in0, p0) = slot(0);
            let (in1, p1) = slot(1);
            let _ = writeln!(
                out,
                "{i} {} {in0} {in1} {} {p0} {p1}",
                node.op,
                node.value.value()
            );
        }
        out
    }
}

/// A value that is either recorded on a tape or a tape-free constant.
#[derive(Clone, Copy)]
pub struct Var<'t, T = f64> {
    tape: Option<&'t Tape<T>>,
    index: u32,
    value: T,
}

impl<T: fmt::Debug> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.tape {
            Some(t) => write!(f, "Var(t{}#{}, {:?})", t.id, self.index, self.value),
            None => write!(f, "Var(const, {:?})", self.value),
        }
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn primal(&self) -> &T {
        &self.value
    }

    /// Node index on the owning tape, or `None` for a constant.
    pub fn index(&self) -> Option<usize> {
        self.tape.map(|_| self.index as usize)
    }

    pub fn tape_id(&self) -> Option<u64> {
        self.tape.map(|t| t.id)
    }

    pub fn is_constant(&self) -> bool {
        self.tape.is_none()
    }

    fn constant_of(value: T) -> Self {
        Var {
            tape: None,
            index: 0,
            value,
        }
    }

    fn combine(self, rhs: Self, op: OpKind, value: T, pa: T, pb: T) -> Self {
        match (self.tape, rhs.tape) {
            (None, None) => Var::constant_of(value),
            (Some(t), None) => {
                let index = t.push_unary(scaled(op), self.index, pa, value.clone());
                Var { tape: Some(t), index, value }
            }
            (None, Some(t)) => {
                let index = t.push_unary(scaled(op), rhs.index, pb, value.clone());
                Var { tape: Some(t), index, value }
            }
            (Some(t), Some(u)) => {
                assert!(
                    t.id == u.id,
                    "variables from tapes {} and {} combined",
                    t.id,
                    u.id
                );
                let index = t.push_binary(op, self.index, rhs.index, pa, pb, value.clone());
                Var { tape: Some(t), index, value }
            }
        }
    }

    fn fallible(self, rhs: &Self, op: BinaryOp) -> Result<Self> {
        let (value, pa, pb) = binary_rule(op, &self.value, &rhs.value)?;
        if self.tape.is_some() {
            check_finite(op.name(), self.value.value(), pa.value())?;
        }
        if rhs.tape.is_some() {
            check_finite(op.name(), rhs.value.value(), pb.value())?;
        }
        Ok(self.combine(rhs.clone(), op.into(), value, pa, pb))
    }
}

fn scaled(op: OpKind) -> OpKind {
    if op == OpKind::Mul {
        OpKind::Scale
    } else {
        op
    }
}

impl<'t, T: Scalar> Add for Var<'t, T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        let value = self.value.clone() + rhs.value.clone();
        self.combine(rhs, OpKind::Add, value, T::constant(1.0), T::constant(1.0))
    }
}

impl<'t, T: Scalar> Sub for Var<'t, T> {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        let value = self.value.clone() - rhs.value.clone();
        self.combine(rhs, OpKind::Sub, value, T::constant(1.0), T::constant(-1.0))
    }
}

impl<'t, T: Scalar> Mul for Var<'t, T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let value = self.value.clone() * rhs.value.clone();
        let (pa, pb) = (rhs.value.clone(), self.value.clone());
        self.combine(rhs, OpKind::Mul, value, pa, pb)
    }
}

impl<'t, T: Scalar> Neg for Var<'t, T> {
    type Output = Self;

    fn neg(self) -> Self {
        let value = -self.value.clone();
        match self.tape {
            None => Var::constant_of(value),
            Some(t) => {
                let index = t.push_unary(OpKind::Neg, self.index, T::constant(-1.0), value.clone());
                Var { tape: Some(t), index, value }
            }
        }
    }
}

impl<'t, T: Scalar> Scalar for Var<'t, T> {
    fn constant(c: f64) -> Self {
        Var::constant_of(T::constant(c))
    }

    fn value(&self) -> f64 {
        self.value.value()
    }

    fn unary(&self, op: UnaryOp) -> Result<Self> {
        let (value, d) = unary_rule(op, &self.value)?;
        match self.tape {
            None => Ok(Var::constant_of(value)),
            Some(t) => {
                check_finite(op.name(), self.value.value(), d.value())?;
                let index = t.push_unary(op.into(), self.index, d, value.clone());
                Ok(Var { tape: Some(t), index, value })
            }
        }
    }

    fn add_scaled(&self, x: &Self, c: f64) -> Self {
        let value = self.value.add_scaled(&x.value, c);
        self.clone()
            .combine(x.clone(), OpKind::AddScaled, value, T::constant(1.0), T::constant(c))
    }

    fn try_div(&self, rhs: &Self) -> Result<Self> {
        self.clone().fallible(rhs, BinaryOp::Div)
    }

    fn atan2(&self, x: &Self) -> Result<Self> {
        self.clone().fallible(x, BinaryOp::Atan2)
    }
}

/// Records `f` on a fresh tape over `T` and sweeps once from its output.
///
/// Returns the output, the input adjoints and the tape statistics.
pub fn gradient_in<T, F>(f: F, x: &[T]) -> Result<(T, Vec<T>, TapeStats)>
where
    T: Scalar + 'static,
    F: for<'t> Fn(&[Var<'t, T>]) -> Result<Var<'t, T>>,
{
    let tape = Tape::recycled();
    let out = {
        let vars: Vec<Var<'_, T>> = x.iter().map(|v| tape.var(v.clone())).collect();
        f(&vars).and_then(|y| {
            let grad = tape.reverse_sweep(&y, T::constant(1.0))?;
            Ok((y.value, grad, tape.stats()))
        })
    };
    tape.recycle();
    out
}

/// Value and gradient of a scalar program: one recording, one sweep.
pub fn grad_reverse<F>(f: F, x: &[f64]) -> Result<(f64, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Var<'t>>,
{
    let (y, g, _) = gradient_in(f, x)?;
    Ok((y, g))
}

/// Transposed Jacobian-vector product `J_f(x)^T r`: one recording, one
/// sweep seeded with `r`.
pub fn vjp<F>(f: F, x: &[f64], r: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Vec<Var<'t>>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = x.iter().map(|&v| tape.var(v)).collect();
    let ys = f(&vars)?;
    check_len(ys.len(), r.len())?;
    let seeds: Vec<(&Var<'_>, f64)> = ys.iter().zip(r.iter().copied()).collect();
    let g = tape.reverse_sweep_many(&seeds)?;
    Ok((ys.iter().map(|y| y.value).collect(), g))
}

/// Full `m x n` Jacobian from `m` sweeps over a single recorded tape.
pub fn jacobian_reverse<F>(f: F, x: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: for<'t> Fn(&[Var<'t>]) -> Result<Vec<Var<'t>>>,
{
    let tape = Tape::new();
    let vars: Vec<Var<'_>> = x.iter().map(|&v| tape.var(v)).collect();
    let ys = f(&vars)?;
    ys.iter().map(|y| tape.reverse_sweep(y, 1.0)).collect()
}
