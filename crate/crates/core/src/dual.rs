//! Forward-mode differentiation with dual numbers.
//!
//! A dual number `v + v'e` with `e^2 = 0` carries a primal value together with
//! its tangent, the derivative with respect to whatever input direction was
//! seeded. Arithmetic on the pair is the truncated Taylor expansion:
//!
//! - `(a + a'e) + (b + b'e) = (a + b) + (a' + b')e`
//! - `(a + a'e) * (b + b'e) = ab + (ab' + a'b)e`
//! - `f(v + v'e) = f(v) + f'(v)v'e` for elementary `f`
//!
//! `Dual<T>` is generic over its component type so that a tape of duals (see
//! [`crate::nest::hvp`]) or a dual of duals can be built; the default is `f64`.
//!
//! ```
//! use adkit::dual::Dual;
//! use adkit::Scalar;
//!
//! let x1 = Dual::seed(2.0, 1.0);
//! let x2 = Dual::seed(5.0, 0.0);
//! let y = x1.ln().unwrap() + x1 * x2 - x2.sin().unwrap();
//! assert!((y.primal - 11.652).abs() < 1e-3);
//! assert_eq!(y.tangent, 5.5);
//! ```

use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{check_len, Result};
use crate::scalar::{binary_rule, unary_rule, BinaryOp, Scalar, UnaryOp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual<T = f64> {
    pub primal: T,
    pub tangent: T,
}

impl<T: Scalar> Dual<T> {
    /// A constant: `c + 0e`.
    pub fn lift(primal: T) -> Self {
        Dual {
            primal,
            tangent: T::constant(0.0),
        }
    }

    /// An input with an explicit tangent seed.
    pub fn seed(primal: T, tangent: T) -> Self {
        Dual { primal, tangent }
    }

    /// Applies `op` to both operands following the sum, product and
    /// quotient rules.
    pub fn arith(op: BinaryOp, a: &Self, b: &Self) -> Result<Self> {
        match op {
            BinaryOp::Add => Ok(a.clone() + b.clone()),
            BinaryOp::Sub => Ok(a.clone() - b.clone()),
            BinaryOp::Mul => Ok(a.clone() * b.clone()),
            BinaryOp::Div | BinaryOp::Atan2 => {
                let (v, da, db) = binary_rule(op, &a.primal, &b.primal)?;
                Ok(Dual {
                    primal: v,
                    tangent: da * a.tangent.clone() + db * b.tangent.clone(),
                })
            }
        }
    }
}

/// Lifts a constant: tangent is exactly zero.
pub fn lift_const(c: f64) -> Dual {
    Dual::lift(c)
}

pub fn seed_var(v: f64, vdot: f64) -> Dual {
    Dual::seed(v, vdot)
}

impl<T: Scalar> Add for Dual<T> {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Dual {
            primal: self.primal + rhs.primal,
            tangent: self.tangent + rhs.tangent,
        }
    }
}

impl<T: Scalar> Sub for Dual<T> {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Dual {
            primal: self.primal - rhs.primal,
            tangent: self.tangent - rhs.tangent,
        }
    }
}

impl<T: Scalar> Mul for Dual<T> {
    type Output = Self;

    fn mul(self, rhs: Self) -> Self {
        let tangent = self.primal.clone() * rhs.tangent + self.tangent * rhs.primal.clone();
        Dual {
            primal: self.primal * rhs.primal,
            tangent,
        }
    }
}

impl<T: Scalar> Neg for Dual<T> {
    type Output = Self;

    fn neg(self) -> Self {
        Dual {
            primal: -self.primal,
            tangent: -self.tangent,
        }
    }
}

impl<T: Scalar> Scalar for Dual<T> {
    fn constant(c: f64) -> Self {
        Dual::lift(T::constant(c))
    }

    fn value(&self) -> f64 {
        self.primal.value()
    }

    fn unary(&self, op: UnaryOp) -> Result<Self> {
        let (v, d) = unary_rule(op, &self.primal)?;
        Ok(Dual {
            primal: v,
            tangent: d * self.tangent.clone(),
        })
    }

    fn try_div(&self, rhs: &Self) -> Result<Self> {
        Dual::arith(BinaryOp::Div, self, rhs)
    }

    fn atan2(&self, x: &Self) -> Result<Self> {
        Dual::arith(BinaryOp::Atan2, self, x)
    }
}

/// Tangent seed for one forward pass; its length must match the input
/// dimension of the differentiated program.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedVector(Vec<f64>);

impl SeedVector {
    pub fn new(entries: Vec<f64>) -> Self {
        SeedVector(entries)
    }

    /// The `i`-th unit vector of length `n`.
    pub fn unit(n: usize, i: usize) -> Self {
        let mut e = vec![0.0; n];
        e[i] = 1.0;
        SeedVector(e)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for SeedVector {
    fn from(v: Vec<f64>) -> Self {
        SeedVector(v)
    }
}

/// Jacobian-vector product `J_f(x) r` in one forward pass.
///
/// Returns the primal outputs and the output tangents.
pub fn jvp<F>(f: F, x: &[f64], r: &SeedVector) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[Dual]) -> Result<Vec<Dual>>,
{
    check_len(x.len(), r.len())?;
    let inputs: Vec<Dual> = x
        .iter()
        .zip(r.as_slice())
        .map(|(&v, &t)| Dual::seed(v, t))
        .collect();
    let out = f(&inputs)?;
    Ok(out.iter().map(|d| (d.primal, d.tangent)).unzip())
}

/// Gradient of a scalar program by `n` forward passes, one per unit seed.
pub fn grad_forward<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[Dual]) -> Result<Dual>,
{
    let n = x.len();
    let mut inputs: Vec<Dual> = x.iter().map(|&v| Dual::seed(v, 0.0)).collect();
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        inputs[i].tangent = 1.0;
        grad.push(f(&inputs)?.tangent);
        inputs[i].tangent = 0.0;
    }
    Ok(grad)
}

/// Full `m x n` Jacobian, column by column. Row `j` holds the partials of
/// output `j`.
pub fn jacobian_forward<F>(f: F, x: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[Dual]) -> Result<Vec<Dual>>,
{
    let n = x.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for i in 0..n {
        let (_, col) = jvp(&f, x, &SeedVector::unit(n, i))?;
        if i == 0 {
            rows = vec![vec![0.0; n]; col.len()];
        }
        for (row, c) in rows.iter_mut().zip(col) {
            row[i] = c;
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::AdError;
    use proptest::prelude::*;

    fn example(x: &[Dual]) -> Result<Dual> {
        Ok(x[0].ln()? + x[0] * x[1] - x[1].sin()?)
    }

    #[test]
    fn lift_and_seed() {
        for c in [3.0, 0.0, -1.5] {
            let d = lift_const(c);
            assert_eq!((d.primal, d.tangent), (c, 0.0));
        }
        assert_eq!(seed_var(2.0, 1.0), Dual::seed(2.0, 1.0));
        assert_eq!(seed_var(5.0, 0.0).tangent, 0.0);
        assert_eq!(seed_var(7.0, 3.0), Dual { primal: 7.0, tangent: 3.0 });
    }

    #[test]
    fn worked_trace_steps() {
        let v2 = Dual::arith(BinaryOp::Mul, &seed_var(2.0, 1.0), &seed_var(5.0, 0.0)).unwrap();
        assert_eq!((v2.primal, v2.tangent), (10.0, 5.0));

        let v4 = Dual::arith(BinaryOp::Add, &seed_var(0.693, 0.5), &seed_var(10.0, 5.0)).unwrap();
        assert_eq!(v4.primal, 10.693);
        assert_eq!(v4.tangent, 5.5);

        let a = seed_var(1.25, -0.75);
        assert_eq!(a - a, Dual::seed(0.0, 0.0));
    }

    #[test]
    fn elementary_functions() {
        let l = seed_var(2.0, 1.0).ln().unwrap();
        assert!((l.primal - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(l.tangent, 0.5);

        let s = seed_var(5.0, 0.0).sin().unwrap();
        assert!((s.primal + 0.9589).abs() < 1e-4);
        assert_eq!(s.tangent, 0.0);

        let e = seed_var(0.0, 1.0).exp().unwrap();
        assert_eq!((e.primal, e.tangent), (1.0, 1.0));

        let t = seed_var(0.0, 1.0).tanh().unwrap();
        assert_eq!((t.primal, t.tangent), (0.0, 1.0));
        let r = seed_var(2.0, 1.0).recip().unwrap();
        assert_eq!((r.primal, r.tangent), (0.5, -0.25));
        let q = seed_var(4.0, 1.0).sqrt().unwrap();
        assert_eq!((q.primal, q.tangent), (2.0, 0.25));
        let n = -seed_var(4.0, 1.0);
        assert_eq!((n.primal, n.tangent), (-4.0, -1.0));
    }

    #[test]
    fn domain_errors_name_the_function() {
        match seed_var(0.0, 1.0).ln() {
            Err(AdError::Domain { op, .. }) => assert_eq!(op, "ln"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(seed_var(0.0, 1.0).sqrt(), Err(AdError::Domain { op: "sqrt", .. })));
        assert!(matches!(seed_var(-1.0, 1.0).sqrt(), Err(AdError::Domain { op: "sqrt", .. })));
        assert!(matches!(seed_var(0.0, 1.0).recip(), Err(AdError::Domain { op: "recip", .. })));
        let div = Dual::arith(BinaryOp::Div, &seed_var(1.0, 0.0), &seed_var(0.0, 1.0));
        assert!(matches!(div, Err(AdError::Domain { op: "div", .. })));
    }

    #[test]
    fn quotient_and_atan2() {
        // d/dx (x / (x + 1)) = 1 / (x + 1)^2
        let x = seed_var(3.0, 1.0);
        let q = x.try_div(&(x + lift_const(1.0))).unwrap();
        assert_eq!(q.primal, 0.75);
        assert!((q.tangent - 1.0 / 16.0).abs() < 1e-15);

        // d/dt atan2(sin t, cos t) = 1
        let t = seed_var(0.3, 1.0);
        let a = t.sin().unwrap().atan2(&t.cos().unwrap()).unwrap();
        assert!((a.primal - 0.3).abs() < 1e-15);
        assert!((a.tangent - 1.0).abs() < 1e-15);
    }

    #[test]
    fn jvp_examples() {
        let f = |x: &[Dual]| Ok(vec![example(x)?]);
        let (y, ydot) = jvp(f, &[2.0, 5.0], &SeedVector::new(vec![1.0, 0.0])).unwrap();
        assert!((y[0] - 11.652).abs() < 5e-4);
        assert_eq!(ydot[0], 5.5);

        let (_, zero) = jvp(f, &[2.0, 5.0], &SeedVector::new(vec![0.0, 0.0])).unwrap();
        assert_eq!(zero, vec![0.0]);

        let g = |x: &[Dual]| Ok(vec![x[0] + x[1], x[0] * x[1]]);
        let (_, ydot) = jvp(g, &[1.0, 2.0], &SeedVector::new(vec![1.0, 1.0])).unwrap();
        assert_eq!(ydot, vec![2.0, 3.0]);

        let bad = jvp(g, &[1.0, 2.0], &SeedVector::new(vec![1.0]));
        assert_eq!(bad, Err(AdError::Dimension { expected: 2, got: 1 }));
    }

    #[test]
    fn gradients_and_jacobians() {
        let g = grad_forward(example, &[2.0, 5.0]).unwrap();
        assert_eq!(g[0], 5.5);
        assert!((g[1] - 1.7163).abs() < 1e-4);

        let c = grad_forward(|_: &[Dual]| Ok(lift_const(4.0)), &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, vec![0.0; 3]);

        let g = grad_forward(|x: &[Dual]| Ok(x[0] * x[0] * x[1]), &[1.0, 2.0]).unwrap();
        assert_eq!(g, vec![4.0, 1.0]);

        let id = jacobian_forward(|x: &[Dual]| Ok(x.to_vec()), &[0.3, -0.7]).unwrap();
        assert_eq!(id, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        let j = jacobian_forward(|x: &[Dual]| Ok(vec![x[0] * x[1]]), &[2.0, 5.0]).unwrap();
        assert_eq!(j, vec![vec![5.0, 2.0]]);
        let j = jacobian_forward(|x: &[Dual]| Ok(vec![example(x)?]), &[2.0, 5.0]).unwrap();
        assert_eq!(j[0][0], 5.5);
        assert!((j[0][1] - 1.7163).abs() < 1e-4);
    }

    #[test]
    fn grad_forward_propagates_domain_error() {
        assert!(matches!(
            grad_forward(example, &[-1.0, 5.0]),
            Err(AdError::Domain { op: "ln", .. })
        ));
    }

    proptest! {
        #[test]
        fn product_tangent_is_bitwise_formula(
            a in -1e3f64..1e3, ad in -1e3f64..1e3, b in -1e3f64..1e3, bd in -1e3f64..1e3,
        ) {
            let p = Dual::seed(a, ad) * Dual::seed(b, bd);
            prop_assert_eq!(p.tangent.to_bits(), (a * bd + ad * b).to_bits());
            prop_assert_eq!(p.primal.to_bits(), (a * b).to_bits());
        }

        #[test]
        fn chain_rule_exp_of_sin(v in -10.0f64..10.0) {
            let d = seed_var(v, 1.0).sin().unwrap().exp().unwrap();
            let closed = v.sin().exp() * v.cos();
            prop_assert!((d.tangent - closed).abs() <= 1e-12 * closed.abs().max(1.0));
        }

        #[test]
        fn jvp_is_linear_in_seed(
            x1 in 0.1f64..5.0, x2 in -5.0f64..5.0, r1 in -3.0f64..3.0, r2 in -3.0f64..3.0,
            alpha in -4.0f64..4.0,
        ) {
            let f = |x: &[Dual]| Ok(vec![example(x)?, x[0] * x[1].cos()?]);
            let (_, base) = jvp(f, &[x1, x2], &SeedVector::new(vec![r1, r2])).unwrap();
            let (_, scaled) = jvp(f, &[x1, x2], &SeedVector::new(vec![alpha * r1, alpha * r2])).unwrap();
            for (s, b) in scaled.iter().zip(&base) {
                prop_assert!((s - alpha * b).abs() <= 1e-12 * s.abs().max((alpha * b).abs()).max(1.0));
            }
        }
    }
}
