//! Built-in test functions, written once over [`Scalar`] so that every
//! differentiation mode runs the same program.

use crate::error::{check_len, domain, Result};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;

/// A scalar program `R^n -> R` that can be evaluated on any [`Scalar`].
pub trait Objective {
    fn name(&self) -> &str;

    /// Input dimension.
    fn dim(&self) -> usize;

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S>;
}

impl<O: Objective + ?Sized> Objective for &O {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        (**self).eval(x)
    }
}

/// `ln(x1) + x1*x2 - sin(x2)`, the two-input worked example.
pub fn example_f<S: Scalar>(x1: &S, x2: &S) -> Result<S> {
    Ok(x1.ln()? + x1.clone() * x2.clone() - x2.sin()?)
}

/// `l_n` of the logistic map `l_{k+1} = 4 l_k (1 - l_k)` with `l_1 = x`.
pub fn logistic_l<S: Scalar>(n: usize, x: &S) -> Result<S> {
    if !(1..=4).contains(&n) {
        return Err(crate::AdError::InvalidArgument(format!(
            "logistic iteration count must be in 1..=4, got {n}"
        )));
    }
    let mut l = x.clone();
    for _ in 1..n {
        l = l.scale(4.0) * (S::constant(1.0) - l);
    }
    Ok(l)
}

/// `dl_n/dx` from the hand-simplified polynomials, used as an independent
/// oracle for the AD derivative of [`logistic_l`].
pub fn logistic_dl_closed(n: usize, x: f64) -> Result<f64> {
    let poly = |c: &[f64]| c.iter().rev().fold(0.0, |acc, &k| acc * x + k);
    match n {
        1 => Ok(1.0),
        2 => Ok(4.0 - 8.0 * x),
        3 => Ok(16.0 * poly(&[1.0, -10.0, 24.0, -16.0])),
        4 => Ok(64.0
            * poly(&[
                1.0, -42.0, 504.0, -2640.0, 7040.0, -9984.0, 7168.0, -2048.0,
            ])),
        _ => Err(crate::AdError::InvalidArgument(format!(
            "logistic iteration count must be in 1..=4, got {n}"
        ))),
    }
}

/// `l_4(x) = 64x(1-x)(1-2x)^2(1-8x+8x^2)^2` in product form on plain reals.
pub fn logistic_l4_product(x: f64) -> f64 {
    let a = 1.0 - 2.0 * x;
    let b = 1.0 - 8.0 * x + 8.0 * x * x;
    64.0 * x * (1.0 - x) * a * a * b * b
}

pub struct ExampleFn;

impl Objective for ExampleFn {
    fn name(&self) -> &str {
        "example"
    }

    fn dim(&self) -> usize {
        2
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        check_len(2, x.len())?;
        example_f(&x[0], &x[1])
    }
}

/// `l_n(x)` as a one-input objective.
pub struct Logistic {
    pub iterations: usize,
}

impl Objective for Logistic {
    fn name(&self) -> &str {
        "logistic"
    }

    fn dim(&self) -> usize {
        1
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        check_len(1, x.len())?;
        logistic_l(self.iterations, &x[0])
    }
}

/// Generalized Rosenbrock `sum 100(x_{i+1} - x_i^2)^2 + (1 - x_i)^2`, `n >= 2`.
pub struct Rosenbrock {
    pub n: usize,
}

impl Objective for Rosenbrock {
    fn name(&self) -> &str {
        "rosenbrock"
    }

    fn dim(&self) -> usize {
        self.n
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        check_len(self.n, x.len())?;
        let mut terms = x.windows(2).map(|w| {
            let a = w[1].clone() - w[0].square();
            let b = S::constant(1.0) - w[0].clone();
            a.square().scale(100.0) + b.square()
        });
        let first = terms.next().ok_or_else(|| {
            crate::AdError::InvalidArgument("rosenbrock needs at least 2 inputs".into())
        })?;
        Ok(terms.fold(first, |acc, t| acc + t))
    }
}

/// `1/2 x^T A x - b^T x` with a symmetric `A`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Quadratic {
    /// The fixed 3x3 SPD instance used by the CLI and the tests.
    pub fn standard() -> Self {
        Quadratic {
            a: vec![
                vec![4.0, 1.0, 0.0],
                vec![1.0, 3.0, 1.0],
                vec![0.0, 1.0, 2.0],
            ],
            b: vec![1.0, 2.0, 3.0],
        }
    }
}

impl Objective for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.b.len()
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        check_len(self.dim(), x.len())?;
        let ax = mat_vec(&self.a, x);
        let quad = dot(x, &ax);
        let lin = weighted_sum(&self.b, x);
        Ok(quad.scale(0.5) - lin)
    }
}

/// Constants of one Helmholtz free-energy instance.
#[derive(Debug, Clone, PartialEq)]
pub struct HelmholtzSpec {
    pub n: usize,
    /// Gas constant, 1 in reduced units.
    pub r: f64,
    /// Temperature, 1 in reduced units.
    pub t: f64,
    pub b: Vec<f64>,
    pub a: Vec<Vec<f64>>,
}

impl HelmholtzSpec {
    /// The evaluation point `x_i = 1/(2n)`.
    pub fn standard_point(&self) -> Vec<f64> {
        vec![0.5 / self.n as f64; self.n]
    }
}

/// Deterministic instance: `b_i` uniform in `[0.1, 0.2]/n` and
/// `A = (M + M^T)/2` with `M_ij` uniform in `[-0.1, 0.1]`, all drawn from
/// [`SplitMix64`] seeded with `seed` (`b` first, then `M` row-major).
pub fn helmholtz_make(n: usize, seed: u64) -> Result<HelmholtzSpec> {
    if n == 0 {
        return Err(crate::AdError::InvalidArgument(
            "Helmholtz dimension must be at least 1".into(),
        ));
    }
    let mut rng = SplitMix64::new(seed);
    let b = (0..n)
        .map(|_| rng.uniform(0.1, 0.2) / n as f64)
        .collect();
    let m: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.uniform(-0.1, 0.1)).collect())
        .collect();
    let a = (0..n)
        .map(|i| (0..n).map(|j| 0.5 * (m[i][j] + m[j][i])).collect())
        .collect();
    Ok(HelmholtzSpec {
        n,
        r: 1.0,
        t: 1.0,
        b,
        a,
    })
}

/// Helmholtz free energy
///
/// ```text
/// f(x) = R T sum_i x_i ln(x_i / (1 - b^T x))
///        - x^T A x / (sqrt(8) b^T x) * ln((1 + (1 + sqrt 2) b^T x) / (1 + (1 - sqrt 2) b^T x))
/// ```
///
/// defined for `x_i > 0` and `b^T x < 1`.
pub fn helmholtz_eval<S: Scalar>(spec: &HelmholtzSpec, x: &[S]) -> Result<S> {
    check_len(spec.n, x.len())?;
    for xi in x {
        if !(xi.value() > 0.0) {
            return Err(domain("helmholtz", xi.value()));
        }
    }
    let bx = weighted_sum(&spec.b, x);
    let slack = S::constant(1.0) - bx.clone();
    if !(slack.value() > 0.0) {
        return Err(domain("helmholtz", slack.value()));
    }

    let mut entropy: Option<S> = None;
    for xi in x {
        let term = xi.clone() * xi.try_div(&slack)?.ln()?;
        entropy = Some(match entropy {
            None => term,
            Some(acc) => acc + term,
        });
    }
    let entropy = entropy.expect("n >= 1").scale(spec.r * spec.t);

    let sqrt2 = std::f64::consts::SQRT_2;
    let xax = dot(x, &mat_vec(&spec.a, x));
    let num = S::constant(1.0) + bx.scale(1.0 + sqrt2);
    let den = S::constant(1.0) + bx.scale(1.0 - sqrt2);
    let log_ratio = num.try_div(&den)?.ln()?;
    let attraction = xax.try_div(&bx.scale(8f64.sqrt()))? * log_ratio;
    Ok(entropy - attraction)
}

/// [`helmholtz_eval`] as an objective.
pub struct Helmholtz(pub HelmholtzSpec);

impl Objective for Helmholtz {
    fn name(&self) -> &str {
        "helmholtz"
    }

    fn dim(&self) -> usize {
        self.0.n
    }

    fn eval<S: Scalar>(&self, x: &[S]) -> Result<S> {
        helmholtz_eval(&self.0, x)
    }
}

/// `sum_i w_i x_i` as a chain of binary operations.
fn weighted_sum<S: Scalar>(w: &[f64], x: &[S]) -> S {
    let mut it = w.iter().zip(x);
    match it.next() {
        None => S::constant(0.0),
        Some((&w0, x0)) => it.fold(x0.scale(w0), |acc, (&wi, xi)| acc.add_scaled(xi, wi)),
    }
}

fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    let mut it = x.iter().zip(y).map(|(a, b)| a.clone() * b.clone());
    let first = it.next().unwrap_or_else(|| S::constant(0.0));
    it.fold(first, |acc, t| acc + t)
}

fn mat_vec<S: Scalar>(a: &[Vec<f64>], x: &[S]) -> Vec<S> {
    a.iter().map(|row| weighted_sum(row, x)).collect()
}
