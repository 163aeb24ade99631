//! Gradient descent, Newton's method and a small XOR network, all driven by
//! the differentiation modes of this crate.

use nalgebra::{DMatrix, DVector};

use crate::bench::Objective;
use crate::dual::grad_forward;
use crate::error::{AdError, Result};
use crate::nest::hessian;
use crate::numdiff::{grad_numeric, DiffScheme};
use crate::rng::SplitMix64;
use crate::scalar::Scalar;
use crate::tape::grad_reverse;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    Forward,
    Reverse,
    /// Center differences with the default scaled step.
    Numeric,
}

/// Value and gradient of `obj` at `x` in the chosen mode.
pub fn value_and_grad<O: Objective>(obj: &O, x: &[f64], mode: GradMode) -> Result<(f64, Vec<f64>)> {
    match mode {
        GradMode::Reverse => grad_reverse(|p| obj.eval(p), x),
        GradMode::Forward => {
            let g = grad_forward(|p| obj.eval(p), x)?;
            Ok((obj.eval(x)?, g))
        }
        GradMode::Numeric => {
            let (g, _) = grad_numeric(|p| obj.eval(p), x, DiffScheme::center())?;
            Ok((obj.eval(x)?, g))
        }
    }
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdConfig {
    pub eta: f64,
    pub max_iters: usize,
    /// Stop once the infinity norm of the gradient drops below this.
    pub grad_tol: f64,
    pub mode: GradMode,
    /// Halve the step (up to 40 times) whenever it would increase `f`.
    pub backtrack: bool,
}

impl Default for GdConfig {
    fn default() -> Self {
        GdConfig {
            eta: 1e-3,
            max_iters: 1000,
            grad_tol: 1e-8,
            mode: GradMode::Reverse,
            backtrack: false,
        }
    }
}

impl GdConfig {
    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(AdError::InvalidArgument(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if self.max_iters == 0 {
            return Err(AdError::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// One point of an optimization trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub iter: usize,
    pub w: Vec<f64>,
    pub f: f64,
    /// Infinity norm of the gradient at `w`.
    pub grad_norm: f64,
}

fn finite_or(what: &'static str, iter: usize, ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(AdError::NonFinite { what, iter })
    }
}

fn checked_grad<O: Objective>(obj: &O, w: &[f64], mode: GradMode, iter: usize) -> Result<(f64, Vec<f64>)> {
    let (f, g) = value_and_grad(obj, w, mode)?;
    finite_or("objective", iter, f.is_finite())?;
    finite_or("gradient", iter, g.iter().all(|v| v.is_finite()))?;
    Ok((f, g))
}

/// `f` at `w`, with domain errors and non-finite values mapped to `None` so a
/// line search can back off.
fn trial<O: Objective>(obj: &O, w: &[f64]) -> Option<f64> {
    obj.eval(w).ok().filter(|f: &f64| f.is_finite())
}

/// Iterates `w <- w - eta * grad f(w)`. The trajectory starts with `w0`.
pub fn gradient_descent<O: Objective>(obj: &O, w0: &[f64], cfg: &GdConfig) -> Result<Vec<Iterate>> {
    cfg.validate()?;
    crate::error::check_len(obj.dim(), w0.len())?;
    let mut w = w0.to_vec();
    let (mut f, mut g) = checked_grad(obj, &w, cfg.mode, 0)?;
    let mut traj = vec![Iterate {
        iter: 0,
        w: w.clone(),
        f,
        grad_norm: inf_norm(&g),
    }];
    for iter in 1..=cfg.max_iters {
        if inf_norm(&g) < cfg.grad_tol {
            break;
        }
        let mut eta = cfg.eta;
        let mut next: Vec<f64> = w.iter().zip(&g).map(|(wi, gi)| wi - eta * gi).collect();
        if cfg.backtrack {
            let mut halvings = 0;
            while trial(obj, &next).is_none_or(|fn_| fn_ > f) && halvings < 40 {
                eta *= 0.5;
                halvings += 1;
                next = w.iter().zip(&g).map(|(wi, gi)| wi - eta * gi).collect();
            }
        }
        w = next;
        (f, g) = checked_grad(obj, &w, cfg.mode, iter)?;
        traj.push(Iterate {
            iter,
            w: w.clone(),
            f,
            grad_norm: inf_norm(&g),
        });
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonConfig {
    pub eta: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    /// Halve the step while it fails to decrease `f`.
    pub backtrack: bool,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            eta: 1.0,
            max_iters: 50,
            grad_tol: 1e-10,
            backtrack: true,
        }
    }
}

/// Reciprocal condition number below which the Hessian counts as singular.
pub const RCOND_MIN: f64 = 1e-14;

/// Solves `H d = g` by LU, refusing numerically singular `H`.
fn newton_direction(h: &[Vec<f64>], g: &[f64]) -> Result<Vec<f64>> {
    let n = g.len();
    let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
    let sv = m.singular_values();
    let smax = sv.max();
    let rcond = if smax > 0.0 { sv.min() / smax } else { 0.0 };
    if !(rcond >= RCOND_MIN) {
        return Err(AdError::Singular { rcond });
    }
    let d = m
        .lu()
        .solve(&DVector::from_column_slice(g))
        .ok_or(AdError::Singular { rcond })?;
    Ok(d.iter().copied().collect())
}

/// Iterates `w <- w - eta H^{-1} grad f(w)` with exact Hessians from
/// forward-over-reverse differentiation.
pub fn newton<O: Objective>(obj: &O, w0: &[f64], cfg: &NewtonConfig) -> Result<Vec<Iterate>> {
    if !(cfg.eta > 0.0 && cfg.eta.is_finite()) || cfg.max_iters == 0 {
        return Err(AdError::InvalidArgument(
            "newton needs a positive step and at least one iteration".into(),
        ));
    }
    crate::error::check_len(obj.dim(), w0.len())?;
    let mut w = w0.to_vec();
    let (mut f, mut g) = checked_grad(obj, &w, GradMode::Reverse, 0)?;
    let mut traj = vec![Iterate {
        iter: 0,
        w: w.clone(),
        f,
        grad_norm: inf_norm(&g),
    }];
    for iter in 1..=cfg.max_iters {
        if inf_norm(&g) < cfg.grad_tol {
            break;
        }
        let h = hessian(|p| obj.eval(p), &w)?;
        let d = newton_direction(&h, &g)?;
        let step = |eta: f64| -> Vec<f64> { w.iter().zip(&d).map(|(wi, di)| wi - eta * di).collect() };
        let mut eta = cfg.eta;
        let mut next = step(eta);
        if cfg.backtrack {
            let mut halvings = 0;
            while trial(obj, &next).is_none_or(|fn_| fn_ > f) && halvings < 40 {
                eta *= 0.5;
                halvings += 1;
                next = step(eta);
            }
        }
        w = next;
        (f, g) = checked_grad(obj, &w, GradMode::Reverse, iter)?;
        traj.push(Iterate {
            iter,
            w: w.clone(),
            f,
            grad_norm: inf_norm(&g),
        });
    }
    Ok(traj)
}

const XOR: [([f64; 2], f64); 4] = [
    ([0.0, 0.0], 0.0),
    ([0.0, 1.0], 1.0),
    ([1.0, 0.0], 1.0),
    ([1.0, 1.0], 0.0),
];

/// Seed for which the default XOR run converges.
pub const MLP_SEED: u64 = 7;

fn sigmoid<S: Scalar>(z: S) -> Result<S> {
    (S::constant(1.0) + (-z).exp()?).recip()
}

/// 2-2-1 sigmoid network on the four XOR points with squared-error loss
/// `E = 1/2 sum (t - y)^2`.
///
/// Parameters are `[w11, w12, b1, w21, w22, b2, v1, v2, c]`: hidden unit `j`
/// computes `sigmoid(wj1 x1 + wj2 x2 + bj)`, the output
/// `sigmoid(v1 h1 + v2 h2 + c)`.
pub struct XorMlp;

impl Objective for XorMlp {
    fn name(&self) -> &str {
        "xor-mlp"
    }

    fn dim(&self) -> usize {
        9
    }

    fn eval<S: Scalar>(&self, p: &[S]) -> Result<S> {
        crate::error::check_len(9, p.len())?;
        let mut loss: Option<S> = None;
        for ([x1, x2], t) in XOR {
            let unit = |k: usize| {
                sigmoid(p[k].scale(x1) + p[k + 1].scale(x2) + p[k + 2].clone())
            };
            let h1 = unit(0)?;
            let h2 = unit(3)?;
            let y = sigmoid(p[6].clone() * h1 + p[7].clone() * h2 + p[8].clone())?;
            let e = (S::constant(t) - y).square().scale(0.5);
            loss = Some(match loss {
                None => e,
                Some(acc) => acc + e,
            });
        }
        Ok(loss.expect("non-empty dataset"))
    }
}

/// Initial parameters, uniform in `[-1, 1]` in declaration order.
pub fn mlp_init(seed: u64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..9).map(|_| rng.uniform(-1.0, 1.0)).collect()
}

/// Full-batch gradient descent with reverse-mode gradients. Entry `k` of
/// the returned curve is the loss after `k` epochs.
pub fn mlp_train(seed: u64, eta: f64, epochs: usize) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(AdError::InvalidArgument(format!(
            "learning rate must be non-negative, got {eta}"
        )));
    }
    let mut w = mlp_init(seed);
    let mut curve = Vec::with_capacity(epochs + 1);
    for epoch in 0..=epochs {
        let (loss, g) = grad_reverse(|p| XorMlp.eval(p), &w)?;
        finite_or("loss", epoch, loss.is_finite())?;
        curve.push(loss);
        if epoch < epochs {
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= eta * gi;
            }
        }
    }
    Ok(curve)
}
