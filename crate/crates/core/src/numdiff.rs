//! Finite-difference baseline and the step-size error curve.

use std::cell::Cell;

use crate::bench::{logistic_dl_closed, logistic_l4_product};
use crate::error::{AdError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    Forward,
    Center,
}

/// A difference scheme with an optional fixed step. Without a step, each
/// coordinate uses the scaled default for its kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffScheme {
    pub kind: DiffKind,
    step: Option<f64>,
}

impl DiffScheme {
    pub fn new(kind: DiffKind, step: Option<f64>) -> Result<Self> {
        if let Some(h) = step {
            check_step(h)?;
        }
        Ok(DiffScheme { kind, step })
    }

    pub fn forward() -> Self {
        DiffScheme {
            kind: DiffKind::Forward,
            step: None,
        }
    }

    pub fn center() -> Self {
        DiffScheme {
            kind: DiffKind::Center,
            step: None,
        }
    }

    pub fn step(&self) -> Option<f64> {
        self.step
    }

    /// Step used at coordinate value `xi`.
    pub fn step_at(&self, xi: f64) -> f64 {
        self.step.unwrap_or_else(|| default_step(self.kind, xi))
    }

    /// Evaluations of `f` per gradient in `n` dimensions.
    pub fn evals_per_gradient(&self, n: usize) -> usize {
        match self.kind {
            DiffKind::Forward => n + 1,
            DiffKind::Center => 2 * n,
        }
    }
}

/// `sqrt(eps) * max(1, |x|)` for forward differences,
/// `cbrt(eps) * max(1, |x|)` for center differences.
pub fn default_step(kind: DiffKind, x: f64) -> f64 {
    let scale = x.abs().max(1.0);
    match kind {
        DiffKind::Forward => f64::EPSILON.sqrt() * scale,
        DiffKind::Center => f64::EPSILON.cbrt() * scale,
    }
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(AdError::InvalidArgument(format!(
            "step must be finite and positive, got {h}"
        )))
    }
}

fn check_index(i: usize, n: usize) -> Result<()> {
    if i < n {
        Ok(())
    } else {
        Err(AdError::InvalidArgument(format!(
            "coordinate {i} out of range for {n} inputs"
        )))
    }
}

fn shifted<F>(f: &F, x: &[f64], i: usize, delta: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut xs = x.to_vec();
    xs[i] += delta;
    f(&xs)
}

/// `(f(x + h e_i) - f(x)) / h`.
pub fn forward_diff<F>(f: F, x: &[f64], i: usize, h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_step(h)?;
    check_index(i, x.len())?;
    Ok((shifted(&f, x, i, h)? - f(x)?) / h)
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`.
pub fn central_diff<F>(f: F, x: &[f64], i: usize, h: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    check_step(h)?;
    check_index(i, x.len())?;
    Ok((shifted(&f, x, i, h)? - shifted(&f, x, i, -h)?) / (2.0 * h))
}

/// Numeric gradient together with the number of evaluations of `f`.
pub fn grad_numeric<F>(f: F, x: &[f64], scheme: DiffScheme) -> Result<(Vec<f64>, usize)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let evals = Cell::new(0usize);
    let counted = |p: &[f64]| {
        evals.set(evals.get() + 1);
        f(p)
    };
    let mut xs = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    match scheme.kind {
        DiffKind::Forward => {
            let f0 = counted(&xs)?;
            for i in 0..x.len() {
                let h = scheme.step_at(x[i]);
                xs[i] = x[i] + h;
                let f1 = counted(&xs)?;
                xs[i] = x[i];
                grad.push((f1 - f0) / h);
            }
        }
        DiffKind::Center => {
            for i in 0..x.len() {
                let h = scheme.step_at(x[i]);
                xs[i] = x[i] + h;
                let fp = counted(&xs)?;
                xs[i] = x[i] - h;
                let fm = counted(&xs)?;
                xs[i] = x[i];
                grad.push((fp - fm) / (2.0 * h));
            }
        }
    }
    Ok((grad, evals.get()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorCurveRow {
    pub h: f64,
    pub e_forward: f64,
    pub e_center: f64,
}

/// `count` points log-spaced between `lo` and `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && lo.is_finite() && hi.is_finite()) || count < 2 {
        return Err(AdError::InvalidArgument(format!(
            "bad log grid [{lo}, {hi}] with {count} points"
        )));
    }
    let (a, b) = (lo.log10(), hi.log10());
    let step = (b - a) / (count - 1) as f64;
    Ok((0..count)
        .map(|k| {
            if k + 1 == count {
                hi
            } else {
                10f64.powf(a + step * k as f64)
            }
        })
        .collect())
}

/// 100 log-spaced steps in `[1e-14, 1e-1]`.
pub fn default_h_grid() -> Vec<f64> {
    log_grid(1e-14, 1e-1, 100).expect("static grid")
}

/// Absolute errors of forward and center differences of
/// `64x(1-x)(1-2x)^2(1-8x+8x^2)^2` at `x0`, against its exact derivative.
pub fn error_curve(x0: f64, h_grid: &[f64]) -> Result<Vec<ErrorCurveRow>> {
    let exact = logistic_dl_closed(4, x0)?;
    let f = logistic_l4_product;
    h_grid
        .iter()
        .map(|&h| {
            check_step(h)?;
            let fwd = (f(x0 + h) - f(x0)) / h;
            let ctr = (f(x0 + h) - f(x0 - h)) / (2.0 * h);
            Ok(ErrorCurveRow {
                h,
                e_forward: (fwd - exact).abs(),
                e_center: (ctr - exact).abs(),
            })
        })
        .collect()
}

/// Least-squares slope of `log10 e` against `log10 h` over rows with
/// `lo <= h <= hi`.
pub fn loglog_slope(rows: &[ErrorCurveRow], lo: f64, hi: f64, center: bool) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.h >= lo && r.h <= hi)
        .map(|r| {
            let e = if center { r.e_center } else { r.e_forward };
            (r.h.log10(), e.log10())
        })
        .filter(|(_, e)| e.is_finite())
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}
