//! Relative-timing benchmark of Helmholtz gradients.

use std::hint::black_box;
use std::time::{Duration, Instant};

use super::counting::{count_ops, count_reverse_ops};
use super::functions::{helmholtz_eval, helmholtz_make, HelmholtzSpec};
use crate::dual::grad_forward;
use crate::error::{AdError, Result};
use crate::numdiff::{grad_numeric, DiffScheme};
use crate::tape::grad_reverse;

pub const DEFAULT_N_LIST: [usize; 8] = [1, 8, 15, 22, 29, 36, 43, 50];
pub const DEFAULT_REPS: usize = 1000;

pub const CSV_HEADER: &str = "n,t_f,t_num,t_fwd,t_rev,rel_n1_num,rel_n1_fwd,rel_n1_rev,rel_col_num,rel_col_fwd,rel_col_rev,op_ratio_rev";

/// Per-sample batch duration aimed for when calibrating inner loop counts.
const BATCH_TARGET: Duration = Duration::from_micros(40);
const WARMUP_BATCHES: usize = 20;

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub n_list: Vec<usize>,
    pub seed: u64,
    pub reps: usize,
    /// When false only operation counts are produced and every timing
    /// column is zero.
    pub timed: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            n_list: DEFAULT_N_LIST.to_vec(),
            seed: 42,
            reps: DEFAULT_REPS,
            timed: true,
        }
    }
}

/// One row of the benchmark. Times are seconds per call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkRecord {
    pub n: usize,
    pub t_f: f64,
    pub t_num: f64,
    pub t_fwd: f64,
    pub t_rev: f64,
    pub rel_n1_num: f64,
    pub rel_n1_fwd: f64,
    pub rel_n1_rev: f64,
    pub rel_col_num: f64,
    pub rel_col_fwd: f64,
    pub rel_col_rev: f64,
    pub op_ratio_rev: f64,
}

impl BenchmarkRecord {
    pub fn csv_fields(&self) -> [f64; 11] {
        [
            self.t_f,
            self.t_num,
            self.t_fwd,
            self.t_rev,
            self.rel_n1_num,
            self.rel_n1_fwd,
            self.rel_n1_rev,
            self.rel_col_num,
            self.rel_col_fwd,
            self.rel_col_rev,
            self.op_ratio_rev,
        ]
    }
}

/// Median seconds per call of `op`. Each sample is a batch of calls sized
/// so that one batch takes about [`BATCH_TARGET`].
pub fn time_median<F: FnMut()>(reps: usize, mut op: F) -> f64 {
    time_medians(reps, &mut [&mut op])[0]
}

/// Like [`time_median`] for several operations at once. Samples are taken in
/// interleaved batches so that drifts in machine speed affect every
/// operation alike.
pub fn time_medians(reps: usize, ops: &mut [&mut dyn FnMut()]) -> Vec<f64> {
    let inner: Vec<usize> = ops.iter_mut().map(|op| calibrate(&mut **op)).collect();
    for _ in 0..WARMUP_BATCHES {
        for (op, &k) in ops.iter_mut().zip(&inner) {
            batch(&mut **op, k);
        }
    }
    let mut samples = vec![Vec::with_capacity(reps.max(1)); ops.len()];
    for _ in 0..reps.max(1) {
        for ((op, &k), s) in ops.iter_mut().zip(&inner).zip(samples.iter_mut()) {
            s.push(batch(&mut **op, k) / k as f64);
        }
    }
    samples.into_iter().map(median).collect()
}

fn batch(op: &mut dyn FnMut(), inner: usize) -> f64 {
    let start = Instant::now();
    for _ in 0..inner {
        op();
    }
    start.elapsed().as_secs_f64()
}

fn calibrate(op: &mut dyn FnMut()) -> usize {
    let mut inner = 1usize;
    while batch(op, inner) < BATCH_TARGET.as_secs_f64() && inner < 1 << 24 {
        inner *= 2;
    }
    inner
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    }
}

struct Timings {
    f: f64,
    num: f64,
    fwd: f64,
    rev: f64,
}

fn time_methods(spec: &HelmholtzSpec, reps: usize) -> Timings {
    let x = spec.standard_point();
    let f = |p: &[f64]| helmholtz_eval(spec, p);
    let t = time_medians(
        reps,
        &mut [
            &mut || {
                black_box(f(black_box(&x)).ok());
            },
            &mut || {
                black_box(grad_numeric(f, black_box(&x), DiffScheme::center()).ok());
            },
            &mut || {
                black_box(grad_forward(|p| helmholtz_eval(spec, p), black_box(&x)).ok());
            },
            &mut || {
                black_box(grad_reverse(|p| helmholtz_eval(spec, p), black_box(&x)).ok());
            },
        ],
    );
    Timings {
        f: t[0],
        num: t[1],
        fwd: t[2],
        rev: t[3],
    }
}

/// Operation count of one reverse gradient divided by that of `f`.
pub fn op_ratio_rev(spec: &HelmholtzSpec) -> Result<f64> {
    let x = spec.standard_point();
    let base = count_ops(|p| helmholtz_eval(spec, p), &x)?.total();
    let rev = count_reverse_ops(|p| helmholtz_eval(spec, p), &x)?.total();
    Ok(rev as f64 / base as f64)
}

/// Times `f` and its numeric, forward and reverse gradients at the standard
/// point for each dimension, relative to `f` at `n = 1` and at the same `n`.
pub fn benchmark_helmholtz(cfg: &BenchConfig) -> Result<Vec<BenchmarkRecord>> {
    if cfg.reps == 0 {
        return Err(AdError::InvalidArgument("reps must be at least 1".into()));
    }
    let rel = |t: f64, base: f64| if base > 0.0 { t / base } else { 0.0 };

    let mut out = Vec::with_capacity(cfg.n_list.len());
    for &n in &cfg.n_list {
        let spec = helmholtz_make(n, cfg.seed)?;
        // surfaces domain errors before timing swallows them
        helmholtz_eval(&spec, &spec.standard_point())?;
        let ratio = op_ratio_rev(&spec)?;
        let t = if cfg.timed {
            time_methods(&spec, cfg.reps)
        } else {
            Timings {
                f: 0.0,
                num: 0.0,
                fwd: 0.0,
                rev: 0.0,
            }
        };
        out.push(BenchmarkRecord {
            n,
            t_f: t.f,
            t_num: t.num,
            t_fwd: t.fwd,
            t_rev: t.rev,
            rel_n1_num: 0.0,
            rel_n1_fwd: 0.0,
            rel_n1_rev: 0.0,
            rel_col_num: rel(t.num, t.f),
            rel_col_fwd: rel(t.fwd, t.f),
            rel_col_rev: rel(t.rev, t.f),
            op_ratio_rev: ratio,
        });
    }

    // the n = 1 row already carries the baseline when it was requested
    let baseline = match out.iter().find(|r| r.n == 1) {
        Some(r) => r.t_f,
        None if cfg.timed => {
            let spec = helmholtz_make(1, cfg.seed)?;
            let x = spec.standard_point();
            time_median(cfg.reps, || {
                black_box(helmholtz_eval(&spec, black_box(&x)).ok());
            })
        }
        None => 0.0,
    };
    for r in &mut out {
        r.rel_n1_num = rel(r.t_num, baseline);
        r.rel_n1_fwd = rel(r.t_fwd, baseline);
        r.rel_n1_rev = rel(r.t_rev, baseline);
    }
    Ok(out)
}
