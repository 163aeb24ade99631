//! Test functions, operation counting and the Helmholtz timing harness.

mod counting;
mod functions;
mod harness;

pub use counting::{count_ops, count_reverse_ops, Counted, OpCounter};
pub use functions::{
    example_f, helmholtz_eval, helmholtz_make, logistic_dl_closed, logistic_l,
    logistic_l4_product, ExampleFn, Helmholtz, HelmholtzSpec, Logistic, Objective, Quadratic,
    Rosenbrock,
};
pub use harness::{
    benchmark_helmholtz, op_ratio_rev, time_median, time_medians, BenchConfig, BenchmarkRecord, CSV_HEADER,
    DEFAULT_N_LIST, DEFAULT_REPS,
};
