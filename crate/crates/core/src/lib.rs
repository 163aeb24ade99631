//! Scalar automatic differentiation.
//!
//! Programs are written once against [`Scalar`] and evaluated on plain
//! `f64`, on [`Dual`] numbers (forward mode), on tape variables [`Var`]
//! (reverse mode), or on tagged [`nest::Generic`] values for nested
//! derivatives. [`numdiff`] provides the finite-difference baseline.
//!
//! ```
//! use adkit::{bench::example_f, grad_reverse, Scalar};
//!
//! let (y, g) = grad_reverse(|x| example_f(&x[0], &x[1]), &[2.0, 5.0]).unwrap();
//! assert!((y - 11.652).abs() < 1e-3);
//! assert_eq!(g[0], 5.5);
//! ```

pub mod bench;
pub mod dual;
mod error;
pub mod nest;
pub mod numdiff;
pub mod optim;
pub mod rng;
mod scalar;
pub mod tape;

pub use bench::Objective;
pub use dual::{grad_forward, jacobian_forward, jvp, Dual, SeedVector};
pub use error::{AdError, Result};
pub use nest::{derivative, hessian, hvp, EpsilonTag, Generic};
pub use numdiff::{central_diff, forward_diff, grad_numeric, DiffKind, DiffScheme};
pub use scalar::{BinaryOp, Scalar, UnaryOp};
pub use tape::{grad_reverse, jacobian_reverse, vjp, OpKind, Tape, Var};
