//! Dense float64 numeric kernel for the fusion and planning heads.
//!
//! Everything is rank-2: a [`Matrix`] is a row-major block of `f64`, and a
//! [`Tape`] records the primitive operations applied to matrices so a scalar
//! loss can be differentiated in reverse mode. Attention, a finite-difference
//! gradient checker and plain SGD sit on top of those two types.

mod attention;
mod error;
mod gradcheck;
mod init;
mod matrix;
mod optim;
mod tape;

pub use attention::{attend, multi_head_attention, AttentionParams, AttentionVars};
pub use error::{NnError, Result};
pub use gradcheck::{grad_check, grad_check_with, GradCheckOptions, GradCheckReport};
pub use init::{seeded_rng, uniform_matrix};
pub use matrix::Matrix;
pub use optim::{sgd_step, Sgd};
pub use tape::{CustomOp, Gradients, Tape, Var};
