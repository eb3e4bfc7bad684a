//! Numerical laboratory for double-obstacle quasi-variational inequalities
//! arising from zero-sum games of impulse control against randomized control.
//!
//! The value `v` of the game solves
//!
//! ```text
//! min{ v − Mv, max{ v − Nv, −∂_t v − L v − f } } = 0,   v(T, ·) = ψ,
//! ```
//!
//! where `Mv = max_b { v(x + ξ) − ℓ }` is the maximizer's impulse operator and
//! `Nv = min_e { v(x + γ) + χ }` the minimizer's intervention operator. The
//! crate solves it on a grid three ways (a lower monotone iteration, an upper
//! penalized iteration and a direct projection fixed point), extracts the
//! feedback strategies, and checks the result by Monte Carlo simulation and
//! residual tests.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod artifact;
pub mod cli;
pub mod config;
pub mod error;
pub mod expr;
pub mod grid;
pub mod model;
pub mod models;
pub mod operators;
pub mod simulate;
pub mod solvers;
pub mod strategy;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, ValueField};
pub use model::{ProblemSource, ProblemSpec};
pub use solvers::{SolveParams, TimeStepping};
