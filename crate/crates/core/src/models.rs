//! Reference problems used by the examples, tests and shipped configs.
//!
//! All are one-dimensional with horizon `T = 1`. In the teleport family an
//! impulse with mark `b` moves the state to `b` and a jump with mark `e`
//! moves it to `e`, with `U = E = {−1, 0, 1}` and unit jump weights.

use crate::model::{uniform_nodes, ProblemSource};

/// `ψ = f = 0`, `ℓ = χ = 1`, no diffusion. The value is identically zero.
pub fn zero() -> ProblemSource {
    ProblemSource::one_dim()
}

/// Teleport model with `f = x²`, `σ = 0.3`, `ℓ = 0.7`, `χ = 1`, `ψ = 0`.
/// Both players intervene on part of `[−2, 2]`.
pub fn teleport() -> ProblemSource {
    let mut src = ProblemSource::one_dim();
    src.diffusion = vec![vec!["0.3".into()]];
    src.impulse_cost = "0.7".into();
    src.cost_floor = 0.7;
    src.running = "x1^2".into();
    src
}

/// Pure diffusion `σ = 1` with `f = x²` and interventions priced out
/// (`ℓ = χ = 1000`); `v(0, 0) ≈ T²/2` on a wide box.
pub fn diffusion() -> ProblemSource {
    let mut src = ProblemSource::one_dim();
    src.diffusion = vec![vec!["1".into()]];
    src.impulse_cost = "1000".into();
    src.jump_cost = "1000".into();
    src.cost_floor = 1000.0;
    src.running = "x1^2".into();
    src
}

/// Constant shifts `ξ = +1`, `γ = −1` with `ℓ = χ = 1`: an impulse followed
/// by a jump returns to the start at zero net cost.
pub fn trap() -> ProblemSource {
    let mut src = ProblemSource::one_dim();
    src.impulse = vec!["1".into()];
    src.jump = vec!["-1".into()];
    src.impulse_nodes = uniform_nodes(0.0, 0.0, 1);
    src.jump_nodes = uniform_nodes(0.0, 0.0, 1);
    src.jump_weights = vec![1.0];
    src.impulse_bound = None;
    src
}
