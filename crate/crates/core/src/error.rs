use crate::expr::{EvalError, ParseError};
use crate::model::LoopReport;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("expression `{source_text}`: {err}")]
    Parse { source_text: String, err: ParseError },

    #[error("evaluating {what} at {point}: {err}")]
    Eval {
        what: &'static str,
        point: String,
        err: EvalError,
    },

    #[error("invalid problem: {0}")]
    Invalid(String),

    #[error("grid: {0}")]
    Grid(String),

    #[error("point {point:?} lies outside the box [-{radius}, {radius}]^d beyond the clamp tolerance")]
    OutsideBox { point: Vec<f64>, radius: f64 },

    #[error("explicit step violates the CFL bound: dt = {dt} but stability requires dt <= {required}")]
    Cfl { dt: f64, required: f64 },

    #[error("generator stencil is not monotone at node {node}: {reason}")]
    NotMonotone { node: usize, reason: String },

    #[error("fixed point not reached at time index {time_index} after {iterations} sweeps (last change {last_delta:e})")]
    NoConvergence {
        time_index: usize,
        iterations: usize,
        last_delta: f64,
    },

    #[error("penalty ladder exhausted without convergence (last delta {last_delta:e})")]
    LadderExhausted { last_delta: f64 },

    #[error("monotonicity violated in {context}: decrease of {amount:e} at time index {time_index}, node {node} (tolerance {tolerance:e})")]
    Monotonicity {
        context: String,
        amount: f64,
        time_index: usize,
        node: usize,
        tolerance: f64,
    },

    #[error("no-free-loop scan exceeded its budget after {} sequences", partial.sequences_checked)]
    LoopBudget { partial: Box<LoopReport> },

    #[error("comparison inputs rejected: {0}")]
    ComparisonPrecondition(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
