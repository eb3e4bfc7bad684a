//! Run configuration files.
//!
//! A config is a TOML document with the sections `[problem]`, `[spaces]`,
//! `[grid]` (required) and `[solver]`, `[simulate]`, `[verify]` (optional).
//! Coefficients are quoted expressions; unknown keys are rejected.

use std::path::Path;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::expr;
use crate::model::{uniform_nodes, NoFreeLoopParams, Point, ProblemSource};
use crate::solvers::{Projection, SolveParams, TimeStepping};
use crate::verify::PerturbParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: RawProblem,
    spaces: RawSpaces,
    grid: GridConfig,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    simulate: RawSimulate,
    #[serde(default)]
    verify: RawVerify,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    dimension: usize,
    horizon: f64,
    drift: Vec<String>,
    diffusion: Vec<Vec<String>>,
    impulse: Vec<String>,
    impulse_cost: String,
    jump: Vec<String>,
    jump_cost: String,
    running_reward: String,
    terminal: String,
    #[serde(default = "yes")]
    state_only: bool,
    impulse_bound: Option<f64>,
    cost_floor: f64,
    #[serde(default)]
    lipschitz_f: f64,
    #[serde(default = "two")]
    growth_exponent: f64,
}

fn yes() -> bool {
    true
}

fn two() -> f64 {
    2.0
}

/// Uniform 1-D node range.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRange {
    lo: f64,
    hi: f64,
    count: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpaces {
    impulse_nodes: Option<Vec<Vec<f64>>>,
    impulse_range: Option<RawRange>,
    jump_nodes: Option<Vec<Vec<f64>>>,
    jump_range: Option<RawRange>,
    jump_weights: Vec<f64>,
}

/// `[grid]` section.
#[derive(Debug, Clone, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub radius: f64,
    pub nx: usize,
    pub nt: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    mode: Option<String>,
    penalty_ladder: Option<Vec<f64>>,
    obstacle_ladder: Option<Vec<f64>>,
    fp_tol: Option<f64>,
    max_inner: Option<usize>,
    lower_iterations: Option<usize>,
    sandwich_tol: Option<f64>,
    projection: Option<String>,
    gauss_seidel: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSimulate {
    paths: Option<usize>,
    dt: Option<f64>,
    seed: Option<u64>,
    t0: Option<f64>,
    x0: Option<Vec<f64>>,
    activation_tol: Option<f64>,
    dump_paths: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVerify {
    theta: Option<f64>,
    varpi_min: Option<f64>,
    varpi_max: Option<f64>,
    varpi_count: Option<usize>,
    rho: Option<f64>,
    kappa: Option<Vec<f64>>,
    h1: Option<f64>,
    h2: Option<f64>,
    max_depth: Option<usize>,
    loop_x0: Option<Vec<f64>>,
    validation_samples: Option<usize>,
    validation_radius: Option<f64>,
    validation_seed: Option<u64>,
}

/// `[simulate]` section with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub paths: usize,
    /// Simulation step; defaults to `Δt / 4`.
    pub dt: Option<f64>,
    pub seed: u64,
    pub t0: f64,
    pub x0: Point,
    /// Defaults to `10 (Δt + Δx²)`.
    pub activation_tol: Option<f64>,
    /// Number of recorded paths written to CSV (0 disables the dump).
    pub dump_paths: usize,
}

/// `[verify]` section with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct VerifyConfig {
    pub perturb: PerturbParams,
    pub kappa: Vec<f64>,
    pub loops: NoFreeLoopParams,
    pub loop_x0: Point,
    pub validation_samples: usize,
    /// Defaults to the grid radius.
    pub validation_radius: Option<f64>,
    pub validation_seed: u64,
}

/// A parsed configuration file.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSource,
    pub grid: GridConfig,
    pub solver: SolveParams,
    pub simulate: SimulateConfig,
    pub verify: VerifyConfig,
    /// SHA-256 of the file bytes, hex encoded.
    pub hash: String,
}

fn section_at(text: &str, offset: usize) -> Option<String> {
    text[..offset.min(text.len())]
        .lines()
        .rev()
        .find_map(|l| {
            let l = l.trim();
            (l.starts_with('[') && l.ends_with(']')).then(|| l[1..l.len() - 1].trim().to_string())
        })
}

/// Key of the `key = value` line containing `offset`.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let offset = offset.min(text.len());
    let start = text[..offset].rfind('\n').map_or(0, |k| k + 1);
    let end = text[offset..].find('\n').map_or(text.len(), |k| offset + k);
    let line = &text[start..end];
    let (key, _) = line.split_once('=')?;
    let key = key.trim();
    (!key.is_empty() && !key.starts_with('[') && !key.starts_with('#')).then(|| key.to_string())
}

fn point(v: &[f64], dim: usize, key: &str) -> Result<Point> {
    if v.len() != dim {
        return Err(Error::Config(format!(
            "{key}: expected {dim} coordinates, got {}",
            v.len()
        )));
    }
    let mut p = [0.0; 2];
    p[..dim].copy_from_slice(v);
    Ok(p)
}

fn nodes(
    list: Option<Vec<Vec<f64>>>,
    range: Option<RawRange>,
    dim: usize,
    key: &str,
) -> Result<Vec<Point>> {
    match (list, range) {
        (Some(l), None) => l
            .iter()
            .enumerate()
            .map(|(k, v)| point(v, dim, &format!("spaces.{key}_nodes[{k}]")))
            .collect(),
        (None, Some(r)) => {
            if dim != 1 {
                return Err(Error::Config(format!(
                    "spaces.{key}_range is only available in dimension 1"
                )));
            }
            if r.count == 0 {
                return Err(Error::Config(format!("spaces.{key}_range.count must be >= 1")));
            }
            Ok(uniform_nodes(r.lo, r.hi, r.count))
        }
        _ => Err(Error::Config(format!(
            "spaces: give exactly one of {key}_nodes and {key}_range"
        ))),
    }
}

fn check_expr(key: &str, src: &str) -> Result<()> {
    expr::parse(src)
        .map(|_| ())
        .map_err(|e| Error::Config(format!("problem.{key}: `{src}`: {e}")))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not valid UTF-8", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let hash = hex::encode(Sha256::digest(text.as_bytes()));
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let offset = e.span().map(|s| s.start);
            let section = offset.and_then(|o| section_at(text, o));
            let mut msg = String::new();
            if let Some(s) = section {
                msg.push_str(&format!("[{s}] "));
            }
            if let Some(k) = offset.and_then(|o| key_at(text, o)) {
                msg.push_str(&format!("key `{k}`: "));
            }
            msg.push_str(e.message().trim());
            if let Some(o) = offset {
                msg.push_str(&format!(" (byte offset {o})"));
            }
            Error::Config(msg)
        })?;
        let p = raw.problem;
        let d = p.dimension;
        for (k, s) in p.drift.iter().enumerate() {
            check_expr(&format!("drift[{k}]"), s)?;
        }
        for (i, row) in p.diffusion.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                check_expr(&format!("diffusion[{i}][{j}]"), s)?;
            }
        }
        for (k, s) in p.impulse.iter().enumerate() {
            check_expr(&format!("impulse[{k}]"), s)?;
        }
        for (k, s) in p.jump.iter().enumerate() {
            check_expr(&format!("jump[{k}]"), s)?;
        }
        check_expr("impulse_cost", &p.impulse_cost)?;
        check_expr("jump_cost", &p.jump_cost)?;
        check_expr("running_reward", &p.running_reward)?;
        check_expr("terminal", &p.terminal)?;

        let s = raw.spaces;
        let problem = ProblemSource {
            dim: d,
            horizon: p.horizon,
            drift: p.drift,
            diffusion: p.diffusion,
            impulse: p.impulse,
            impulse_cost: p.impulse_cost,
            jump: p.jump,
            jump_cost: p.jump_cost,
            running: p.running_reward,
            terminal: p.terminal,
            state_only: p.state_only,
            impulse_bound: p.impulse_bound,
            cost_floor: p.cost_floor,
            lipschitz_f: p.lipschitz_f,
            growth_exponent: p.growth_exponent,
            impulse_nodes: nodes(s.impulse_nodes, s.impulse_range, d, "impulse")?,
            jump_nodes: nodes(s.jump_nodes, s.jump_range, d, "jump")?,
            jump_weights: s.jump_weights,
        };

        let dflt = SolveParams::default();
        let r = raw.solver;
        let mode = match r.mode.as_deref() {
            None | Some("explicit") => TimeStepping::Explicit,
            Some("implicit") => TimeStepping::Implicit,
            Some(other) => {
                return Err(Error::Config(format!(
                    "solver.mode: expected \"explicit\" or \"implicit\", got \"{other}\""
                )))
            }
        };
        let projection = match r.projection.as_deref() {
            None | Some("min-max") => Projection::MinMax,
            Some("max-min") => Projection::MaxMin,
            Some(other) => {
                return Err(Error::Config(format!(
                    "solver.projection: expected \"min-max\" or \"max-min\", got \"{other}\""
                )))
            }
        };
        let solver = SolveParams {
            mode,
            penalty_ladder: r.penalty_ladder.unwrap_or(dflt.penalty_ladder),
            obstacle_ladder: r.obstacle_ladder.unwrap_or(dflt.obstacle_ladder),
            fp_tol: r.fp_tol.unwrap_or(dflt.fp_tol),
            max_inner: r.max_inner.unwrap_or(dflt.max_inner),
            lower_iterations: r.lower_iterations.unwrap_or(dflt.lower_iterations),
            sandwich_tol: r.sandwich_tol.unwrap_or(dflt.sandwich_tol),
            projection,
            gauss_seidel: r.gauss_seidel.unwrap_or(false),
        };
        solver
            .validate()
            .map_err(|e| Error::Config(format!("[solver] {e}")))?;

        let m = raw.simulate;
        let simulate = SimulateConfig {
            paths: m.paths.unwrap_or(10_000),
            dt: m.dt,
            seed: m.seed.unwrap_or(20240601),
            t0: m.t0.unwrap_or(0.0),
            x0: point(&m.x0.unwrap_or(vec![0.0; d]), d, "simulate.x0")?,
            activation_tol: m.activation_tol,
            dump_paths: m.dump_paths.unwrap_or(0),
        };

        let v = raw.verify;
        let loops = NoFreeLoopParams::new(
            v.h1.unwrap_or(1e-6),
            v.h2.unwrap_or(0.25),
            v.max_depth.unwrap_or(4),
        )
        .map_err(|e| Error::Config(format!("[verify] {e}")))?;
        let verify = VerifyConfig {
            perturb: PerturbParams::geometric(
                v.theta.unwrap_or(1.0),
                v.varpi_min.unwrap_or(0.01),
                v.varpi_max.unwrap_or(100.0),
                v.varpi_count.unwrap_or(9),
                v.rho.unwrap_or(1.0),
            ),
            kappa: v.kappa.unwrap_or(vec![-1.0, 0.0, 1.0]),
            loops,
            loop_x0: point(&v.loop_x0.unwrap_or(vec![0.0; d]), d, "verify.loop_x0")?,
            validation_samples: v.validation_samples.unwrap_or(1000),
            validation_radius: v.validation_radius,
            validation_seed: v.validation_seed.unwrap_or(0),
        };

        Ok(Self {
            problem,
            grid: raw.grid,
            solver,
            simulate,
            verify,
            hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
[problem]
dimension = 1
horizon = 1.0
drift = ["0"]
diffusion = [["0.3"]]
impulse = ["b1 - x1"]
impulse_cost = "0.7"
jump = ["e1 - x1"]
jump_cost = "1"
running_reward = "x1^2"
terminal = "0"
impulse_bound = 1.0
cost_floor = 0.7

[spaces]
impulse_range = { lo = -1.0, hi = 1.0, count = 3 }
jump_nodes = [[-1.0], [0.0], [1.0]]
jump_weights = [1.0, 1.0, 1.0]

[grid]
radius = 2.0
nx = 65
nt = 64
"#;

    #[test]
    fn parses_minimal_config_with_defaults() {
        let c = RunConfig::parse(BASE).unwrap();
        assert_eq!(c.problem.impulse_nodes.len(), 3);
        assert_eq!(c.grid.nx, 65);
        assert_eq!(c.solver, SolveParams::default());
        assert_eq!(c.hash.len(), 64);
        c.problem.build().unwrap();
    }

    #[test]
    fn unknown_key_names_section_and_offset() {
        let text = BASE.replace("nt = 64", "nt = 64\nnz = 3");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("[grid]") && err.contains("nz") && err.contains("byte offset"), "{err}");
    }

    #[test]
    fn wrong_type_names_key() {
        let text = BASE.replace("nx = 65", "nx = \"a\"");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("[grid] key `nx`") && err.contains("byte offset"), "{err}");
    }

    #[test]
    fn bad_expression_names_key() {
        let text = BASE.replace("\"x1^2\"", "\"x1^\"");
        let err = RunConfig::parse(&text).unwrap_err().to_string();
        assert!(err.contains("problem.running_reward"), "{err}");
    }

    #[test]
    fn missing_section_is_an_error() {
        let text = BASE.replace("[grid]\nradius = 2.0\nnx = 65\nnt = 64\n", "");
        assert!(RunConfig::parse(&text).is_err());
    }
}
