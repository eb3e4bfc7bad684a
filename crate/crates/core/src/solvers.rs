//! Backward time-stepping solvers: penalized single-obstacle problems, the
//! double-obstacle problem with a frozen lower barrier, the lower and upper
//! monotone iterations, and the direct projection fixed point.
//!
//! Every time step computes a slice `v^m` from `v^{m+1}`. Obstacles and the
//! penalty are evaluated on the unknown slice itself, so each step is a
//! nodewise fixed point solved by sweeps. Jacobi sweeps run in parallel over
//! nodes and give results that do not depend on the thread count.

use std::fmt::{self, Write as _};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{Var, MAX_DIM};
use crate::grid::{Generator, Grid, ValueField};
use crate::model::ProblemSpec;
use crate::operators::{Interventions, ObstacleSlice};

/// How the generator and driver enter a time step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeStepping {
    /// Generator and driver at `v^{m+1}`; subject to the CFL bound.
    Explicit,
    /// Generator and driver at `v^m`, solved by nonlinear sweeps.
    Implicit,
}

/// Order of the two projections in the direct solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// `max(Mv, min(Nv, ·))`.
    MinMax,
    /// `min(Nv, max(Mv, ·))`; exposed for experiments only.
    MaxMin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveParams {
    pub mode: TimeStepping,
    /// Penalty levels `n_1 < ... < n_J` of the upper iteration.
    pub penalty_ladder: Vec<f64>,
    /// Penalty levels used to enforce `v ≤ Nv` in the frozen-barrier solver.
    pub obstacle_ladder: Vec<f64>,
    /// Fixed-point tolerance `ε_fp` between successive fields.
    pub fp_tol: f64,
    /// Sweep cap per time step.
    pub max_inner: usize,
    /// Iteration cap `K` of the lower iteration.
    pub lower_iterations: usize,
    /// Sandwich tolerance `ε_sw`.
    pub sandwich_tol: f64,
    pub projection: Projection,
    /// Sequential in-place sweeps instead of parallel Jacobi sweeps.
    pub gauss_seidel: bool,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self {
            mode: TimeStepping::Explicit,
            penalty_ladder: vec![4.0, 16.0, 64.0, 256.0],
            obstacle_ladder: (1..=7).map(|k| 10f64.powi(2 * k)).collect(),
            fp_tol: 1e-9,
            max_inner: 100_000,
            lower_iterations: 6,
            sandwich_tol: 1e-6,
            projection: Projection::MinMax,
            gauss_seidel: false,
        }
    }
}

impl SolveParams {
    pub fn validate(&self) -> Result<()> {
        let increasing = |l: &[f64]| l.windows(2).all(|w| w[0] < w[1]);
        if self.penalty_ladder.is_empty() || !increasing(&self.penalty_ladder) {
            return Err(Error::Invalid("penalty ladder must be nonempty and strictly increasing".into()));
        }
        if self.penalty_ladder[0] < 0.0 {
            return Err(Error::Invalid("penalty levels must be nonnegative".into()));
        }
        if self.obstacle_ladder.is_empty() || !increasing(&self.obstacle_ladder) {
            return Err(Error::Invalid("obstacle ladder must be nonempty and strictly increasing".into()));
        }
        if !(self.fp_tol > 0.0 && self.sandwich_tol > 0.0) {
            return Err(Error::Invalid("tolerances must be positive".into()));
        }
        if self.max_inner == 0 {
            return Err(Error::Invalid("max_inner must be >= 1".into()));
        }
        Ok(())
    }

    fn sweep_tol(&self) -> f64 {
        self.fp_tol * 1e-3
    }
}

/// Per-time-slice data shared by all solvers and the residual check.
#[derive(Debug)]
pub struct SliceData {
    pub t: f64,
    pub generator: Generator,
    pub ops: Interventions,
    /// `f(t, x_i)` when the driver is state-only.
    pub running: Option<Vec<f64>>,
}

/// Discretization of one problem on one grid.
pub struct Scheme<'a> {
    pub spec: &'a ProblemSpec,
    pub grid: &'a Grid,
    pub mode: TimeStepping,
    terminal: Vec<f64>,
    cache: Vec<Option<Arc<SliceData>>>,
    time_dependent: bool,
}

const CACHE_BYTES: usize = 64 << 20;

fn depends_on_time(spec: &ProblemSpec) -> bool {
    let mut all = vec![&spec.impulse_cost, &spec.jump_cost, &spec.running];
    all.extend(spec.drift.iter());
    all.extend(spec.diffusion.iter().flatten());
    all.extend(spec.impulse.iter());
    all.extend(spec.jump.iter());
    all.iter().any(|e| e.variables().contains(&Var::T))
}

impl<'a> Scheme<'a> {
    pub fn new(spec: &'a ProblemSpec, grid: &'a Grid, mode: TimeStepping) -> Result<Self> {
        if spec.dim != grid.dim {
            return Err(Error::Grid(format!(
                "grid dimension {} differs from problem dimension {}",
                grid.dim, spec.dim
            )));
        }
        if !spec.state_only && spec.lipschitz_f * grid.dt >= 1.0 {
            return Err(Error::Invalid(format!(
                "k_f * dt = {} must be < 1",
                spec.lipschitz_f * grid.dt
            )));
        }
        let terminal = (0..grid.node_count())
            .map(|i| spec.terminal_at(&grid.point(i)))
            .collect::<Result<Vec<_>>>()?;
        let time_dependent = depends_on_time(spec);
        let per_slice = grid.node_count()
            * (spec.impulses.len() + spec.jumps.len() + 4 * grid.dim + 2)
            * 64;
        let slices = if time_dependent { grid.time_count() } else { 1 };
        let mut scheme = Self {
            spec,
            grid,
            mode,
            terminal,
            cache: Vec::new(),
            time_dependent,
        };
        if per_slice * slices <= CACHE_BYTES {
            scheme.cache = (0..slices)
                .map(|m| scheme.build_slice(m).map(|s| Some(Arc::new(s))))
                .collect::<Result<Vec<_>>>()?;
        } else {
            scheme.cache = vec![None; slices];
        }
        if mode == TimeStepping::Explicit {
            for m in 0..if time_dependent { grid.nt } else { 1 } {
                let bound = scheme.slice(m)?.generator.cfl_bound();
                if grid.dt > bound {
                    return Err(Error::Cfl {
                        dt: grid.dt,
                        required: bound,
                    });
                }
            }
        }
        Ok(scheme)
    }

    fn build_slice(&self, m: usize) -> Result<SliceData> {
        let t = self.grid.time(m);
        let generator = self.grid.generator(self.spec, t)?;
        let ops = Interventions::build(self.spec, self.grid, t)?;
        let running = if self.spec.state_only {
            Some(
                (0..self.grid.node_count())
                    .map(|i| {
                        self.spec
                            .running_at(t, &self.grid.point(i), 0.0, &[0.0; MAX_DIM])
                    })
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok(SliceData {
            t,
            generator,
            ops,
            running,
        })
    }

    /// Data of time slice `m`, cached when small enough.
    pub fn slice(&self, m: usize) -> Result<Arc<SliceData>> {
        let k = if self.time_dependent { m } else { 0 };
        match &self.cache[k] {
            Some(s) => Ok(Arc::clone(s)),
            None => Ok(Arc::new(self.build_slice(m)?)),
        }
    }

    pub fn terminal(&self) -> &[f64] {
        &self.terminal
    }

    /// Driver values `f(t_m, x_i, y_i, σᵀD_h y)` for the slice `y`.
    pub fn driver(&self, data: &SliceData, y: &[f64]) -> Result<Vec<f64>> {
        if let Some(f) = &data.running {
            return Ok(f.clone());
        }
        (0..y.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let z = data.generator.z_at(i, y);
                self.spec.running_at(data.t, &self.grid.point(i), y[i], &z)
            })
            .collect()
    }

    /// `(v^m − v^{m+1})/Δt − L_h v^s − f(v^s)` with `s = m+1` (explicit) or
    /// `s = m` (implicit).
    pub fn pde_part(&self, m: usize, cur: &[f64], next: &[f64]) -> Result<Vec<f64>> {
        let data = self.slice(m)?;
        let s = match self.mode {
            TimeStepping::Explicit => next,
            TimeStepping::Implicit => cur,
        };
        let f = self.driver(&data, s)?;
        let dt = self.grid.dt;
        Ok((0..cur.len())
            .map(|i| (cur[i] - next[i]) / dt - data.generator.apply_at(i, s) - f[i])
            .collect())
    }

    /// Sup over grid and slices of `|f(t, x, 0, 0)|` and of `|ψ|`.
    fn data_bounds(&self) -> Result<(f64, f64)> {
        let psi = self.terminal.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut f: f64 = 0.0;
        for m in 0..self.grid.time_count() {
            let t = self.grid.time(m);
            for i in 0..self.grid.node_count() {
                let v = self
                    .spec
                    .running_at(t, &self.grid.point(i), 0.0, &[0.0; MAX_DIM])?;
                f = f.max(v.abs());
            }
            if !self.time_dependent {
                break;
            }
        }
        Ok((psi, f))
    }

    /// Constant barrier below any solution on the grid:
    /// `−(max|ψ| + T max|f(·,·,0,0)|) e^{k_f T} − 1`.
    pub fn floor_barrier(&self) -> Result<f64> {
        let (psi, f) = self.data_bounds()?;
        let k = if self.spec.state_only { 0.0 } else { self.spec.lipschitz_f };
        Ok(-(psi + self.spec.horizon * f) * (k * self.spec.horizon).exp() - 1.0)
    }
}

/// Nodewise rule applied in each sweep.
#[derive(Clone, Copy)]
enum Rule<'a> {
    /// `max(h, u)` where `u` solves the penalized equation at level `n`.
    Penalized { n: f64, barrier: Option<&'a [f64]> },
    /// `max(Mv, u)` with `u` penalized at level `n`.
    Upper { n: f64 },
    /// Projection of the unconstrained update onto `[Mv, Nv]`.
    Direct(Projection),
}

/// Root of `α u + β Σ_j λ_j (u − c_j)^+ = r`; `c` is sorted in place.
pub fn penalized_root(alpha: f64, beta: f64, r: f64, c: &mut [(f64, f64)]) -> f64 {
    let u0 = r / alpha;
    if beta == 0.0 || c.iter().all(|(cj, _)| *cj >= u0) {
        return u0;
    }
    c.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut num = r;
    let mut den = alpha;
    for k in 0..c.len() {
        num += beta * c[k].1 * c[k].0;
        den += beta * c[k].1;
        let u = num / den;
        if k + 1 == c.len() || u <= c[k + 1].0 {
            return u;
        }
    }
    unreachable!()
}

struct StepCtx<'s> {
    data: &'s SliceData,
    /// Fixed part of the right-hand side.
    base: Vec<f64>,
    /// Generator coupling at the unknown slice (implicit mode).
    implicit: bool,
    driver_on_cur: bool,
    dt: f64,
}

impl StepCtx<'_> {
    #[inline]
    fn update(&self, i: usize, cur: &[f64], f_cur: Option<&[f64]>, rule: Rule<'_>, buf: &mut Vec<(f64, f64)>) -> f64 {
        let gen = &self.data.generator;
        let ops = &self.data.ops;
        let mut r = self.base[i];
        let mut alpha = 1.0;
        if self.implicit {
            r += self.dt * gen.off_diag(i, cur);
            alpha += self.dt * gen.diag(i);
        }
        if let Some(f) = f_cur {
            r += self.dt * f[i];
        }
        match rule {
            Rule::Penalized { n, barrier } => {
                let u = self.penalized(i, cur, alpha, n, r, buf);
                match barrier {
                    Some(h) => u.max(h[i]),
                    None => u,
                }
            }
            Rule::Upper { n } => {
                let u = self.penalized(i, cur, alpha, n, r, buf);
                ops.sup_at(i, cur).0.max(u)
            }
            Rule::Direct(p) => {
                let free = r / alpha;
                let mv = ops.sup_at(i, cur).0;
                let nv = ops.inf_at(i, cur).0;
                match p {
                    Projection::MinMax => mv.max(nv.min(free)),
                    Projection::MaxMin => nv.min(mv.max(free)),
                }
            }
        }
    }

    #[inline]
    fn penalized(&self, i: usize, cur: &[f64], alpha: f64, n: f64, r: f64, buf: &mut Vec<(f64, f64)>) -> f64 {
        if n == 0.0 {
            return r / alpha;
        }
        let ops = &self.data.ops;
        buf.clear();
        for (e, l) in ops.lambda().iter().enumerate() {
            let d = ops.jump(i, e);
            buf.push((d.at.eval(cur) + d.cost, *l));
        }
        penalized_root(alpha, self.dt * n, r, buf)
    }
}

/// Backward solver for one nodewise rule.
struct Stepper<'s, 'a> {
    scheme: &'s Scheme<'a>,
    params: &'s SolveParams,
    sweeps: usize,
}

impl Stepper<'_, '_> {
    fn solve(&mut self, rule: Rule<'_>) -> Result<ValueField> {
        let grid = self.scheme.grid;
        let mut field = ValueField::zeros(grid);
        field.slice_mut(grid.nt).copy_from_slice(self.scheme.terminal());
        for m in (0..grid.nt).rev() {
            let next = field.slice(m + 1).to_vec();
            let cur = self.step(m, &next, rule)?;
            field.slice_mut(m).copy_from_slice(&cur);
        }
        Ok(field)
    }

    fn step(&mut self, m: usize, next: &[f64], rule: Rule<'_>) -> Result<Vec<f64>> {
        let scheme = self.scheme;
        let data = scheme.slice(m)?;
        let dt = scheme.grid.dt;
        let n = next.len();
        let implicit = scheme.mode == TimeStepping::Implicit;
        let driver_on_cur = implicit && !scheme.spec.state_only;
        let mut base: Vec<f64> = next.to_vec();
        if !implicit {
            let f = scheme.driver(&data, next)?;
            for i in 0..n {
                base[i] += dt * (data.generator.apply_at(i, next) + f[i]);
            }
        } else if scheme.spec.state_only {
            let f = data.running.as_ref().expect("state-only slice carries f");
            for i in 0..n {
                base[i] += dt * f[i];
            }
        }
        let ctx = StepCtx {
            data: &data,
            base,
            implicit,
            driver_on_cur,
            dt,
        };
        let tol = self.params.sweep_tol();
        let mut cur = next.to_vec();
        let mut new = vec![0.0; n];
        let mut last = f64::INFINITY;
        for _ in 0..self.params.max_inner {
            self.sweeps += 1;
            let f_cur = if ctx.driver_on_cur {
                Some(scheme.driver(&data, &cur)?)
            } else {
                None
            };
            let delta = if self.params.gauss_seidel {
                let mut buf = Vec::new();
                let mut delta: f64 = 0.0;
                for i in 0..n {
                    let u = ctx.update(i, &cur, f_cur.as_deref(), rule, &mut buf);
                    delta = delta.max((u - cur[i]).abs());
                    cur[i] = u;
                }
                delta
            } else {
                new.par_iter_mut()
                    .enumerate()
                    .with_min_len(128)
                    .for_each_init(Vec::new, |buf, (i, out)| {
                        *out = ctx.update(i, &cur, f_cur.as_deref(), rule, buf);
                    });
                let delta = cur
                    .iter()
                    .zip(&new)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                std::mem::swap(&mut cur, &mut new);
                delta
            };
            if !delta.is_finite() {
                return Err(Error::NoConvergence {
                    time_index: m,
                    iterations: self.sweeps,
                    last_delta: delta,
                });
            }
            last = delta;
            if delta <= tol {
                return Ok(cur);
            }
        }
        Err(Error::NoConvergence {
            time_index: m,
            iterations: self.params.max_inner,
            last_delta: last,
        })
    }
}

/// A nodewise decrease recorded by a monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneViolation {
    /// Position in the sequence of the later iterate.
    pub step: usize,
    pub amount: f64,
    pub time_index: usize,
    pub node: usize,
}

/// Outcome of an iterated solve.
#[derive(Debug, Clone)]
pub struct SolveReport {
    pub field: ValueField,
    /// Every iterate in order.
    pub iterates: Vec<ValueField>,
    /// Penalty level or iteration index of each iterate.
    pub levels: Vec<f64>,
    /// `sup |iterate_j − iterate_{j−1}|` for `j ≥ 1`.
    pub deltas: Vec<f64>,
    /// Ordering violations below the abort tolerance.
    pub monotonicity_violations: Vec<MonotoneViolation>,
    pub converged: bool,
    pub sweeps: usize,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn deltas_csv(&self) -> String {
        let mut s = String::from("iterate,level,delta\n");
        for (j, l) in self.levels.iter().enumerate() {
            let d = if j == 0 {
                String::new()
            } else {
                format!("{}", self.deltas[j - 1])
            };
            writeln!(s, "{j},{l},{d}").unwrap();
        }
        s
    }

    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        writeln!(s, "iterates={}", self.iterates.len()).unwrap();
        writeln!(s, "converged={}", self.converged).unwrap();
        writeln!(s, "sweeps={}", self.sweeps).unwrap();
        if let Some(d) = self.deltas.last() {
            writeln!(s, "last_delta={d}").unwrap();
        }
        writeln!(s, "monotonicity_violations={}", self.monotonicity_violations.len()).unwrap();
        let worst = self
            .monotonicity_violations
            .iter()
            .map(|v| v.amount)
            .fold(0.0, f64::max);
        writeln!(s, "worst_monotonicity_violation={worst}").unwrap();
        s
    }
}

impl fmt::Display for SolveReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} iterates, converged = {}, {} sweeps",
            self.iterates.len(),
            self.converged,
            self.sweeps
        )?;
        for (j, l) in self.levels.iter().enumerate() {
            match j {
                0 => writeln!(f, "  [{j}] level {l}")?,
                _ => writeln!(f, "  [{j}] level {l}  delta {:.3e}", self.deltas[j - 1])?,
            }
        }
        if !self.monotonicity_violations.is_empty() {
            writeln!(
                f,
                "  {} small monotonicity violations (worst {:.3e})",
                self.monotonicity_violations.len(),
                self.monotonicity_violations
                    .iter()
                    .map(|v| v.amount)
                    .fold(0.0, f64::max)
            )?;
        }
        Ok(())
    }
}

/// Checks `upper ≥ lower − 5Δt`. Larger violations abort; smaller nonzero
/// ones are recorded.
fn check_order(
    context: &str,
    lower: &ValueField,
    upper: &ValueField,
    dt: f64,
    step: usize,
    sink: &mut Vec<MonotoneViolation>,
) -> Result<()> {
    let (amount, m, i) = upper.max_shortfall(lower);
    let tolerance = 5.0 * dt;
    if amount > tolerance {
        return Err(Error::Monotonicity {
            context: context.to_string(),
            amount,
            time_index: m,
            node: i,
            tolerance,
        });
    }
    if amount > 1e-12 {
        sink.push(MonotoneViolation {
            step,
            amount,
            time_index: m,
            node: i,
        });
    }
    Ok(())
}

fn check_barrier_terminal(scheme: &Scheme<'_>, barrier: &ValueField) -> Result<()> {
    let nt = scheme.grid.nt;
    for (i, (h, p)) in barrier.slice(nt).iter().zip(scheme.terminal()).enumerate() {
        if h > p {
            return Err(Error::Invalid(format!(
                "lower barrier exceeds the terminal payoff at node {i}: {h} > {p}"
            )));
        }
    }
    Ok(())
}

/// Penalized problem `min{v − h, −v_t − L v + K^n v − f} = 0`, `v(T) = ψ`.
pub fn solve_penalized_single_obstacle(
    spec: &ProblemSpec,
    grid: &Grid,
    params: &SolveParams,
    n: f64,
    barrier: &ValueField,
) -> Result<ValueField> {
    params.validate()?;
    let scheme = Scheme::new(spec, grid, params.mode)?;
    penalized_on(&scheme, params, n, barrier, &mut 0)
}

fn penalized_on(
    scheme: &Scheme<'_>,
    params: &SolveParams,
    n: f64,
    barrier: &ValueField,
    sweeps: &mut usize,
) -> Result<ValueField> {
    if !(n >= 0.0) {
        return Err(Error::Invalid(format!("penalty level must be >= 0, got {n}")));
    }
    if !barrier.same_shape(&ValueField::zeros(scheme.grid)) {
        return Err(Error::Grid("barrier field does not match the grid".into()));
    }
    check_barrier_terminal(scheme, barrier)?;
    let mut st = Stepper {
        scheme,
        params,
        sweeps: 0,
    };
    let grid = scheme.grid;
    let mut field = ValueField::zeros(grid);
    field.slice_mut(grid.nt).copy_from_slice(scheme.terminal());
    for m in (0..grid.nt).rev() {
        let next = field.slice(m + 1).to_vec();
        let cur = st.step(
            m,
            &next,
            Rule::Penalized {
                n,
                barrier: Some(barrier.slice(m)),
            },
        )?;
        field.slice_mut(m).copy_from_slice(&cur);
    }
    *sweeps += st.sweeps;
    Ok(field)
}

/// Double-obstacle problem `min{v − h, max{v − Nv, −v_t − L v − f}} = 0`
/// with frozen lower barrier `h`, via the obstacle penalty ladder.
pub fn solve_double_obstacle_frozen_upper(
    spec: &ProblemSpec,
    grid: &Grid,
    params: &SolveParams,
    barrier: &ValueField,
) -> Result<SolveReport> {
    params.validate()?;
    let scheme = Scheme::new(spec, grid, params.mode)?;
    frozen_upper_on(&scheme, params, barrier)
}

fn frozen_upper_on(scheme: &Scheme<'_>, params: &SolveParams, barrier: &ValueField) -> Result<SolveReport> {
    let start = Instant::now();
    let mut sweeps = 0;
    let mut iterates: Vec<ValueField> = Vec::new();
    let mut deltas = Vec::new();
    let mut violations = Vec::new();
    let mut converged = false;
    for (j, &n) in params.obstacle_ladder.iter().enumerate() {
        let field = penalized_on(scheme, params, n, barrier, &mut sweeps)?;
        if let Some(prev) = iterates.last() {
            check_order("penalty ladder", &field, prev, scheme.grid.dt, j, &mut violations)?;
            let d = field.sup_distance(prev);
            deltas.push(d);
            iterates.push(field);
            if d < params.fp_tol {
                converged = true;
                break;
            }
        } else {
            iterates.push(field);
        }
    }
    if !converged {
        return Err(Error::LadderExhausted {
            last_delta: deltas.last().copied().unwrap_or(f64::INFINITY),
        });
    }
    let levels = params.obstacle_ladder[..iterates.len()].to_vec();
    Ok(SolveReport {
        field: iterates.last().unwrap().clone(),
        iterates,
        levels,
        deltas,
        monotonicity_violations: violations,
        converged,
        sweeps,
        wall_time: start.elapsed(),
    })
}

/// `M v` on every slice before `T`; the terminal slice is set to `ψ`.
fn sup_barrier(scheme: &Scheme<'_>, v: &ValueField) -> Result<ValueField> {
    let grid = scheme.grid;
    let mut h = ValueField::zeros(grid);
    for m in 0..grid.nt {
        let data = scheme.slice(m)?;
        let s = v.slice(m);
        let out: Vec<f64> = (0..s.len())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| data.ops.sup_at(i, s).0)
            .collect();
        h.slice_mut(m).copy_from_slice(&out);
    }
    h.slice_mut(grid.nt).copy_from_slice(scheme.terminal());
    Ok(h)
}

/// Lower monotone iteration `v_0 ≤ v_1 ≤ ... ≤ v_K`, where `v_k` solves the
/// double-obstacle problem with barrier `M v_{k−1}`.
pub fn lower_iteration(spec: &ProblemSpec, grid: &Grid, params: &SolveParams) -> Result<SolveReport> {
    params.validate()?;
    if params.lower_iterations == 0 {
        return Err(Error::Invalid("lower iteration needs K >= 1".into()));
    }
    let start = Instant::now();
    let scheme = Scheme::new(spec, grid, params.mode)?;
    let floor = scheme.floor_barrier()?;
    let mut barrier = ValueField::filled(grid, floor);
    barrier.slice_mut(grid.nt).copy_from_slice(scheme.terminal());
    let first = frozen_upper_on(&scheme, params, &barrier)?;
    let mut sweeps = first.sweeps;
    let mut violations = first.monotonicity_violations;
    let mut iterates = vec![first.field];
    let mut deltas = Vec::new();
    let mut converged = false;
    for k in 1..=params.lower_iterations {
        let prev = iterates.last().unwrap();
        let h = sup_barrier(&scheme, prev)?;
        let rep = frozen_upper_on(&scheme, params, &h)?;
        sweeps += rep.sweeps;
        violations.extend(rep.monotonicity_violations);
        check_order("lower iteration", prev, &rep.field, grid.dt, k, &mut violations)?;
        let d = rep.field.sup_distance(prev);
        deltas.push(d);
        iterates.push(rep.field);
        if d < params.fp_tol {
            converged = true;
            break;
        }
    }
    let levels = (0..iterates.len()).map(|k| k as f64).collect();
    Ok(SolveReport {
        field: iterates.last().unwrap().clone(),
        iterates,
        levels,
        deltas,
        monotonicity_violations: violations,
        converged,
        sweeps,
        wall_time: start.elapsed(),
    })
}

/// Upper iteration: for each level `n` of the penalty ladder, solves
/// `min{v − Mv, −v_t − L v + K^n v − f} = 0`.
pub fn upper_iteration(spec: &ProblemSpec, grid: &Grid, params: &SolveParams) -> Result<SolveReport> {
    params.validate()?;
    let start = Instant::now();
    let scheme = Scheme::new(spec, grid, params.mode)?;
    let mut st = Stepper {
        scheme: &scheme,
        params,
        sweeps: 0,
    };
    let mut iterates: Vec<ValueField> = Vec::new();
    let mut deltas = Vec::new();
    let mut violations = Vec::new();
    for (j, &n) in params.penalty_ladder.iter().enumerate() {
        let field = st.solve(Rule::Upper { n })?;
        if let Some(prev) = iterates.last() {
            check_order("upper iteration", &field, prev, grid.dt, j, &mut violations)?;
            deltas.push(field.sup_distance(prev));
        }
        iterates.push(field);
    }
    let converged = deltas.last().is_some_and(|d| *d < params.fp_tol);
    Ok(SolveReport {
        field: iterates.last().unwrap().clone(),
        iterates,
        levels: params.penalty_ladder.clone(),
        deltas,
        monotonicity_violations: violations,
        converged,
        sweeps: st.sweeps,
        wall_time: start.elapsed(),
    })
}

/// Direct fixed point `v = max(Mv, min(Nv, ṽ))` on every slice, with the
/// obstacle fields cached on the result.
pub fn solve_direct(spec: &ProblemSpec, grid: &Grid, params: &SolveParams) -> Result<ValueField> {
    params.validate()?;
    let scheme = Scheme::new(spec, grid, params.mode)?;
    direct_on(&scheme, params)
}

pub(crate) fn direct_on(scheme: &Scheme<'_>, params: &SolveParams) -> Result<ValueField> {
    let mut st = Stepper {
        scheme,
        params,
        sweeps: 0,
    };
    let p = params.projection;
    let mut field = st.solve(Rule::Direct(p))?;
    let grid = scheme.grid;
    let mut lower = Vec::with_capacity(grid.node_count() * grid.time_count());
    let mut upper = Vec::with_capacity(grid.node_count() * grid.time_count());
    for m in 0..grid.time_count() {
        let obs = ObstacleSlice::compute(&scheme.slice(m)?.ops, field.slice(m));
        lower.extend(obs.mv);
        upper.extend(obs.nv);
    }
    field.lower_obstacle = Some(lower);
    field.upper_obstacle = Some(upper);
    Ok(field)
}

/// Ordering of the lower limit, the upper limit and the direct solution.
#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `max (v_K − v̄_{n_J})^+`.
    pub order_violation: f64,
    /// `max (v̄_{n_J} − v_K)`.
    pub width: f64,
    /// `max |direct − v_K|`.
    pub direct_to_lower: f64,
    /// `max |direct − v̄_{n_J}|`.
    pub direct_to_upper: f64,
    /// `max (v_K − direct)^+` and `max (direct − v̄_{n_J})^+`.
    pub direct_below_lower: f64,
    pub direct_above_upper: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl GapReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "order_violation={}\nwidth={}\ndirect_to_lower={}\ndirect_to_upper={}\n\
             direct_below_lower={}\ndirect_above_upper={}\ntolerance={}\npass={}\n",
            self.order_violation,
            self.width,
            self.direct_to_lower,
            self.direct_to_upper,
            self.direct_below_lower,
            self.direct_above_upper,
            self.tolerance,
            self.pass
        )
    }
}

impl fmt::Display for GapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sandwich {}", if self.pass { "PASS" } else { "FAIL" })?;
        writeln!(f, "  max (lower - upper)^+   {:.6e}", self.order_violation)?;
        writeln!(f, "  max (upper - lower)     {:.6e}", self.width)?;
        writeln!(f, "  max |direct - lower|    {:.6e}", self.direct_to_lower)?;
        writeln!(f, "  max |direct - upper|    {:.6e}", self.direct_to_upper)?;
        writeln!(f, "  tolerance               {:.6e}", self.tolerance)
    }
}

/// Compares `v_K`, `v̄_{n_J}` and the direct field. PASS needs the three
/// fields ordered up to `tol = 10 (Δt + Δx²) + ε_sw`. The width
/// `max (v̄_{n_J} − v_K)` is reported but not checked.
pub fn sandwich_gap(
    lower: &SolveReport,
    upper: &SolveReport,
    direct: &ValueField,
    grid: &Grid,
    params: &SolveParams,
) -> Result<GapReport> {
    let lo = &lower.field;
    let up = &upper.field;
    if !(lo.same_shape(up) && lo.same_shape(direct)) {
        return Err(Error::Grid("sandwich inputs live on different grids".into()));
    }
    let tol = 10.0 * (grid.dt + grid.dx * grid.dx) + params.sandwich_tol;
    let mut r = GapReport {
        order_violation: 0.0,
        width: f64::NEG_INFINITY,
        direct_to_lower: 0.0,
        direct_to_upper: 0.0,
        direct_below_lower: 0.0,
        direct_above_upper: 0.0,
        tolerance: tol,
        pass: false,
    };
    for ((l, u), d) in lo.values().iter().zip(up.values()).zip(direct.values()) {
        r.order_violation = r.order_violation.max(l - u);
        r.width = r.width.max(u - l);
        r.direct_to_lower = r.direct_to_lower.max((d - l).abs());
        r.direct_to_upper = r.direct_to_upper.max((d - u).abs());
        r.direct_below_lower = r.direct_below_lower.max(l - d);
        r.direct_above_upper = r.direct_above_upper.max(d - u);
    }
    r.pass = r.order_violation <= tol && r.direct_below_lower <= tol && r.direct_above_upper <= tol;
    Ok(r)
}
