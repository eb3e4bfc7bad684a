//! Problem specification: coefficients, impulse and jump spaces, structural
//! constants, and sampled checks of the standing assumptions.

use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::expr::{self, Expr, Slots, Var, MAX_DIM, SLOT_COUNT};

/// A point of the state space; only the first `dim` entries are used.
pub type Point = [f64; MAX_DIM];

pub fn norm(x: &Point, dim: usize) -> f64 {
    x[..dim].iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn fmt_point(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format!("{v}")).collect();
    format!("({})", parts.join(", "))
}

/// Finite carrier of the jump measure λ on E.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpMeasure {
    nodes: Vec<Point>,
    weights: Vec<f64>,
}

impl JumpMeasure {
    pub fn new(nodes: Vec<Point>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Invalid("jump measure needs at least one node".into()));
        }
        if nodes.len() != weights.len() {
            return Err(Error::Invalid(format!(
                "jump measure has {} nodes but {} weights",
                nodes.len(),
                weights.len()
            )));
        }
        if let Some((i, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !(w.is_finite() && **w > 0.0))
        {
            return Err(Error::Invalid(format!(
                "jump weight {i} is {w}; every weight must be finite and positive"
            )));
        }
        Ok(Self { nodes, weights })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Finite impulse set U.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseSpace {
    nodes: Vec<Point>,
}

impl ImpulseSpace {
    pub fn new(nodes: Vec<Point>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::Invalid("impulse set needs at least one node".into()));
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// `n` equally spaced 1-D nodes on `[lo, hi]`.
pub fn uniform_nodes(lo: f64, hi: f64, n: usize) -> Vec<Point> {
    if n == 1 {
        return vec![[0.5 * (lo + hi), 0.0]];
    }
    (0..n)
        .map(|k| [lo + (hi - lo) * k as f64 / (n - 1) as f64, 0.0])
        .collect()
}

/// Textual form of a problem, as found in a config file.
#[derive(Debug, Clone)]
pub struct ProblemSource {
    pub dim: usize,
    pub horizon: f64,
    pub drift: Vec<String>,
    pub diffusion: Vec<Vec<String>>,
    pub impulse: Vec<String>,
    pub impulse_cost: String,
    pub jump: Vec<String>,
    pub jump_cost: String,
    pub running: String,
    pub terminal: String,
    pub state_only: bool,
    pub impulse_bound: Option<f64>,
    pub cost_floor: f64,
    pub lipschitz_f: f64,
    pub growth_exponent: f64,
    pub impulse_nodes: Vec<Point>,
    pub jump_nodes: Vec<Point>,
    pub jump_weights: Vec<f64>,
}

impl ProblemSource {
    /// One-dimensional template: zero drift, unit costs, zero rewards,
    /// teleport impulses and jumps onto {-1, 0, 1} with unit weights.
    pub fn one_dim() -> Self {
        Self {
            dim: 1,
            horizon: 1.0,
            drift: vec!["0".into()],
            diffusion: vec![vec!["0".into()]],
            impulse: vec!["b1 - x1".into()],
            impulse_cost: "1".into(),
            jump: vec!["e1 - x1".into()],
            jump_cost: "1".into(),
            running: "0".into(),
            terminal: "0".into(),
            state_only: true,
            impulse_bound: Some(1.0),
            cost_floor: 1.0,
            lipschitz_f: 0.0,
            growth_exponent: 2.0,
            impulse_nodes: uniform_nodes(-1.0, 1.0, 3),
            jump_nodes: uniform_nodes(-1.0, 1.0, 3),
            jump_weights: vec![1.0; 3],
        }
    }

    pub fn build(&self) -> Result<ProblemSpec> {
        ProblemSpec::from_source(self)
    }
}

/// Full problem data. Immutable after construction.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub dim: usize,
    pub horizon: f64,
    pub drift: Vec<Expr>,
    /// `diffusion[i][j]` is σ_ij.
    pub diffusion: Vec<Vec<Expr>>,
    pub impulse: Vec<Expr>,
    pub impulse_cost: Expr,
    pub jump: Vec<Expr>,
    pub jump_cost: Expr,
    pub running: Expr,
    pub terminal: Expr,
    pub state_only: bool,
    pub impulse_bound: Option<f64>,
    pub cost_floor: f64,
    pub lipschitz_f: f64,
    pub growth_exponent: f64,
    pub impulses: ImpulseSpace,
    pub jumps: JumpMeasure,
}

fn parse_coef(src: &str) -> Result<Expr> {
    expr::parse(src).map_err(|err| Error::Parse {
        source_text: src.to_string(),
        err,
    })
}

fn check_vars(name: &str, e: &Expr, allowed: &[Var]) -> Result<()> {
    for v in e.variables() {
        if !allowed.contains(&v) {
            let names: Vec<&str> = allowed.iter().map(|v| v.name()).collect();
            return Err(Error::Invalid(format!(
                "{name} uses variable `{v}`; allowed here: {}",
                names.join(", ")
            )));
        }
    }
    Ok(())
}

impl ProblemSpec {
    pub fn from_source(src: &ProblemSource) -> Result<Self> {
        let d = src.dim;
        if !(1..=MAX_DIM).contains(&d) {
            return Err(Error::Invalid(format!("dimension must be 1 or 2, got {d}")));
        }
        if !(src.horizon.is_finite() && src.horizon > 0.0) {
            return Err(Error::Invalid(format!("horizon must be positive, got {}", src.horizon)));
        }
        if !(src.cost_floor > 0.0) {
            return Err(Error::Invalid(format!(
                "cost floor delta must be strictly positive, got {}",
                src.cost_floor
            )));
        }
        if !(src.growth_exponent >= 1.0) {
            return Err(Error::Invalid(format!(
                "growth exponent rho must be >= 1, got {}",
                src.growth_exponent
            )));
        }
        if !(src.lipschitz_f >= 0.0) {
            return Err(Error::Invalid("Lipschitz constant k_f must be >= 0".into()));
        }
        if let Some(k) = src.impulse_bound {
            if !(k > 0.0) {
                return Err(Error::Invalid(format!("impulse bound K must be positive, got {k}")));
            }
        }
        let vec_len = |name: &str, v: &Vec<String>| -> Result<()> {
            if v.len() != d {
                return Err(Error::Invalid(format!(
                    "{name} has {} components, expected {d}",
                    v.len()
                )));
            }
            Ok(())
        };
        vec_len("drift", &src.drift)?;
        vec_len("impulse map", &src.impulse)?;
        vec_len("jump map", &src.jump)?;
        if src.diffusion.len() != d || src.diffusion.iter().any(|r| r.len() != d) {
            return Err(Error::Invalid(format!("diffusion must be a {d}x{d} matrix")));
        }

        let tx: Vec<Var> = [Var::T].into_iter().chain((0..d).map(Var::X)).collect();
        let txb: Vec<Var> = tx.iter().copied().chain((0..d).map(Var::B)).collect();
        let txe: Vec<Var> = tx.iter().copied().chain((0..d).map(Var::E)).collect();
        let mut txyz = tx.clone();
        if !src.state_only {
            txyz.push(Var::Y);
            txyz.extend((0..d).map(Var::Z));
        }
        let xs: Vec<Var> = (0..d).map(Var::X).collect();

        let parse_all = |name: &str, v: &[String], allowed: &[Var]| -> Result<Vec<Expr>> {
            v.iter()
                .map(|s| {
                    let e = parse_coef(s)?;
                    check_vars(name, &e, allowed)?;
                    Ok(e)
                })
                .collect()
        };
        let one = |name: &str, s: &str, allowed: &[Var]| -> Result<Expr> {
            let e = parse_coef(s)?;
            check_vars(name, &e, allowed)?;
            Ok(e)
        };

        let drift = parse_all("drift", &src.drift, &tx)?;
        let diffusion = src
            .diffusion
            .iter()
            .map(|row| parse_all("diffusion", row, &tx))
            .collect::<Result<Vec<_>>>()?;
        let impulse = parse_all("impulse map", &src.impulse, &txb)?;
        let jump = parse_all("jump map", &src.jump, &txe)?;

        let spec = Self {
            dim: d,
            horizon: src.horizon,
            drift,
            diffusion,
            impulse,
            impulse_cost: one("impulse cost", &src.impulse_cost, &txb)?,
            jump,
            jump_cost: one("jump cost", &src.jump_cost, &txe)?,
            running: one("running reward", &src.running, &txyz)?,
            terminal: one("terminal payoff", &src.terminal, &xs)?,
            state_only: src.state_only,
            impulse_bound: src.impulse_bound,
            cost_floor: src.cost_floor,
            lipschitz_f: src.lipschitz_f,
            growth_exponent: src.growth_exponent,
            impulses: ImpulseSpace::new(src.impulse_nodes.clone())?,
            jumps: JumpMeasure::new(src.jump_nodes.clone(), src.jump_weights.clone())?,
        };
        Ok(spec)
    }

    fn slots(&self, t: f64, x: &Point) -> Slots {
        let mut s = [0.0; SLOT_COUNT];
        s[Var::T.slot()] = t;
        for k in 0..self.dim {
            s[Var::X(k).slot()] = x[k];
        }
        s
    }

    fn eval(&self, what: &'static str, e: &Expr, s: &Slots) -> Result<f64> {
        e.eval_slots(s).map_err(|err| Error::Eval {
            what,
            point: format!("t={}, x={}", s[0], fmt_point(&s[1..1 + self.dim])),
            err,
        })
    }

    pub fn drift_at(&self, t: f64, x: &Point) -> Result<Point> {
        let s = self.slots(t, x);
        let mut out = [0.0; MAX_DIM];
        for k in 0..self.dim {
            out[k] = self.eval("drift", &self.drift[k], &s)?;
        }
        Ok(out)
    }

    /// σ(t, x) as a row-major matrix.
    pub fn diffusion_at(&self, t: f64, x: &Point) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
        let s = self.slots(t, x);
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i][j] = self.eval("diffusion", &self.diffusion[i][j], &s)?;
            }
        }
        Ok(out)
    }

    /// σσᵀ(t, x).
    pub fn covariance_at(&self, t: f64, x: &Point) -> Result<[[f64; MAX_DIM]; MAX_DIM]> {
        let sig = self.diffusion_at(t, x)?;
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..self.dim {
            for j in 0..self.dim {
                out[i][j] = (0..self.dim).map(|k| sig[i][k] * sig[j][k]).sum();
            }
        }
        Ok(out)
    }

    fn with_mark(&self, t: f64, x: &Point, mark: &Point, var: fn(usize) -> Var) -> Slots {
        let mut s = self.slots(t, x);
        for k in 0..self.dim {
            s[var(k).slot()] = mark[k];
        }
        s
    }

    /// Post-impulse state x + ξ(t, x, b).
    pub fn impulse_destination(&self, t: f64, x: &Point, b: usize) -> Result<Point> {
        let s = self.with_mark(t, x, &self.impulses.nodes[b], Var::B);
        let mut out = *x;
        for k in 0..self.dim {
            out[k] += self.eval("impulse map", &self.impulse[k], &s)?;
        }
        Ok(out)
    }

    pub fn impulse_cost_at(&self, t: f64, x: &Point, b: usize) -> Result<f64> {
        let s = self.with_mark(t, x, &self.impulses.nodes[b], Var::B);
        self.eval("impulse cost", &self.impulse_cost, &s)
    }

    /// Post-jump state x + γ(t, x, e).
    pub fn jump_destination(&self, t: f64, x: &Point, e: usize) -> Result<Point> {
        let s = self.with_mark(t, x, &self.jumps.nodes[e], Var::E);
        let mut out = *x;
        for k in 0..self.dim {
            out[k] += self.eval("jump map", &self.jump[k], &s)?;
        }
        Ok(out)
    }

    pub fn jump_cost_at(&self, t: f64, x: &Point, e: usize) -> Result<f64> {
        let s = self.with_mark(t, x, &self.jumps.nodes[e], Var::E);
        self.eval("jump cost", &self.jump_cost, &s)
    }

    /// f(t, x, y, z).
    pub fn running_at(&self, t: f64, x: &Point, y: f64, z: &Point) -> Result<f64> {
        let mut s = self.slots(t, x);
        s[Var::Y.slot()] = y;
        for k in 0..self.dim {
            s[Var::Z(k).slot()] = z[k];
        }
        self.eval("running reward", &self.running, &s)
    }

    pub fn terminal_at(&self, x: &Point) -> Result<f64> {
        let s = self.slots(0.0, x);
        self.eval("terminal payoff", &self.terminal, &s)
    }

    /// Declared K_{γ,ξ}, or the smallest K making the impulse bound hold on
    /// the supplied sample points.
    pub fn impulse_bound_on(&self, samples: &[(f64, Point)]) -> Result<f64> {
        if let Some(k) = self.impulse_bound {
            return Ok(k);
        }
        let mut k: f64 = 0.0;
        for (t, x) in samples {
            let r = norm(x, self.dim);
            for b in 0..self.impulses.len() {
                let n = norm(&self.impulse_destination(*t, x, b)?, self.dim);
                if n > r {
                    k = k.max(n);
                }
            }
            for e in 0..self.jumps.len() {
                let n = norm(&self.jump_destination(*t, x, e)?, self.dim);
                if n > r {
                    k = k.max(n);
                }
            }
        }
        Ok(k.max(f64::MIN_POSITIVE))
    }
}

/// Result of one sampled assumption check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    /// The statistic the verdict is based on (worst excess, max ratio, ...).
    pub value: f64,
    pub witness: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
    pub impulse_bound: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Machine-readable `key=value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "samples={}", self.samples);
        let _ = writeln!(out, "seed={}", self.seed);
        let _ = writeln!(out, "impulse_bound={}", self.impulse_bound);
        for c in &self.checks {
            let _ = writeln!(out, "{}.passed={}", c.name, c.passed);
            let _ = writeln!(out, "{}.value={}", c.name, c.value);
            if let Some(w) = &c.witness {
                let _ = writeln!(out, "{}.witness={}", c.name, w);
            }
        }
        let _ = writeln!(out, "all_passed={}", self.all_passed());
        out
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "assumption checks ({} samples, seed {}, K = {})",
            self.samples, self.seed, self.impulse_bound
        )?;
        for c in &self.checks {
            write!(
                f,
                "  [{}] {:<24} {:>14.6e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.value
            )?;
            if let Some(w) = &c.witness {
                write!(f, "  witness {w}")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

struct Worst {
    value: f64,
    witness: Option<String>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            witness: None,
        }
    }

    fn offer(&mut self, value: f64, witness: impl FnOnce() -> String) {
        if value > self.value {
            self.value = value;
            self.witness = Some(witness());
        }
    }
}

const CHECK_SLACK: f64 = 1e-12;

/// Samples `(t, x, x', b, e)` and checks the standing assumptions on a ball
/// of the given radius. Deterministic for a fixed `seed`.
pub fn validate_assumptions(
    spec: &ProblemSpec,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<ValidationReport> {
    if sample_count == 0 {
        return Err(Error::Invalid("sample_count must be >= 1".into()));
    }
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t_end = spec.horizon;

    // Boundary and centre points first so witnesses are reproducible and
    // the extremes of the ball are always covered.
    let mut points: Vec<(f64, Point)> = Vec::with_capacity(sample_count + 2 * d + 1);
    for k in 0..d {
        let mut p = [0.0; MAX_DIM];
        p[k] = radius;
        points.push((0.0, p));
        p[k] = -radius;
        points.push((0.0, p));
    }
    points.push((0.0, [0.0; MAX_DIM]));
    while points.len() < sample_count + 2 * d + 1 {
        let t = rng.random_range(0.0..=t_end);
        let mut p = [0.0; MAX_DIM];
        loop {
            for v in p.iter_mut().take(d) {
                *v = rng.random_range(-radius..=radius);
            }
            if norm(&p, d) <= radius {
                break;
            }
        }
        points.push((t, p));
    }

    let k_bound = spec.impulse_bound_on(&points)?;
    if radius < k_bound {
        return Err(Error::Invalid(format!(
            "sampling radius {radius} is smaller than the impulse bound K = {k_bound}"
        )));
    }

    let mut bound = Worst::new();
    let mut floor = Worst::new();
    let mut chi_sign = Worst::new();
    let mut term_lo = Worst::new();
    let mut term_hi = Worst::new();
    let mut growth_f = Worst::new();
    let mut growth_psi = Worst::new();
    let mut growth_ell = Worst::new();
    let mut growth_chi = Worst::new();

    let rho = spec.growth_exponent;
    let weight = |x: &Point| 1.0 + norm(x, d).powf(rho);

    for (t, x) in &points {
        let r = norm(x, d);
        let w = weight(x);
        for b in 0..spec.impulses.len() {
            let dest = spec.impulse_destination(*t, x, b)?;
            bound.offer(norm(&dest, d) - k_bound.max(r), || {
                format!("t={t} x={} b={b}", fmt_point(&x[..d]))
            });
            let l = spec.impulse_cost_at(*t, x, b)?;
            floor.offer(spec.cost_floor - l, || {
                format!("t={t} x={} b={b} l={l}", fmt_point(&x[..d]))
            });
            growth_ell.offer(l.abs() / w, || format!("t={t} x={}", fmt_point(&x[..d])));
        }
        for e in 0..spec.jumps.len() {
            let dest = spec.jump_destination(*t, x, e)?;
            bound.offer(norm(&dest, d) - k_bound.max(r), || {
                format!("t={t} x={} e={e}", fmt_point(&x[..d]))
            });
            let c = spec.jump_cost_at(*t, x, e)?;
            chi_sign.offer(-c, || format!("t={t} x={} e={e} chi={c}", fmt_point(&x[..d])));
            growth_chi.offer(c.abs() / w, || format!("t={t} x={}", fmt_point(&x[..d])));
        }
        let f0 = spec.running_at(*t, x, 0.0, &[0.0; MAX_DIM])?;
        growth_f.offer(f0.abs() / w, || format!("t={t} x={}", fmt_point(&x[..d])));

        // terminal consistency at T
        let psi = spec.terminal_at(x)?;
        growth_psi.offer(psi.abs() / w, || format!("x={}", fmt_point(&x[..d])));
        let mut sup = f64::NEG_INFINITY;
        for b in 0..spec.impulses.len() {
            let dest = spec.impulse_destination(t_end, x, b)?;
            sup = sup.max(spec.terminal_at(&dest)? - spec.impulse_cost_at(t_end, x, b)?);
        }
        let mut inf = f64::INFINITY;
        for e in 0..spec.jumps.len() {
            let dest = spec.jump_destination(t_end, x, e)?;
            inf = inf.min(spec.terminal_at(&dest)? + spec.jump_cost_at(t_end, x, e)?);
        }
        term_lo.offer(sup - psi, || format!("x={}", fmt_point(&x[..d])));
        term_hi.offer(psi - inf, || format!("x={}", fmt_point(&x[..d])));
    }

    // Empirical Lipschitz ratios over random pairs.
    let mut lip_a: f64 = 0.0;
    let mut lip_sigma: f64 = 0.0;
    let mut lip_gamma: f64 = 0.0;
    let mut lip_f = Worst::new();
    let y_scale = 1.0 + radius.powf(rho);
    for s in 0..sample_count {
        let (t, x) = points[s % points.len()];
        let mut xp = x;
        let h = if s % 2 == 0 { 1e-3 * radius } else { radius };
        for v in xp.iter_mut().take(d) {
            *v += rng.random_range(-h..=h);
        }
        let dx = {
            let mut diff = [0.0; MAX_DIM];
            for k in 0..d {
                diff[k] = xp[k] - x[k];
            }
            norm(&diff, d)
        };
        if dx > 0.0 {
            let a1 = spec.drift_at(t, &x)?;
            let a2 = spec.drift_at(t, &xp)?;
            let da: f64 = (0..d).map(|k| (a1[k] - a2[k]).powi(2)).sum::<f64>().sqrt();
            lip_a = lip_a.max(da / dx);
            let s1 = spec.diffusion_at(t, &x)?;
            let s2 = spec.diffusion_at(t, &xp)?;
            let ds: f64 = (0..d)
                .flat_map(|i| (0..d).map(move |j| (i, j)))
                .map(|(i, j)| (s1[i][j] - s2[i][j]).powi(2))
                .sum::<f64>()
                .sqrt();
            lip_sigma = lip_sigma.max(ds / dx);
            for e in 0..spec.jumps.len() {
                let g1 = spec.jump_destination(t, &x, e)?;
                let g2 = spec.jump_destination(t, &xp, e)?;
                // destination minus origin recovers γ
                let dg: f64 = (0..d)
                    .map(|k| ((g1[k] - x[k]) - (g2[k] - xp[k])).powi(2))
                    .sum::<f64>()
                    .sqrt();
                lip_gamma = lip_gamma.max(dg / dx);
            }
        }
        if !spec.state_only {
            let y1 = rng.random_range(-y_scale..=y_scale);
            let y2 = rng.random_range(-y_scale..=y_scale);
            let mut z1 = [0.0; MAX_DIM];
            let mut z2 = [0.0; MAX_DIM];
            for k in 0..d {
                z1[k] = rng.random_range(-y_scale..=y_scale);
                z2[k] = rng.random_range(-y_scale..=y_scale);
            }
            let denom = (y1 - y2).abs()
                + (0..d).map(|k| (z1[k] - z2[k]).powi(2)).sum::<f64>().sqrt();
            if denom > 0.0 {
                let f1 = spec.running_at(t, &x, y1, &z1)?;
                let f2 = spec.running_at(t, &x, y2, &z2)?;
                lip_f.offer((f1 - f2).abs() / denom, || {
                    format!("t={t} x={} y={y1},{y2}", fmt_point(&x[..d]))
                });
            }
        }
    }

    let finite = |w: &Worst| w.value.is_finite();
    let mut checks = vec![
        Check {
            name: "impulse_bound",
            passed: bound.value <= CHECK_SLACK,
            value: bound.value,
            witness: bound.witness.clone().filter(|_| bound.value > CHECK_SLACK),
        },
        Check {
            name: "cost_floor",
            passed: floor.value <= CHECK_SLACK,
            value: floor.value,
            witness: floor.witness.clone().filter(|_| floor.value > CHECK_SLACK),
        },
        Check {
            name: "jump_cost_sign",
            passed: chi_sign.value <= CHECK_SLACK,
            value: chi_sign.value,
            witness: chi_sign.witness.clone().filter(|_| chi_sign.value > CHECK_SLACK),
        },
        Check {
            name: "terminal_lower",
            passed: term_lo.value <= CHECK_SLACK,
            value: term_lo.value,
            witness: term_lo.witness.clone().filter(|_| term_lo.value > CHECK_SLACK),
        },
        Check {
            name: "terminal_upper",
            passed: term_hi.value <= CHECK_SLACK,
            value: term_hi.value,
            witness: term_hi.witness.clone().filter(|_| term_hi.value > CHECK_SLACK),
        },
        Check {
            name: "lipschitz_drift",
            passed: lip_a.is_finite(),
            value: lip_a,
            witness: None,
        },
        Check {
            name: "lipschitz_diffusion",
            passed: lip_sigma.is_finite(),
            value: lip_sigma,
            witness: None,
        },
        Check {
            name: "lipschitz_jump",
            passed: lip_gamma.is_finite(),
            value: lip_gamma,
            witness: None,
        },
    ];
    if !spec.state_only {
        let limit = spec.lipschitz_f * (1.0 + 1e-9) + CHECK_SLACK;
        checks.push(Check {
            name: "lipschitz_running",
            passed: lip_f.value <= limit,
            value: lip_f.value,
            witness: lip_f.witness.clone().filter(|_| lip_f.value > limit),
        });
    }
    for (name, w) in [
        ("growth_running", &growth_f),
        ("growth_terminal", &growth_psi),
        ("growth_impulse_cost", &growth_ell),
        ("growth_jump_cost", &growth_chi),
    ] {
        checks.push(Check {
            name,
            passed: finite(w),
            value: w.value,
            witness: None,
        });
    }

    Ok(ValidationReport {
        checks,
        impulse_bound: k_bound,
        samples: sample_count,
        seed,
    })
}

/// Search limits for [`no_free_loop_scan`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoFreeLoopParams {
    /// Return radius h1.
    pub closure_radius: f64,
    /// Minimal admissible |net cost| h2 of a returning chain.
    pub cost_floor: f64,
    /// Maximal chain length κ_max.
    pub max_depth: usize,
    /// Maximal number of chains visited before giving up.
    pub budget: usize,
}

impl NoFreeLoopParams {
    pub fn new(closure_radius: f64, cost_floor: f64, max_depth: usize) -> Result<Self> {
        if !(closure_radius > 0.0 && cost_floor > 0.0) {
            return Err(Error::Invalid("h1 and h2 must be strictly positive".into()));
        }
        Ok(Self {
            closure_radius,
            cost_floor,
            max_depth,
            budget: 5_000_000,
        })
    }
}

/// One intervention in a chain: player 1 impulse with mark `b`, or player 2
/// jump with mark `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LoopStep {
    Impulse(usize),
    Jump(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopViolation {
    pub steps: Vec<LoopStep>,
    /// Σ(1_{ι=1} ℓ − 1_{ι=2} χ) along the chain.
    pub net_cost: f64,
    pub end: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoopReport {
    pub violations: Vec<LoopViolation>,
    /// Smallest |net cost| over all chains that returned within h1.
    pub smallest_return_cost: Option<f64>,
    pub sequences_checked: usize,
    pub sequences_total: usize,
    pub complete: bool,
}

impl LoopReport {
    pub fn coverage(&self) -> f64 {
        self.sequences_checked as f64 / self.sequences_total.max(1) as f64
    }

    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "violations={}", self.violations.len());
        if let Some(c) = self.smallest_return_cost {
            let _ = writeln!(out, "smallest_return_cost={c}");
        }
        let _ = writeln!(out, "sequences_checked={}", self.sequences_checked);
        let _ = writeln!(out, "sequences_total={}", self.sequences_total);
        let _ = writeln!(out, "complete={}", self.complete);
        for (k, v) in self.violations.iter().enumerate() {
            let steps: Vec<String> = v
                .steps
                .iter()
                .map(|s| match s {
                    LoopStep::Impulse(b) => format!("b{b}"),
                    LoopStep::Jump(e) => format!("e{e}"),
                })
                .collect();
            let _ = writeln!(out, "violation.{k}={} cost={}", steps.join("-"), v.net_cost);
        }
        out
    }
}

/// Exhaustive depth-first search over interleaved impulse/jump chains of
/// length ≤ κ_max started from `x0` at frozen time `t`.
pub fn no_free_loop_scan(
    spec: &ProblemSpec,
    params: &NoFreeLoopParams,
    t: f64,
    x0: &Point,
) -> Result<LoopReport> {
    let branching = spec.impulses.len() + spec.jumps.len();
    let total: usize = (1..=params.max_depth)
        .map(|k| branching.saturating_pow(k as u32))
        .fold(0usize, |a, b| a.saturating_add(b));
    let mut report = LoopReport {
        violations: Vec::new(),
        smallest_return_cost: None,
        sequences_checked: 0,
        sequences_total: total,
        complete: true,
    };
    let mut chain = Vec::with_capacity(params.max_depth);
    let exhausted = scan_from(spec, params, t, x0, x0, 0.0, &mut chain, &mut report)?;
    if exhausted {
        report.complete = false;
        return Err(Error::LoopBudget {
            partial: Box::new(report),
        });
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn scan_from(
    spec: &ProblemSpec,
    params: &NoFreeLoopParams,
    t: f64,
    x0: &Point,
    x: &Point,
    cost: f64,
    chain: &mut Vec<LoopStep>,
    report: &mut LoopReport,
) -> Result<bool> {
    if chain.len() == params.max_depth {
        return Ok(false);
    }
    let moves = (0..spec.impulses.len())
        .map(LoopStep::Impulse)
        .chain((0..spec.jumps.len()).map(LoopStep::Jump));
    for step in moves {
        if report.sequences_checked >= params.budget {
            return Ok(true);
        }
        report.sequences_checked += 1;
        let (next, c) = match step {
            LoopStep::Impulse(b) => (
                spec.impulse_destination(t, x, b)?,
                cost + spec.impulse_cost_at(t, x, b)?,
            ),
            LoopStep::Jump(e) => (
                spec.jump_destination(t, x, e)?,
                cost - spec.jump_cost_at(t, x, e)?,
            ),
        };
        chain.push(step);
        let mut diff = [0.0; MAX_DIM];
        for k in 0..spec.dim {
            diff[k] = next[k] - x0[k];
        }
        if norm(&diff, spec.dim) <= params.closure_radius {
            let abs = c.abs();
            report.smallest_return_cost =
                Some(report.smallest_return_cost.map_or(abs, |m: f64| m.min(abs)));
            if abs < params.cost_floor {
                report.violations.push(LoopViolation {
                    steps: chain.clone(),
                    net_cost: c,
                    end: next,
                });
            }
        }
        let exhausted = scan_from(spec, params, t, x0, &next, c, chain, report)?;
        chain.pop();
        if exhausted {
            return Ok(true);
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teleport() -> ProblemSpec {
        ProblemSource::one_dim().build().unwrap()
    }

    #[test]
    fn teleport_model_passes_all_checks() {
        let spec = teleport();
        let report = validate_assumptions(&spec, 500, 2.0, 7).unwrap();
        assert!(report.all_passed(), "{report}");
        assert_eq!(report.impulse_bound, 1.0);
    }

    #[test]
    fn estimated_bound_of_teleport_is_one() {
        let mut src = ProblemSource::one_dim();
        src.impulse_bound = None;
        let spec = src.build().unwrap();
        let report = validate_assumptions(&spec, 500, 2.0, 7).unwrap();
        assert_eq!(report.impulse_bound, 1.0);
    }

    #[test]
    fn shifting_impulse_violates_bound_at_radius() {
        let mut src = ProblemSource::one_dim();
        src.impulse = vec!["b1".into()];
        src.impulse_nodes = vec![[1.0, 0.0]];
        let spec = src.build().unwrap();
        let report = validate_assumptions(&spec, 200, 2.0, 1).unwrap();
        let c = report.check("impulse_bound").unwrap();
        assert!(!c.passed);
        assert!(c.witness.as_deref().unwrap().contains("x=(2)"), "{:?}", c.witness);
    }

    #[test]
    fn zero_cost_fails_floor() {
        let mut src = ProblemSource::one_dim();
        src.impulse_cost = "0".into();
        let spec = src.build().unwrap();
        let report = validate_assumptions(&spec, 50, 2.0, 1).unwrap();
        assert!(!report.check("cost_floor").unwrap().passed);
        assert!(!report.all_passed());
    }

    #[test]
    fn validation_is_deterministic_in_seed() {
        let mut src = ProblemSource::one_dim();
        src.state_only = false;
        src.running = "x1^2 + 0.5*sin(y) + 0.25*z1".into();
        src.lipschitz_f = 0.75;
        let spec = src.build().unwrap();
        let a = validate_assumptions(&spec, 300, 2.0, 11).unwrap();
        let b = validate_assumptions(&spec, 300, 2.0, 11).unwrap();
        assert_eq!(a.to_key_values(), b.to_key_values());
        assert!(a.check("lipschitz_running").unwrap().passed);
    }

    #[test]
    fn running_lipschitz_check_detects_excess() {
        let mut src = ProblemSource::one_dim();
        src.state_only = false;
        src.running = "3*y".into();
        src.lipschitz_f = 1.0;
        let spec = src.build().unwrap();
        let r = validate_assumptions(&spec, 100, 2.0, 3).unwrap();
        assert!(!r.check("lipschitz_running").unwrap().passed);
    }

    #[test]
    fn domain_error_propagates_with_point() {
        let mut src = ProblemSource::one_dim();
        src.terminal = "log(x1)".into();
        let spec = src.build().unwrap();
        let err = validate_assumptions(&spec, 10, 2.0, 0).unwrap_err();
        assert!(matches!(err, Error::Eval { what: "terminal payoff", .. }), "{err}");
    }

    #[test]
    fn coefficient_variables_are_restricted() {
        let mut src = ProblemSource::one_dim();
        src.terminal = "t".into();
        assert!(src.build().is_err());
        let mut src = ProblemSource::one_dim();
        src.running = "y".into();
        assert!(src.build().is_err(), "state-only driver may not use y");
        let mut src = ProblemSource::one_dim();
        src.jump = vec!["b1".into()];
        assert!(src.build().is_err());
    }

    #[test]
    fn rejects_bad_measures() {
        assert!(JumpMeasure::new(vec![], vec![]).is_err());
        assert!(JumpMeasure::new(vec![[0.0; 2]], vec![0.0]).is_err());
        assert!(ImpulseSpace::new(vec![]).is_err());
        let mut src = ProblemSource::one_dim();
        src.cost_floor = 0.0;
        assert!(src.build().is_err());
    }

    fn trap() -> ProblemSpec {
        let mut src = ProblemSource::one_dim();
        src.impulse = vec!["1".into()];
        src.jump = vec!["-1".into()];
        src.impulse_nodes = vec![[0.0, 0.0]];
        src.jump_nodes = vec![[0.0, 0.0]];
        src.jump_weights = vec![1.0];
        src.impulse_bound = None;
        src.build().unwrap()
    }

    #[test]
    fn trap_model_has_depth_two_free_loop() {
        let spec = trap();
        let params = NoFreeLoopParams::new(1e-9, 0.5, 2).unwrap();
        let r = no_free_loop_scan(&spec, &params, 0.0, &[0.0; 2]).unwrap();
        assert!(r.complete);
        let seqs: Vec<_> = r.violations.iter().map(|v| v.steps.clone()).collect();
        assert!(seqs.contains(&vec![LoopStep::Impulse(0), LoopStep::Jump(0)]));
        assert!(seqs.contains(&vec![LoopStep::Jump(0), LoopStep::Impulse(0)]));
        assert_eq!(r.smallest_return_cost, Some(0.0));
    }

    #[test]
    fn teleport_with_cheap_jumps_has_no_length_two_violation() {
        let mut src = ProblemSource::one_dim();
        src.jump_cost = "0.25".into();
        let spec = src.build().unwrap();
        let params = NoFreeLoopParams::new(1e-9, 0.5, 2).unwrap();
        let r = no_free_loop_scan(&spec, &params, 0.0, &[0.0; 2]).unwrap();
        assert!(r.violations.iter().all(|v| v.steps.len() != 2), "{:?}", r.violations);
        // the null jump e = 0 from x0 = 0 returns at once with |cost| = 0.25
        assert!(r
            .violations
            .iter()
            .any(|v| v.steps == vec![LoopStep::Jump(1)] && (v.net_cost + 0.25).abs() < 1e-15));
    }

    #[test]
    fn budget_exhaustion_reports_partial_coverage() {
        let spec = teleport();
        let mut params = NoFreeLoopParams::new(1e-9, 0.5, 6).unwrap();
        params.budget = 100;
        match no_free_loop_scan(&spec, &params, 0.0, &[0.0; 2]) {
            Err(Error::LoopBudget { partial }) => {
                assert!(!partial.complete);
                assert_eq!(partial.sequences_checked, 100);
                assert!(partial.coverage() < 1.0);
            }
            other => panic!("expected budget error, got {other:?}"),
        }
    }
}
