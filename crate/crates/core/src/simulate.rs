//! Monte Carlo simulation of the controlled jump-diffusion under extracted
//! strategies.
//!
//! Each path owns a ChaCha8 stream selected by `(seed, path index)`, and
//! per-path results are reduced in index order, so estimates do not depend
//! on the number of worker threads.

use std::fmt::{self, Write as _};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::MAX_DIM;
use crate::grid::Grid;
use crate::model::{norm, Point, ProblemSpec};
use crate::strategy::{ImpulsePolicy, RandomizationDensity};

/// Kind of event along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Impulse(usize),
    Jump(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEvent {
    pub t: f64,
    pub kind: EventKind,
    pub before: Point,
    pub after: Point,
    pub cost: f64,
}

/// One simulated controlled trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub dt: f64,
    pub t0: f64,
    /// States at the step times; empty unless recorded.
    pub states: Vec<Point>,
    /// Brownian increments per step; empty unless recorded.
    pub increments: Vec<Point>,
    pub events: Vec<PathEvent>,
    /// Ξ: accumulated impulse cost.
    pub impulse_cost: f64,
    /// ∫ f dr.
    pub running: f64,
    /// ∫∫ χ ν λ de dr.
    pub compensation: f64,
    pub terminal: f64,
    pub payoff: f64,
    pub jump_count: usize,
    pub impulse_count: usize,
    /// The path was clamped back into the box at least once.
    pub clamped: bool,
    /// Events that moved the state beyond `K ∨ |X_before|`.
    pub bound_violations: usize,
    pub sup_norm: f64,
}

impl PathRecord {
    /// `ψ(X_T) + ∫f + ∫∫χνλ − Ξ` from the stored components.
    pub fn recomputed_payoff(&self) -> f64 {
        self.terminal + self.running + self.compensation - self.impulse_cost
    }

    /// Rows `t,x1[,x2],event,cost`; requires a recorded path.
    pub fn to_csv(&self, dim: usize) -> String {
        let mut s = String::from(if dim == 1 { "t,x1,event,cost\n" } else { "t,x1,x2,event,cost\n" });
        let mut ev = self.events.iter().peekable();
        for (k, x) in self.states.iter().enumerate() {
            let t = self.t0 + k as f64 * self.dt;
            while let Some(e) = ev.peek() {
                if e.t > t + 1e-12 {
                    break;
                }
                let (name, idx) = match e.kind {
                    EventKind::Impulse(b) => ("impulse", b),
                    EventKind::Jump(j) => ("jump", j),
                };
                write!(s, "{}", e.t).unwrap();
                for v in &e.after[..dim] {
                    write!(s, ",{v}").unwrap();
                }
                writeln!(s, ",{name}{idx},{}", e.cost).unwrap();
                ev.next();
            }
            write!(s, "{t}").unwrap();
            for v in &x[..dim] {
                write!(s, ",{v}").unwrap();
            }
            s.push_str(",step,0\n");
        }
        s
    }
}

/// Simulation inputs shared by all paths.
pub struct Simulator<'a> {
    pub spec: &'a ProblemSpec,
    pub grid: &'a Grid,
    pub policy: &'a ImpulsePolicy,
    pub density: &'a RandomizationDensity,
    pub t0: f64,
    pub x0: Point,
    pub dt: f64,
    steps: usize,
    impulse_bound: f64,
    marks: WeightedIndex<f64>,
    total_mass: f64,
}

impl<'a> Simulator<'a> {
    pub fn new(
        spec: &'a ProblemSpec,
        grid: &'a Grid,
        policy: &'a ImpulsePolicy,
        density: &'a RandomizationDensity,
        t0: f64,
        x0: Point,
        dt: f64,
    ) -> Result<Self> {
        if !spec.state_only {
            return Err(Error::Invalid(
                "simulation requires a state-only running reward f(t, x)".into(),
            ));
        }
        if !(dt > 0.0) || !(0.0..spec.horizon).contains(&t0) {
            return Err(Error::Invalid(format!("need dt > 0 and 0 <= t0 < T, got dt = {dt}, t0 = {t0}")));
        }
        let span = spec.horizon - t0;
        let steps = (span / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - span).abs() > 1e-9 * span.max(1.0) {
            return Err(Error::Invalid(format!("dt = {dt} does not divide T - t0 = {span}")));
        }
        if x0[..spec.dim].iter().any(|v| v.abs() > grid.radius) {
            return Err(Error::OutsideBox {
                point: x0[..spec.dim].to_vec(),
                radius: grid.radius,
            });
        }
        if density.marks != spec.jumps.len() {
            return Err(Error::Invalid("density marks do not match the jump measure".into()));
        }
        let samples: Vec<(f64, Point)> = (0..grid.node_count()).map(|i| (t0, grid.point(i))).collect();
        Ok(Self {
            spec,
            grid,
            policy,
            density,
            t0,
            x0,
            dt,
            steps,
            impulse_bound: spec.impulse_bound_on(&samples)?,
            marks: WeightedIndex::new(spec.jumps.weights().iter().copied())
                .map_err(|e| Error::Invalid(format!("jump weights: {e}")))?,
            total_mass: spec.jumps.total_mass(),
        })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn rng(seed: u64, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(path);
        rng
    }

    fn check_bound(&self, before: &Point, after: &Point) -> bool {
        let d = self.spec.dim;
        norm(after, d) <= self.impulse_bound.max(norm(before, d)) + 1e-9
    }

    fn clamp(&self, x: &mut Point) -> bool {
        let r = self.grid.radius;
        let mut hit = false;
        for v in x.iter_mut().take(self.spec.dim) {
            if v.abs() > r {
                *v = v.clamp(-r, r);
                hit = true;
            }
        }
        hit
    }

    /// Adds `f h` and `Σ_e χ_e n λ_e h` over the triggered marks.
    fn accrue(&self, rec: &mut PathRecord, m: usize, i: usize, t: f64, x: &Point, h: f64) -> Result<()> {
        if h <= 0.0 {
            return Ok(());
        }
        let spec = self.spec;
        rec.running += spec.running_at(t, x, 0.0, &[0.0; MAX_DIM])? * h;
        let level = self.density.level;
        for e in 0..spec.jumps.len() {
            if self.density.triggered(m, i, e) {
                rec.compensation += spec.jump_cost_at(t, x, e)? * level * spec.jumps.weights()[e] * h;
            }
        }
        Ok(())
    }

    /// Simulates path number `path` of the stream family `seed`.
    pub fn run(&self, seed: u64, path: u64, record: bool) -> Result<PathRecord> {
        let spec = self.spec;
        let d = spec.dim;
        let dt = self.dt;
        let sq = dt.sqrt();
        let level = self.density.level;
        let rate = level * self.total_mass;
        let mut rng = Self::rng(seed, path);
        let mut x = self.x0;
        let mut rec = PathRecord {
            dt,
            t0: self.t0,
            states: Vec::new(),
            increments: Vec::new(),
            events: Vec::new(),
            impulse_cost: 0.0,
            running: 0.0,
            compensation: 0.0,
            terminal: 0.0,
            payoff: 0.0,
            jump_count: 0,
            impulse_count: 0,
            clamped: false,
            bound_violations: 0,
            sup_norm: norm(&x, d),
        };
        if record {
            rec.states.reserve(self.steps + 1);
            rec.states.push(x);
        }
        for s in 0..self.steps {
            let t = self.t0 + s as f64 * dt;
            let m = self.grid.time_slice(t);
            let mut i = self.grid.nearest_node(&x);

            if self.policy.intervenes(m, i) {
                let b = self.policy.choice(m, i);
                let after = spec.impulse_destination(t, &x, b)?;
                let cost = spec.impulse_cost_at(t, &x, b)?;
                if !self.check_bound(&x, &after) {
                    rec.bound_violations += 1;
                }
                rec.impulse_cost += cost;
                rec.impulse_count += 1;
                if record {
                    rec.events.push(PathEvent {
                        t,
                        kind: EventKind::Impulse(b),
                        before: x,
                        after,
                        cost,
                    });
                }
                x = after;
                rec.clamped |= self.clamp(&mut x);
                rec.sup_norm = rec.sup_norm.max(norm(&x, d));
                i = self.grid.nearest_node(&x);
            }

            // Running reward and compensation accrue piecewise between
            // proposal times, at the state held over each piece.
            let mut held = 0.0;
            if level > 0.0 {
                // Thinning: proposals at rate n λ(E), marks ∝ λ.
                let mut clock: f64 = rng.sample::<f64, _>(Exp1) / rate;
                while clock < dt {
                    self.accrue(&mut rec, m, i, t, &x, clock - held)?;
                    held = clock;
                    let e = self.marks.sample(&mut rng);
                    if self.density.triggered(m, i, e) {
                        let te = t + clock;
                        let after = spec.jump_destination(te, &x, e)?;
                        if !self.check_bound(&x, &after) {
                            rec.bound_violations += 1;
                        }
                        rec.jump_count += 1;
                        if record {
                            rec.events.push(PathEvent {
                                t: te,
                                kind: EventKind::Jump(e),
                                before: x,
                                after,
                                cost: spec.jump_cost_at(te, &x, e)?,
                            });
                        }
                        x = after;
                        rec.clamped |= self.clamp(&mut x);
                        rec.sup_norm = rec.sup_norm.max(norm(&x, d));
                        i = self.grid.nearest_node(&x);
                    }
                    clock += rng.sample::<f64, _>(Exp1) / rate;
                }
            }
            self.accrue(&mut rec, m, i, t, &x, dt - held)?;

            let a = spec.drift_at(t, &x)?;
            let sig = spec.diffusion_at(t, &x)?;
            let mut dw = [0.0; MAX_DIM];
            for w in dw.iter_mut().take(d) {
                *w = rng.sample::<f64, _>(StandardNormal) * sq;
            }
            for k in 0..d {
                x[k] += a[k] * dt + (0..d).map(|j| sig[k][j] * dw[j]).sum::<f64>();
            }
            rec.clamped |= self.clamp(&mut x);
            rec.sup_norm = rec.sup_norm.max(norm(&x, d));
            if record {
                rec.increments.push(dw);
                rec.states.push(x);
            }
        }
        rec.terminal = spec.terminal_at(&x)?;
        rec.payoff = rec.recomputed_payoff();
        Ok(rec)
    }

    /// Runs `paths` paths in parallel and returns them in index order.
    pub fn run_many(&self, seed: u64, paths: usize) -> Result<Vec<PathRecord>> {
        (0..paths as u64)
            .into_par_iter()
            .map(|p| self.run(seed, p, false))
            .collect()
    }
}

/// One path of the controlled dynamics (recorded in full).
#[allow(clippy::too_many_arguments)]
pub fn simulate_path(
    spec: &ProblemSpec,
    grid: &Grid,
    policy: &ImpulsePolicy,
    density: &RandomizationDensity,
    t0: f64,
    x0: Point,
    dt: f64,
    seed: u64,
) -> Result<PathRecord> {
    Simulator::new(spec, grid, policy, density, t0, x0, dt)?.run(seed, 0, true)
}

/// Mean, standard error and half-width from per-path samples, summed in
/// index order.
fn mean_stderr(samples: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = samples.clone().sum::<f64>() / nf;
    let var = samples.map(|p| (p - mean) * (p - mean)).sum::<f64>() / (nf - 1.0).max(1.0);
    (mean, (var / nf).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCReport {
    pub paths: usize,
    pub mean: f64,
    pub stderr: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub target: f64,
    /// `10 (Δt + Δx² + Δt_sim)`.
    pub model_allowance: f64,
    pub pass: bool,
    pub clamped_paths: usize,
    pub bound_violations: usize,
    pub mean_impulses: f64,
    pub mean_jumps: f64,
}

impl MCReport {
    pub fn half_width(&self) -> f64 {
        1.96 * self.stderr
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "paths={}\nmean={}\nstderr={}\nci_low={}\nci_high={}\ntarget={}\n\
             model_allowance={}\nclamped_paths={}\nbound_violations={}\n\
             mean_impulses={}\nmean_jumps={}\npass={}\n",
            self.paths,
            self.mean,
            self.stderr,
            self.ci_low,
            self.ci_high,
            self.target,
            self.model_allowance,
            self.clamped_paths,
            self.bound_violations,
            self.mean_impulses,
            self.mean_jumps,
            self.pass
        )
    }
}

impl fmt::Display for MCReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "Monte Carlo {}: mean {:.6} ± {:.6} (95%), target {:.6}, allowance {:.4}",
            if self.pass { "PASS" } else { "FAIL" },
            self.mean,
            self.half_width(),
            self.target,
            self.model_allowance
        )?;
        writeln!(
            f,
            "  {} paths, {:.3} impulses and {:.3} jumps per path, {} clamped",
            self.paths, self.mean_impulses, self.mean_jumps, self.clamped_paths
        )
    }
}

/// Averages path payoffs and compares with `target`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_game_value(
    spec: &ProblemSpec,
    grid: &Grid,
    policy: &ImpulsePolicy,
    density: &RandomizationDensity,
    t0: f64,
    x0: Point,
    paths: usize,
    dt: f64,
    seed: u64,
    target: f64,
) -> Result<MCReport> {
    if paths < 100 {
        return Err(Error::Invalid(format!("need at least 100 paths, got {paths}")));
    }
    let sim = Simulator::new(spec, grid, policy, density, t0, x0, dt)?;
    let recs = sim.run_many(seed, paths)?;
    let (mean, stderr) = mean_stderr(recs.iter().map(|r| r.payoff), paths);
    let allowance = 10.0 * (grid.dt + grid.dx * grid.dx + dt);
    let half = 1.96 * stderr;
    Ok(MCReport {
        paths,
        mean,
        stderr,
        ci_low: mean - half,
        ci_high: mean + half,
        target,
        model_allowance: allowance,
        pass: (mean - target).abs() <= half + allowance,
        clamped_paths: recs.iter().filter(|r| r.clamped).count(),
        bound_violations: recs.iter().map(|r| r.bound_violations).sum(),
        mean_impulses: recs.iter().map(|r| r.impulse_count as f64).sum::<f64>() / paths as f64,
        mean_jumps: recs.iter().map(|r| r.jump_count as f64).sum::<f64>() / paths as f64,
    })
}

/// Moment constant `C` in `E sup|X|^p ≤ C (1 + |x0|^p)`, calibrated on the
/// teleport reference model and frozen.
pub const MOMENT_CONSTANT: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport {
    pub exponent: u32,
    pub paths: usize,
    /// Estimate of `E sup_s |X_s|^p`.
    pub moment: f64,
    pub stderr: f64,
    /// `moment / (1 + |x0|^p)`.
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub constant: f64,
    pub pass: bool,
}

impl MomentReport {
    pub fn to_key_values(&self) -> String {
        format!(
            "exponent={}\npaths={}\nmoment={}\nstderr={}\nratio={}\nratio_stderr={}\nconstant={}\npass={}\n",
            self.exponent,
            self.paths,
            self.moment,
            self.stderr,
            self.ratio,
            self.ratio_stderr,
            self.constant,
            self.pass
        )
    }
}

/// Estimates `E sup |X|^p` and compares with the frozen moment constant.
#[allow(clippy::too_many_arguments)]
pub fn moment_check(
    spec: &ProblemSpec,
    grid: &Grid,
    policy: &ImpulsePolicy,
    density: &RandomizationDensity,
    t0: f64,
    x0: Point,
    p: u32,
    paths: usize,
    dt: f64,
    seed: u64,
) -> Result<MomentReport> {
    if p != 2 && p != 4 {
        return Err(Error::Invalid(format!("moment exponent must be 2 or 4, got {p}")));
    }
    if paths < 2 {
        return Err(Error::Invalid("need at least 2 paths".into()));
    }
    let sim = Simulator::new(spec, grid, policy, density, t0, x0, dt)?;
    let recs = sim.run_many(seed, paths)?;
    let (moment, stderr) = mean_stderr(recs.iter().map(|r| r.sup_norm.powi(p as i32)), paths);
    let scale = 1.0 + norm(&x0, spec.dim).powi(p as i32);
    let ratio = moment / scale;
    Ok(MomentReport {
        exponent: p,
        paths,
        moment,
        stderr,
        ratio,
        ratio_stderr: stderr / scale,
        constant: MOMENT_CONSTANT,
        pass: ratio <= MOMENT_CONSTANT,
    })
}
