//! Shared test fixtures: a randomized teleport family written out as plain
//! numbers, and oracles that evaluate it without the library's grid code.

#![allow(dead_code)]

use qvi_lab::model::ProblemSource;
use qvi_lab::solvers::TimeStepping;
use rand::Rng;

/// One-dimensional teleport game with polynomial data.
///
/// `a(x) = a0 + a1 x`, `σ` constant, `f(t, x) = f0 + f1 x + f2 x² + f3 t`,
/// `ψ(x) = p0 + p1 x + p2 x²`, `ℓ(x) = l0 + l1 x²`, `χ(x) = k0 + k1 x²`.
/// Impulse `b` moves the state to `u[b]`, jump `e` to `e[e]`.
#[derive(Debug, Clone)]
pub struct TeleportCase {
    pub horizon: f64,
    pub radius: f64,
    pub sigma: f64,
    pub a: [f64; 2],
    pub f: [f64; 4],
    pub psi: [f64; 3],
    pub ell: [f64; 2],
    pub chi: [f64; 2],
    pub u: Vec<f64>,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
}

impl TeleportCase {
    pub fn random(rng: &mut impl Rng) -> Self {
        let q = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        Self {
            horizon: rng.random_range(0.5..1.0),
            radius: rng.random_range(1.0..2.0),
            sigma: rng.random_range(0.0..0.5),
            a: [rng.random_range(-0.5..0.5), rng.random_range(-0.3..0.3)],
            f: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ],
            psi: [
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            ],
            ell: [rng.random_range(0.2..1.0), rng.random_range(0.0..0.3)],
            chi: [rng.random_range(0.2..1.0), rng.random_range(0.0..0.3)],
            u: (0..q).map(|_| rng.random_range(-1.0..1.0)).collect(),
            e: (0..m).map(|_| rng.random_range(-1.0..1.0)).collect(),
            w: (0..m).map(|_| rng.random_range(0.2..2.0)).collect(),
        }
    }

    pub fn source(&self) -> ProblemSource {
        let mut src = ProblemSource::one_dim();
        src.horizon = self.horizon;
        src.drift = vec![format!("{:?} + {:?} * x1", self.a[0], self.a[1])];
        src.diffusion = vec![vec![format!("{:?}", self.sigma)]];
        src.running = format!(
            "{:?} + {:?} * x1 + {:?} * x1^2 + {:?} * t",
            self.f[0], self.f[1], self.f[2], self.f[3]
        );
        src.terminal = format!("{:?} + {:?} * x1 + {:?} * x1^2", self.psi[0], self.psi[1], self.psi[2]);
        src.impulse = vec!["b1 - x1".into()];
        src.impulse_cost = format!("{:?} + {:?} * x1^2", self.ell[0], self.ell[1]);
        src.jump = vec!["e1 - x1".into()];
        src.jump_cost = format!("{:?} + {:?} * x1^2", self.chi[0], self.chi[1]);
        src.impulse_nodes = self.u.iter().map(|&b| [b, 0.0]).collect();
        src.jump_nodes = self.e.iter().map(|&e| [e, 0.0]).collect();
        src.jump_weights = self.w.clone();
        src.impulse_bound = Some(1.0);
        src.cost_floor = self.ell[0];
        src
    }

    pub fn drift(&self, x: f64) -> f64 {
        self.a[0] + self.a[1] * x
    }

    pub fn running(&self, t: f64, x: f64) -> f64 {
        self.f[0] + self.f[1] * x + self.f[2] * x * x + self.f[3] * t
    }

    pub fn terminal(&self, x: f64) -> f64 {
        self.psi[0] + self.psi[1] * x + self.psi[2] * x * x
    }

    pub fn ell(&self, x: f64) -> f64 {
        self.ell[0] + self.ell[1] * x * x
    }

    pub fn chi(&self, x: f64) -> f64 {
        self.chi[0] + self.chi[1] * x * x
    }

    /// Largest time step allowed by the explicit scheme on `nx` nodes.
    pub fn cfl(&self, nx: usize) -> f64 {
        let dx = 2.0 * self.radius / (nx - 1) as f64;
        let amax = self.drift(self.radius).abs().max(self.drift(-self.radius).abs());
        1.0 / (self.sigma * self.sigma / (dx * dx) + amax / dx)
    }
}

/// Uniform 1-D grid used by the oracles.
#[derive(Debug, Clone, Copy)]
pub struct Mesh {
    pub radius: f64,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
}

impl Mesh {
    pub fn dx(&self) -> f64 {
        2.0 * self.radius / (self.nx - 1) as f64
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.radius + i as f64 * self.dx()
    }

    /// Piecewise-linear interpolation of `v` at `y` (inside the box).
    pub fn interp(&self, v: &[f64], y: f64) -> f64 {
        let s = (y + self.radius) / self.dx();
        let j = (s.floor().max(0.0) as usize).min(self.nx - 2);
        let w = s - j as f64;
        (1.0 - w) * v[j] + w * v[j + 1]
    }

    /// Neighbour weights of the monotone stencil at node `i`.
    pub fn stencil(&self, case: &TeleportCase, i: usize) -> Vec<(usize, f64)> {
        let dx = self.dx();
        let mut row = Vec::new();
        if i > 0 && i + 1 < self.nx {
            let c = 0.5 * case.sigma * case.sigma / (dx * dx);
            row.push((i - 1, c));
            row.push((i + 1, c));
        }
        let a = case.drift(self.x(i));
        if a > 0.0 && i + 1 < self.nx {
            row.push((i + 1, a / dx));
        } else if a < 0.0 && i > 0 {
            row.push((i - 1, -a / dx));
        }
        row
    }
}

fn sup_op(case: &TeleportCase, mesh: &Mesh, v: &[f64], i: usize) -> f64 {
    let l = case.ell(mesh.x(i));
    case.u
        .iter()
        .map(|&b| mesh.interp(v, b) - l)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn inf_op(case: &TeleportCase, mesh: &Mesh, v: &[f64], i: usize) -> f64 {
    let c = case.chi(mesh.x(i));
    case.e
        .iter()
        .map(|&e| mesh.interp(v, e) + c)
        .fold(f64::INFINITY, f64::min)
}

/// Fixed point of a monotone map by plain iteration from `start`.
fn iterate(mut v: Vec<f64>, map: impl Fn(&[f64]) -> Vec<f64>) -> Option<Vec<f64>> {
    for _ in 0..2_000_000 {
        let w = map(&v);
        let d = v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        v = w;
        if d <= 1e-15 * (1.0 + v.iter().map(|x| x.abs()).fold(0.0, f64::max)) {
            return Some(v);
        }
    }
    None
}

/// Backward value iteration for the projected scheme. Each slice is solved
/// from a constant start below and a constant start above the solution; the
/// two limits must coincide, which certifies a unique slice solution.
/// Returns slices `0..=nt`, or `None` when the limits differ.
pub fn value_iteration(case: &TeleportCase, mesh: &Mesh, mode: TimeStepping) -> Option<Vec<Vec<f64>>> {
    let nx = mesh.nx;
    let dt = mesh.dt();
    let stencils: Vec<Vec<(usize, f64)>> = (0..nx).map(|i| mesh.stencil(case, i)).collect();
    let mut slices = vec![Vec::new(); mesh.nt + 1];
    slices[mesh.nt] = (0..nx).map(|i| case.terminal(mesh.x(i))).collect();
    for m in (0..mesh.nt).rev() {
        let t = m as f64 * dt;
        let next = slices[m + 1].clone();
        let base: Vec<f64> = (0..nx)
            .map(|i| {
                let mut r = next[i] + dt * case.running(t, mesh.x(i));
                if mode == TimeStepping::Explicit {
                    r += dt * stencils[i].iter().map(|&(j, w)| w * (next[j] - next[i])).sum::<f64>();
                }
                r
            })
            .collect();
        let map = |v: &[f64]| -> Vec<f64> {
            (0..nx)
                .map(|i| {
                    let free = match mode {
                        TimeStepping::Explicit => base[i],
                        TimeStepping::Implicit => {
                            let s: f64 = stencils[i].iter().map(|&(_, w)| w).sum();
                            let c: f64 = stencils[i].iter().map(|&(j, w)| w * v[j]).sum();
                            (base[i] + dt * c) / (1.0 + dt * s)
                        }
                    };
                    sup_op(case, mesh, v, i).max(inf_op(case, mesh, v, i).min(free))
                })
                .collect()
        };
        let lo = base.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let hi = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1.0;
        let below = iterate(vec![lo; nx], map)?;
        let above = iterate(vec![hi; nx], map)?;
        let gap = below.iter().zip(&above).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if gap > 1e-11 {
            return None;
        }
        slices[m] = below;
    }
    Some(slices)
}

pub mod expr_oracle;
pub mod operator_oracle;
