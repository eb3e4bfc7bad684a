//! Space-time grid on the truncated box `[-R, R]^d`, multilinear
//! interpolation, value fields and the discrete generator `L_h`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::expr::MAX_DIM;
use crate::model::{norm, Point, ProblemSpec};

/// Uniform grid: `nt` time steps over `[0, T]` and `nx` nodes per space axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub dim: usize,
    pub radius: f64,
    pub nx: usize,
    pub nt: usize,
    pub horizon: f64,
    pub dt: f64,
    pub dx: f64,
}

impl Grid {
    /// Builds the grid and checks that the box contains every impulse and
    /// jump destination, i.e. `R >= K_{γ,ξ}`.
    pub fn new(spec: &ProblemSpec, radius: f64, nx: usize, nt: usize) -> Result<Self> {
        if nx < 3 || nt < 3 {
            return Err(Error::Grid(format!(
                "need at least 3 space nodes per axis and 3 time steps, got nx = {nx}, nt = {nt}"
            )));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Grid(format!("box radius must be positive, got {radius}")));
        }
        let grid = Self::uniform(spec.dim, radius, nx, nt, spec.horizon);
        let k = match spec.impulse_bound {
            Some(k) => k,
            None => {
                let samples: Vec<(f64, Point)> = [0.0, 0.5 * spec.horizon, spec.horizon]
                    .iter()
                    .flat_map(|&t| (0..grid.node_count()).map(move |i| (t, i)))
                    .map(|(t, i)| (t, grid.point(i)))
                    .collect();
                spec.impulse_bound_on(&samples)?
            }
        };
        if radius < k {
            return Err(Error::Grid(format!(
                "box radius R = {radius} is smaller than the impulse bound K = {k}; \
                 impulse and jump destinations would leave the box"
            )));
        }
        Ok(grid)
    }

    /// Grid without any model checks.
    pub fn uniform(dim: usize, radius: f64, nx: usize, nt: usize, horizon: f64) -> Self {
        Self {
            dim,
            radius,
            nx,
            nt,
            horizon,
            dt: horizon / nt as f64,
            dx: 2.0 * radius / (nx - 1) as f64,
        }
    }

    pub fn node_count(&self) -> usize {
        self.nx.pow(self.dim as u32)
    }

    pub fn time_count(&self) -> usize {
        self.nt + 1
    }

    pub fn time(&self, m: usize) -> f64 {
        if m == self.nt {
            self.horizon
        } else {
            m as f64 * self.dt
        }
    }

    pub fn coord(&self, j: usize) -> f64 {
        -self.radius + j as f64 * self.dx
    }

    /// Per-axis indices of node `i` (axis 0 varies slowest).
    pub fn multi_index(&self, i: usize) -> [usize; MAX_DIM] {
        match self.dim {
            1 => [i, 0],
            _ => [i / self.nx, i % self.nx],
        }
    }

    pub fn flat_index(&self, m: [usize; MAX_DIM]) -> usize {
        match self.dim {
            1 => m[0],
            _ => m[0] * self.nx + m[1],
        }
    }

    pub fn point(&self, i: usize) -> Point {
        let mi = self.multi_index(i);
        let mut p = [0.0; MAX_DIM];
        for k in 0..self.dim {
            p[k] = self.coord(mi[k]);
        }
        p
    }

    /// Node nearest to `y` (clamped to the box).
    pub fn nearest_node(&self, y: &Point) -> usize {
        let mut m = [0usize; MAX_DIM];
        for k in 0..self.dim {
            let s = ((y[k] + self.radius) / self.dx).round();
            m[k] = s.clamp(0.0, (self.nx - 1) as f64) as usize;
        }
        self.flat_index(m)
    }

    /// Time slice whose interval `[t_m, t_{m+1})` contains `t`.
    pub fn time_slice(&self, t: f64) -> usize {
        let m = (t / self.dt + 1e-9).floor();
        (m.max(0.0) as usize).min(self.nt - 1)
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        let mi = self.multi_index(i);
        (0..self.dim).any(|k| mi[k] == 0 || mi[k] == self.nx - 1)
    }

    /// Interpolation weights for `y`. Points outside the box by at most
    /// `Δx/2` are clamped with a warning.
    pub fn locate(&self, y: &Point) -> Result<Interp> {
        let mut cell = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        let mut clamped = false;
        for k in 0..self.dim {
            let mut c = y[k];
            let excess = c.abs() - self.radius;
            if excess > 0.0 {
                if excess > 0.5 * self.dx || !c.is_finite() {
                    return Err(Error::OutsideBox {
                        point: y[..self.dim].to_vec(),
                        radius: self.radius,
                    });
                }
                c = c.clamp(-self.radius, self.radius);
                clamped = true;
            }
            let mut s = (c + self.radius) / self.dx;
            let r = s.round();
            if (s - r).abs() < 1e-9 {
                s = r;
            }
            let j = (s.floor() as usize).min(self.nx - 2);
            cell[k] = j;
            frac[k] = s - j as f64;
        }
        if clamped {
            log::warn!(
                "interpolation point {:?} clamped to the box of radius {}",
                &y[..self.dim],
                self.radius
            );
        }
        let mut out = Interp {
            idx: [0; 4],
            w: [0.0; 4],
            len: 1 << self.dim,
        };
        for c in 0..out.len as usize {
            let mut m = [0usize; MAX_DIM];
            let mut w = 1.0;
            for k in 0..self.dim {
                let up = (c >> k) & 1 == 1;
                m[k] = cell[k] + up as usize;
                w *= if up { frac[k] } else { 1.0 - frac[k] };
            }
            out.idx[c] = self.flat_index(m) as u32;
            out.w[c] = w;
        }
        Ok(out)
    }

    /// Multilinear interpolation of a slice at `y`.
    pub fn interpolate(&self, slice: &[f64], y: &Point) -> Result<f64> {
        Ok(self.locate(y)?.eval(slice))
    }

    /// Discrete generator `L_h` at time `t`.
    pub fn generator(&self, spec: &ProblemSpec, t: f64) -> Result<Generator> {
        Generator::assemble(spec, self, t)
    }

    /// `(L_h v)(x_i)` for every node.
    pub fn apply_generator(&self, spec: &ProblemSpec, slice: &[f64], t: f64) -> Result<Vec<f64>> {
        if let Some(i) = slice.iter().position(|v| !v.is_finite()) {
            return Err(Error::Grid(format!("non-finite input value at node {i}")));
        }
        Ok(self.generator(spec, t)?.apply(slice))
    }

    /// Header line of x-coordinates for field CSV files.
    pub fn csv_header(&self) -> String {
        let mut s = String::from("t");
        for i in 0..self.node_count() {
            let p = self.point(i);
            match self.dim {
                1 => write!(s, ",{}", p[0]),
                _ => write!(s, ",{};{}", p[0], p[1]),
            }
            .unwrap();
        }
        s
    }
}

/// Multilinear interpolation stencil: up to four weighted nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interp {
    pub idx: [u32; 4],
    pub w: [f64; 4],
    pub len: u8,
}

impl Interp {
    #[inline]
    pub fn eval(&self, slice: &[f64]) -> f64 {
        let mut acc = 0.0;
        for c in 0..self.len as usize {
            let w = self.w[c];
            if w != 0.0 {
                acc += w * slice[self.idx[c] as usize];
            }
        }
        acc
    }
}

/// Difference quotient `(v[plus] - v[minus]) * inv_h` for one axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradStencil {
    pub plus: u32,
    pub minus: u32,
    pub inv_h: f64,
}

/// `L_h v_i = Σ_k w_ik (v_k − v_i)` with nonnegative weights.
#[derive(Debug, Clone)]
pub struct Generator {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
    diag: Vec<f64>,
    /// Per node and axis, upwind gradient stencil (only for `(y, z)` drivers).
    grad: Vec<[GradStencil; MAX_DIM]>,
    /// Per node σ(t, x_i) (only for `(y, z)` drivers).
    sigma: Vec<[[f64; MAX_DIM]; MAX_DIM]>,
    dim: usize,
}

impl Generator {
    pub fn assemble(spec: &ProblemSpec, grid: &Grid, t: f64) -> Result<Self> {
        let n = grid.node_count();
        let d = grid.dim;
        let h = grid.dx;
        let nx = grid.nx;
        let need_grad = !spec.state_only;
        let mut g = Generator {
            offsets: Vec::with_capacity(n + 1),
            cols: Vec::with_capacity(n * (1 + 2 * d + 2 * (d - 1))),
            weights: Vec::with_capacity(n * (1 + 2 * d)),
            diag: Vec::with_capacity(n),
            grad: Vec::with_capacity(if need_grad { n } else { 0 }),
            sigma: Vec::with_capacity(if need_grad { n } else { 0 }),
            dim: d,
        };
        g.offsets.push(0);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(9);
        for i in 0..n {
            let x = grid.point(i);
            let mi = grid.multi_index(i);
            let a = spec.drift_at(t, &x)?;
            let cov = spec.covariance_at(t, &x)?;
            row.clear();
            let interior = |k: usize| mi[k] > 0 && mi[k] < nx - 1;
            let shifted = |k: usize, s: isize| {
                let mut m = mi;
                m[k] = (m[k] as isize + s) as usize;
                grid.flat_index(m)
            };
            for k in 0..d {
                // Zero normal curvature: no second-order term across the boundary.
                if interior(k) {
                    let w = 0.5 * cov[k][k] / (h * h);
                    row.push((shifted(k, 1), w));
                    row.push((shifted(k, -1), w));
                }
                // Upwind drift; outward drift at a boundary row is dropped.
                if a[k] > 0.0 && mi[k] < nx - 1 {
                    row.push((shifted(k, 1), a[k] / h));
                } else if a[k] < 0.0 && mi[k] > 0 {
                    row.push((shifted(k, -1), -a[k] / h));
                }
            }
            if d == 2 && interior(0) && interior(1) {
                let c = cov[0][1];
                if c != 0.0 {
                    let w = c.abs() / (2.0 * h * h);
                    let s: isize = if c > 0.0 { 1 } else { -1 };
                    let diag_pair = |p: isize, q: isize| {
                        grid.flat_index([(mi[0] as isize + p) as usize, (mi[1] as isize + q) as usize])
                    };
                    row.push((diag_pair(1, s), w));
                    row.push((diag_pair(-1, -s), w));
                    for k in 0..2 {
                        row.push((shifted(k, 1), -w));
                        row.push((shifted(k, -1), -w));
                    }
                }
            }
            row.sort_by_key(|e| e.0);
            let mut sum = 0.0_f64;
            let mut j = 0;
            while j < row.len() {
                let col = row[j].0;
                let mut w = 0.0;
                while j < row.len() && row[j].0 == col {
                    w += row[j].1;
                    j += 1;
                }
                if w < -1e-12 * (1.0 + sum.abs()) {
                    return Err(Error::NotMonotone {
                        node: i,
                        reason: format!(
                            "negative weight {w} towards node {col} at x = {:?}; the covariance \
                             must be diagonally dominant (|c12| <= c11, c22) for the 7-point stencil",
                            &x[..d]
                        ),
                    });
                }
                if w > 0.0 {
                    g.cols.push(col as u32);
                    g.weights.push(w);
                    sum += w;
                }
            }
            g.offsets.push(g.cols.len());
            g.diag.push(sum);

            if need_grad {
                let mut gs = [GradStencil {
                    plus: i as u32,
                    minus: i as u32,
                    inv_h: 0.0,
                }; MAX_DIM];
                for k in 0..d {
                    let (p, m, span) = if mi[k] == 0 {
                        (shifted(k, 1), i, 1.0)
                    } else if mi[k] == nx - 1 {
                        (i, shifted(k, -1), 1.0)
                    } else if a[k] > 0.0 {
                        (shifted(k, 1), i, 1.0)
                    } else if a[k] < 0.0 {
                        (i, shifted(k, -1), 1.0)
                    } else {
                        (shifted(k, 1), shifted(k, -1), 2.0)
                    };
                    gs[k] = GradStencil {
                        plus: p as u32,
                        minus: m as u32,
                        inv_h: 1.0 / (span * h),
                    };
                }
                g.grad.push(gs);
                g.sigma.push(spec.diffusion_at(t, &x)?);
            }
        }
        Ok(g)
    }

    pub fn node_count(&self) -> usize {
        self.diag.len()
    }

    /// `Σ_k w_ik` at node `i`.
    #[inline]
    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// `Σ_k w_ik v_k` at node `i`.
    #[inline]
    pub fn off_diag(&self, i: usize, v: &[f64]) -> f64 {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.weights[a..b])
            .map(|(&c, &w)| w * v[c as usize])
            .sum()
    }

    /// Neighbours and weights of node `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.offsets[i], self.offsets[i + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.weights[a..b])
            .map(|(&c, &w)| (c as usize, w))
    }

    #[inline]
    pub fn apply_at(&self, i: usize, v: &[f64]) -> f64 {
        self.off_diag(i, v) - self.diag[i] * v[i]
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        (0..self.node_count()).map(|i| self.apply_at(i, v)).collect()
    }

    /// Largest stable explicit step `1 / max_i Σ_k w_ik`.
    pub fn cfl_bound(&self) -> f64 {
        let m = self.diag.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            1.0 / m
        } else {
            f64::INFINITY
        }
    }

    /// `z = σᵀ D_h v` at node `i`; zero when the generator was assembled for
    /// a state-only driver.
    #[inline]
    pub fn z_at(&self, i: usize, v: &[f64]) -> Point {
        let mut z = [0.0; MAX_DIM];
        if self.grad.is_empty() {
            return z;
        }
        let mut dv = [0.0; MAX_DIM];
        for (k, gs) in self.grad[i].iter().enumerate().take(self.dim) {
            dv[k] = (v[gs.plus as usize] - v[gs.minus as usize]) * gs.inv_h;
        }
        let s = &self.sigma[i];
        for j in 0..self.dim {
            z[j] = (0..self.dim).map(|k| s[k][j] * dv[k]).sum();
        }
        z
    }
}

/// Values `v[m][i]` over time node `m` and space node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    nodes: usize,
    times: usize,
    data: Vec<f64>,
    /// Cached `Mv` per time slice, when a solver stored it.
    pub lower_obstacle: Option<Vec<f64>>,
    /// Cached `Nv` per time slice, when a solver stored it.
    pub upper_obstacle: Option<Vec<f64>>,
}

impl ValueField {
    pub fn zeros(grid: &Grid) -> Self {
        Self::filled(grid, 0.0)
    }

    pub fn filled(grid: &Grid, value: f64) -> Self {
        Self {
            nodes: grid.node_count(),
            times: grid.time_count(),
            data: vec![value; grid.node_count() * grid.time_count()],
            lower_obstacle: None,
            upper_obstacle: None,
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for m in 0..out.times {
            for i in 0..out.nodes {
                out.data[m * out.nodes + i] = f(m, i);
            }
        }
        out
    }

    pub fn node_count(&self) -> usize {
        self.nodes
    }

    pub fn time_count(&self) -> usize {
        self.times
    }

    pub fn slice(&self, m: usize) -> &[f64] {
        &self.data[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn slice_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.data[m * self.nodes..(m + 1) * self.nodes]
    }

    pub fn get(&self, m: usize, i: usize) -> f64 {
        self.data[m * self.nodes + i]
    }

    pub fn set(&mut self, m: usize, i: usize, v: f64) {
        self.data[m * self.nodes + i] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn same_shape(&self, other: &ValueField) -> bool {
        self.nodes == other.nodes && self.times == other.times
    }

    /// `max |self − other|`.
    pub fn sup_distance(&self, other: &ValueField) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).fold(0.0, f64::max)
    }

    /// Largest `other − self` with its location `(m, i)`; positive when
    /// `self ≥ other` fails somewhere.
    pub fn max_shortfall(&self, other: &ValueField) -> (f64, usize, usize) {
        let mut best = (f64::NEG_INFINITY, 0, 0);
        for (k, (a, b)) in self.data.iter().zip(&other.data).enumerate() {
            if b - a > best.0 {
                best = (b - a, k / self.nodes, k % self.nodes);
            }
        }
        best
    }

    /// Smallest `C` with `|v| ≤ C (1 + |x|^ρ)` on the grid.
    pub fn growth_constant(&self, grid: &Grid, rho: f64) -> f64 {
        let weights: Vec<f64> = (0..self.nodes)
            .map(|i| 1.0 + norm(&grid.point(i), grid.dim).powf(rho))
            .collect();
        self.data
            .iter()
            .enumerate()
            .map(|(k, v)| v.abs() / weights[k % self.nodes])
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// CSV body: one row per time node, `t` followed by the slice values.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut s = grid.csv_header();
        s.push('\n');
        for m in 0..self.times {
            write!(s, "{}", grid.time(m)).unwrap();
            for v in self.slice(m) {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}
