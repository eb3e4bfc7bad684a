//! Intervention operators `Mv = max_b {v(x+ξ) − ℓ}`, `Nv = min_e {v(x+γ) + χ}`
//! and the penalty `K^n v = n Σ_j λ_j (v(x+γ_j) + χ_j − v(x))^−`.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::Result;
use crate::grid::{Grid, Interp};
use crate::model::ProblemSpec;

/// An intervention destination with its cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dest {
    pub at: Interp,
    pub cost: f64,
}

/// Impulse and jump destinations of every node at one time.
#[derive(Debug, Clone)]
pub struct Interventions {
    q: usize,
    m: usize,
    impulses: Vec<Dest>,
    jumps: Vec<Dest>,
    lambda: Vec<f64>,
}

impl Interventions {
    pub fn build(spec: &ProblemSpec, grid: &Grid, t: f64) -> Result<Self> {
        let q = spec.impulses.len();
        let m = spec.jumps.len();
        let n = grid.node_count();
        let per_node: Vec<(Vec<Dest>, Vec<Dest>)> = (0..n)
            .into_par_iter()
            .map(|i| -> Result<_> {
                let x = grid.point(i);
                let imp = (0..q)
                    .map(|b| {
                        Ok(Dest {
                            at: grid.locate(&spec.impulse_destination(t, &x, b)?)?,
                            cost: spec.impulse_cost_at(t, &x, b)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let jmp = (0..m)
                    .map(|e| {
                        Ok(Dest {
                            at: grid.locate(&spec.jump_destination(t, &x, e)?)?,
                            cost: spec.jump_cost_at(t, &x, e)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((imp, jmp))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut impulses = Vec::with_capacity(n * q);
        let mut jumps = Vec::with_capacity(n * m);
        for (a, b) in per_node {
            impulses.extend(a);
            jumps.extend(b);
        }
        Ok(Self {
            q,
            m,
            impulses,
            jumps,
            lambda: spec.jumps.weights().to_vec(),
        })
    }

    pub fn impulse(&self, i: usize, b: usize) -> &Dest {
        &self.impulses[i * self.q + b]
    }

    pub fn jump(&self, i: usize, e: usize) -> &Dest {
        &self.jumps[i * self.m + e]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn jump_count(&self) -> usize {
        self.m
    }

    pub fn impulse_count(&self) -> usize {
        self.q
    }

    /// `(Mv)_i` and the lowest maximizing index.
    #[inline]
    pub fn sup_at(&self, i: usize, slice: &[f64]) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (b, d) in self.impulses[i * self.q..(i + 1) * self.q].iter().enumerate() {
            let v = d.at.eval(slice) - d.cost;
            if v > best.0 {
                best = (v, b);
            }
        }
        best
    }

    /// `(Nv)_i` and the lowest minimizing index.
    #[inline]
    pub fn inf_at(&self, i: usize, slice: &[f64]) -> (f64, usize) {
        let mut best = (f64::INFINITY, 0);
        for (e, d) in self.jumps[i * self.m..(i + 1) * self.m].iter().enumerate() {
            let v = d.at.eval(slice) + d.cost;
            if v < best.0 {
                best = (v, e);
            }
        }
        best
    }

    /// Jump targets `c_j = v(x_i+γ_j) + χ_j` written into `out`.
    #[inline]
    pub fn jump_targets(&self, i: usize, slice: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.jumps[i * self.m..(i + 1) * self.m]
                .iter()
                .map(|d| d.at.eval(slice) + d.cost),
        );
    }

    /// `(K^n v)_i`.
    #[inline]
    pub fn penalty_at(&self, i: usize, slice: &[f64], n: f64) -> f64 {
        let vi = slice[i];
        let s: f64 = self.jumps[i * self.m..(i + 1) * self.m]
            .iter()
            .zip(&self.lambda)
            .map(|(d, l)| l * (vi - d.at.eval(slice) - d.cost).max(0.0))
            .sum();
        n * s
    }
}

/// Obstacle values and optimal indices at one time slice.
#[derive(Debug, Clone, PartialEq)]
pub struct ObstacleSlice {
    pub mv: Vec<f64>,
    pub argmax: Vec<usize>,
    pub nv: Vec<f64>,
    pub argmin: Vec<usize>,
}

impl ObstacleSlice {
    pub fn compute(ops: &Interventions, slice: &[f64]) -> Self {
        let n = slice.len();
        let pairs: Vec<_> = (0..n)
            .into_par_iter()
            .map(|i| (ops.sup_at(i, slice), ops.inf_at(i, slice)))
            .collect();
        let (sup, inf): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (mv, argmax) = sup.into_iter().unzip();
        let (nv, argmin) = inf.into_iter().unzip();
        Self {
            mv,
            argmax,
            nv,
            argmin,
        }
    }

    /// Columns `x, v, Mv, Nv, argmax_b, argmin_e` (one `x` column per axis).
    pub fn to_csv(&self, grid: &Grid, slice: &[f64]) -> String {
        let mut s = String::new();
        match grid.dim {
            1 => s.push_str("x1,v,Mv,Nv,argmax_b,argmin_e\n"),
            _ => s.push_str("x1,x2,v,Mv,Nv,argmax_b,argmin_e\n"),
        }
        for i in 0..slice.len() {
            let p = grid.point(i);
            for x in &p[..grid.dim] {
                write!(s, "{x},").unwrap();
            }
            writeln!(
                s,
                "{},{},{},{},{}",
                slice[i], self.mv[i], self.nv[i], self.argmax[i], self.argmin[i]
            )
            .unwrap();
        }
        s
    }
}

/// Values of `Mv` and the per-node argmax index into U.
pub fn eval_sup_op(
    spec: &ProblemSpec,
    grid: &Grid,
    slice: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let ops = Interventions::build(spec, grid, t)?;
    Ok((0..slice.len())
        .into_par_iter()
        .map(|i| ops.sup_at(i, slice))
        .unzip())
}

/// Values of `Nv` and the per-node argmin index into E.
pub fn eval_inf_op(
    spec: &ProblemSpec,
    grid: &Grid,
    slice: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let ops = Interventions::build(spec, grid, t)?;
    Ok((0..slice.len())
        .into_par_iter()
        .map(|i| ops.inf_at(i, slice))
        .unzip())
}

/// `K^n v` at every node.
pub fn eval_penalty(
    spec: &ProblemSpec,
    grid: &Grid,
    slice: &[f64],
    t: f64,
    n: f64,
) -> Result<Vec<f64>> {
    let ops = Interventions::build(spec, grid, t)?;
    Ok((0..slice.len())
        .into_par_iter()
        .map(|i| ops.penalty_at(i, slice, n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ProblemSource;

    fn grid(spec: &ProblemSpec) -> Grid {
        Grid::new(spec, 1.0, 5, 4).unwrap()
    }

    #[test]
    fn constant_slices() {
        let spec = ProblemSource::one_dim().build().unwrap();
        let g = grid(&spec);
        let z = vec![0.0; 5];
        let (mv, _) = eval_sup_op(&spec, &g, &z, 0.0).unwrap();
        assert!(mv.iter().all(|v| *v == -1.0));
        let (nv, _) = eval_inf_op(&spec, &g, &z, 0.0).unwrap();
        assert!(nv.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn teleport_sup_of_identity_is_zero() {
        let spec = ProblemSource::one_dim().build().unwrap();
        let g = grid(&spec);
        let v: Vec<f64> = (0..5).map(|i| g.point(i)[0]).collect();
        let (mv, arg) = eval_sup_op(&spec, &g, &v, 0.3).unwrap();
        assert!(mv.iter().all(|m| *m == 0.0));
        assert!(arg.iter().all(|b| *b == 2));
    }

    #[test]
    fn identity_jump_gives_nv_equal_v() {
        let mut src = ProblemSource::one_dim();
        src.jump = vec!["0".into()];
        src.jump_cost = "0".into();
        let spec = src.build().unwrap();
        let g = grid(&spec);
        let v = vec![0.3, -1.0, 2.0, 0.5, 0.0];
        let (nv, _) = eval_inf_op(&spec, &g, &v, 0.0).unwrap();
        assert_eq!(nv, v);
        assert!(eval_penalty(&spec, &g, &v, 0.0, 5.0).unwrap().iter().all(|p| *p == 0.0));
    }

    #[test]
    fn penalty_arithmetic() {
        // v ≡ 1, destination values 0 (jump to a node holding 0), χ = 0.5,
        // λ(E) = 2, n = 3 → 3·2·0.5 = 3.
        let mut src = ProblemSource::one_dim();
        src.jump = vec!["e1 - x1".into()];
        src.jump_nodes = vec![[-1.0, 0.0], [-1.0, 0.0]];
        src.jump_weights = vec![1.5, 0.5];
        src.jump_cost = "0.5".into();
        let spec = src.build().unwrap();
        let g = grid(&spec);
        let mut v = vec![1.0; 5];
        v[0] = 0.0;
        let k = eval_penalty(&spec, &g, &v, 0.0, 3.0).unwrap();
        for (i, kv) in k.iter().enumerate().skip(1) {
            assert!((kv - 3.0).abs() < 1e-15, "node {i}: {kv}");
        }
        assert_eq!(k[0], 0.0);
    }

    #[test]
    fn ties_resolve_to_lowest_index() {
        let mut src = ProblemSource::one_dim();
        src.impulse = vec!["0".into()];
        let spec = src.build().unwrap();
        let g = grid(&spec);
        let (_, arg) = eval_sup_op(&spec, &g, &[0.0; 5], 0.0).unwrap();
        assert!(arg.iter().all(|b| *b == 0));
    }
}
