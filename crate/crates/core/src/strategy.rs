//! Feedback strategies read off a solved value field: the maximizer's
//! impulse policy and the minimizer's randomization density.

use std::fmt::{self, Write as _};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::ProblemSpec;
use crate::operators::Interventions;

/// Default activation tolerance `10 (Δt + Δx²)`.
pub fn default_activation_tol(grid: &Grid) -> f64 {
    10.0 * (grid.dt + grid.dx * grid.dx)
}

/// A chain of impulses that the guard refused to follow further.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainDiagnostic {
    pub time_index: usize,
    pub start_node: usize,
    /// Nodes visited after the start.
    pub chain: Vec<usize>,
    /// The chain came back to its start.
    pub returns: bool,
}

/// Intervention region and impulse choice per (time slice, node), for
/// slices `0..nt`.
#[derive(Debug, Clone)]
pub struct ImpulsePolicy {
    pub nodes: usize,
    pub slices: usize,
    pub activation_tol: f64,
    intervene: Vec<bool>,
    choice: Vec<usize>,
    pub diagnostics: Vec<ChainDiagnostic>,
}

/// Longest impulse chain followed before a diagnostic is emitted.
pub const CHAIN_GUARD_DEPTH: usize = 3;

impl ImpulsePolicy {
    /// A policy that never intervenes.
    pub fn empty(grid: &Grid) -> Self {
        let n = grid.node_count() * grid.nt;
        Self {
            nodes: grid.node_count(),
            slices: grid.nt,
            activation_tol: 0.0,
            intervene: vec![false; n],
            choice: vec![0; n],
            diagnostics: Vec::new(),
        }
    }

    /// Builds a policy from explicit masks.
    pub fn from_masks(grid: &Grid, intervene: Vec<bool>, choice: Vec<usize>) -> Result<Self> {
        let n = grid.node_count() * grid.nt;
        if intervene.len() != n || choice.len() != n {
            return Err(Error::Grid(format!("policy masks need {n} entries")));
        }
        Ok(Self {
            nodes: grid.node_count(),
            slices: grid.nt,
            activation_tol: 0.0,
            intervene,
            choice,
            diagnostics: Vec::new(),
        })
    }

    #[inline]
    pub fn intervenes(&self, m: usize, i: usize) -> bool {
        self.intervene[m * self.nodes + i]
    }

    #[inline]
    pub fn choice(&self, m: usize, i: usize) -> usize {
        self.choice[m * self.nodes + i]
    }

    pub fn marked_count(&self, m: usize) -> usize {
        self.intervene[m * self.nodes..(m + 1) * self.nodes]
            .iter()
            .filter(|b| **b)
            .count()
    }

    /// Rows `m,x_index,intervene,b_index`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,x_index,intervene,b_index\n");
        for m in 0..self.slices {
            for i in 0..self.nodes {
                writeln!(
                    s,
                    "{m},{i},{},{}",
                    self.intervenes(m, i) as u8,
                    self.choice(m, i)
                )
                .unwrap();
            }
        }
        s
    }
}

/// Marks nodes with `v − Mv ≤ ε_act` and records the argmax impulse.
pub fn extract_impulse_policy(
    field: &ValueField,
    spec: &ProblemSpec,
    grid: &Grid,
    activation_tol: f64,
) -> Result<ImpulsePolicy> {
    if !(activation_tol > 0.0) {
        return Err(Error::Invalid("activation tolerance must be positive".into()));
    }
    let nodes = grid.node_count();
    let mut policy = ImpulsePolicy::empty(grid);
    policy.activation_tol = activation_tol;
    for m in 0..grid.nt {
        let t = grid.time(m);
        let ops = Interventions::build(spec, grid, t)?;
        let v = field.slice(m);
        let marks: Vec<(bool, usize)> = (0..nodes)
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let (mv, b) = ops.sup_at(i, v);
                (v[i] - mv <= activation_tol, b)
            })
            .collect();
        for (i, (mark, b)) in marks.into_iter().enumerate() {
            policy.intervene[m * nodes + i] = mark;
            policy.choice[m * nodes + i] = b;
        }
        for i in 0..nodes {
            if !policy.intervenes(m, i) {
                continue;
            }
            let mut chain = Vec::new();
            let mut at = i;
            let mut x = grid.point(i);
            while policy.intervenes(m, at) && chain.len() <= CHAIN_GUARD_DEPTH {
                let dest = spec.impulse_destination(t, &x, policy.choice(m, at))?;
                at = grid.nearest_node(&dest);
                x = grid.point(at);
                chain.push(at);
                if at == i {
                    break;
                }
            }
            let returns = chain.last() == Some(&i);
            if returns || chain.len() > CHAIN_GUARD_DEPTH {
                policy.diagnostics.push(ChainDiagnostic {
                    time_index: m,
                    start_node: i,
                    chain,
                    returns,
                });
            }
        }
    }
    if !policy.diagnostics.is_empty() {
        log::warn!(
            "{} impulse chains longer than {} or returning to their start",
            policy.diagnostics.len(),
            CHAIN_GUARD_DEPTH
        );
    }
    Ok(policy)
}

/// Trigger set of the randomized control at penalty level `n`, for slices
/// `0..nt`.
#[derive(Debug, Clone)]
pub struct RandomizationDensity {
    pub level: f64,
    pub nodes: usize,
    pub marks: usize,
    pub slices: usize,
    triggers: Vec<bool>,
}

impl RandomizationDensity {
    pub fn empty(grid: &Grid, marks: usize, level: f64) -> Self {
        Self {
            level,
            nodes: grid.node_count(),
            marks,
            slices: grid.nt,
            triggers: vec![false; grid.node_count() * grid.nt * marks],
        }
    }

    /// Density triggering every mark at every node.
    pub fn full(grid: &Grid, marks: usize, level: f64) -> Self {
        let mut d = Self::empty(grid, marks, level);
        d.triggers.iter_mut().for_each(|t| *t = true);
        d
    }

    #[inline]
    pub fn triggered(&self, m: usize, i: usize, e: usize) -> bool {
        self.triggers[(m * self.nodes + i) * self.marks + e]
    }

    pub fn any_triggered(&self, m: usize, i: usize) -> bool {
        (0..self.marks).any(|e| self.triggered(m, i, e))
    }

    /// Realized intensity `ν ∈ {0, n}`.
    pub fn intensity(&self, m: usize, i: usize, e: usize) -> f64 {
        if self.triggered(m, i, e) {
            self.level
        } else {
            0.0
        }
    }

    pub fn trigger_count(&self) -> usize {
        self.triggers.iter().filter(|t| **t).count()
    }

    /// Header `n=<level>` then rows `m,x_index,e_index,trigger`.
    pub fn to_csv(&self) -> String {
        let mut s = format!("n={}\nm,x_index,e_index,trigger\n", self.level);
        for m in 0..self.slices {
            for i in 0..self.nodes {
                for e in 0..self.marks {
                    writeln!(s, "{m},{i},{e},{}", self.triggered(m, i, e) as u8).unwrap();
                }
            }
        }
        s
    }
}

/// Triggers exactly where `v(x + γ_e) + χ_e − v(x) < 0`.
pub fn extract_randomization_density(
    field: &ValueField,
    spec: &ProblemSpec,
    grid: &Grid,
    level: f64,
) -> Result<RandomizationDensity> {
    if !(level > 0.0) {
        return Err(Error::Invalid("penalty level must be positive".into()));
    }
    let marks = spec.jumps.len();
    let nodes = grid.node_count();
    let mut d = RandomizationDensity::empty(grid, marks, level);
    for m in 0..grid.nt {
        let ops = Interventions::build(spec, grid, grid.time(m))?;
        let v = field.slice(m);
        let block = &mut d.triggers[m * nodes * marks..(m + 1) * nodes * marks];
        block
            .par_chunks_mut(marks)
            .enumerate()
            .with_min_len(256)
            .for_each(|(i, out)| {
                for (e, o) in out.iter_mut().enumerate() {
                    let j = ops.jump(i, e);
                    *o = j.at.eval(v) + j.cost - v[i] < 0.0;
                }
            });
    }
    Ok(d)
}

/// Impulse policy and randomization density read off the same field, the
/// density at penalty level `level`.
pub fn extract_strategies(
    field: &ValueField,
    spec: &ProblemSpec,
    grid: &Grid,
    level: f64,
    activation_tol: f64,
) -> Result<(ImpulsePolicy, RandomizationDensity)> {
    Ok((
        extract_impulse_policy(field, spec, grid, activation_tol)?,
        extract_randomization_density(field, spec, grid, level)?,
    ))
}

/// Per-slice fractions of intervening and triggering nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub intervene_fraction: Vec<f64>,
    pub trigger_fraction: Vec<f64>,
}

impl RegionReport {
    /// Rows `m,t,intervene_fraction,trigger_fraction`.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut s = String::from("m,t,intervene_fraction,trigger_fraction\n");
        for m in 0..self.intervene_fraction.len() {
            writeln!(
                s,
                "{m},{},{},{}",
                grid.time(m),
                self.intervene_fraction[m],
                self.trigger_fraction[m]
            )
            .unwrap();
        }
        s
    }
}

impl fmt::Display for RegionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        writeln!(
            f,
            "mean intervention fraction {:.4}, mean trigger fraction {:.4} over {} slices",
            mean(&self.intervene_fraction),
            mean(&self.trigger_fraction),
            self.intervene_fraction.len()
        )
    }
}

/// Summarizes region sizes per slice.
pub fn action_region_report(
    policy: &ImpulsePolicy,
    density: &RandomizationDensity,
    grid: &Grid,
) -> RegionReport {
    let n = grid.node_count() as f64;
    let intervene_fraction = (0..policy.slices)
        .map(|m| policy.marked_count(m) as f64 / n)
        .collect();
    let trigger_fraction = (0..density.slices)
        .map(|m| {
            (0..density.nodes)
                .filter(|&i| density.any_triggered(m, i))
                .count() as f64
                / n
        })
        .collect();
    RegionReport {
        intervene_fraction,
        trigger_fraction,
    }
}

/// Masks CSV: `m,x_index,intervene,triggered`.
pub fn region_masks_csv(policy: &ImpulsePolicy, density: &RandomizationDensity) -> String {
    let mut s = String::from("m,x_index,intervene,triggered\n");
    for m in 0..policy.slices {
        for i in 0..policy.nodes {
            writeln!(
                s,
                "{m},{i},{},{}",
                policy.intervenes(m, i) as u8,
                density.any_triggered(m, i) as u8
            )
            .unwrap();
        }
    }
    s
}
