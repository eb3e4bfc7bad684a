//! Loop scan against plain enumeration of all chains.

use proptest::prelude::*;
use qvi_lab::model::{no_free_loop_scan, LoopStep, NoFreeLoopParams, ProblemSource};

#[derive(Debug, Clone)]
struct Game {
    u: Vec<f64>,
    e: Vec<f64>,
    ell: Vec<f64>,
    chi: Vec<f64>,
}

fn game() -> impl Strategy<Value = Game> {
    let node = prop::sample::select(vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    let cost = prop::sample::select(vec![0.5, 1.0, 1.5]);
    (1usize..=2, 1usize..=2).prop_flat_map(move |(q, m)| {
        (
            prop::collection::vec(node.clone(), q),
            prop::collection::vec(node.clone(), m),
            prop::collection::vec(cost.clone(), q),
            prop::collection::vec(cost.clone(), m),
        )
            .prop_map(|(u, e, ell, chi)| Game { u, e, ell, chi })
    })
}

impl Game {
    /// Teleports with mark-dependent constant costs, written as
    /// `c_0 + (b1 - u_0) * slope` so that each node gets its own cost.
    fn source(&self) -> ProblemSource {
        let mut src = ProblemSource::one_dim();
        src.impulse_nodes = self.u.iter().map(|&b| [b, 0.0]).collect();
        src.jump_nodes = self.e.iter().map(|&e| [e, 0.0]).collect();
        src.jump_weights = vec![1.0; self.e.len()];
        src.impulse_cost = piecewise("b1", &self.u, &self.ell);
        src.jump_cost = piecewise("e1", &self.e, &self.chi);
        src.cost_floor = 0.5;
        src.impulse_bound = Some(1.0);
        src
    }
}

/// Expression equal to `vals[k]` at `var = nodes[k]`. Duplicate nodes take
/// the first value.
fn piecewise(var: &str, nodes: &[f64], vals: &[f64]) -> String {
    let mut terms = Vec::new();
    let mut seen = Vec::new();
    for (k, (&x, &v)) in nodes.iter().zip(vals).enumerate() {
        if seen.contains(&x.to_bits()) {
            continue;
        }
        seen.push(x.to_bits());
        // Indicator of `var == x` on the node set {-1, -0.5, 0, 0.5, 1}.
        terms.push(format!("{v:?} * max(0, 1 - 4 * abs({var} - ({x:?})))"));
        let _ = k;
    }
    terms.join(" + ")
}

fn brute_force(g: &Game, x0: f64, depth: usize, h1: f64, h2: f64) -> (Vec<Vec<LoopStep>>, usize) {
    let moves: Vec<LoopStep> = (0..g.u.len())
        .map(LoopStep::Impulse)
        .chain((0..g.e.len()).map(LoopStep::Jump))
        .collect();
    let first = |nodes: &[f64], vals: &[f64], k: usize| {
        let x = nodes[k];
        vals[nodes.iter().position(|&y| y == x).unwrap()]
    };
    let mut found = Vec::new();
    let mut total = 0;
    for len in 1..=depth {
        let mut idx = vec![0usize; len];
        loop {
            total += 1;
            let (mut x, mut cost) = (x0, 0.0);
            for &k in &idx {
                match moves[k] {
                    LoopStep::Impulse(b) => {
                        cost += first(&g.u, &g.ell, b);
                        x = g.u[b];
                    }
                    LoopStep::Jump(e) => {
                        cost -= first(&g.e, &g.chi, e);
                        x = g.e[e];
                    }
                }
            }
            if (x - x0).abs() <= h1 && cost.abs() < h2 {
                found.push(idx.iter().map(|&k| moves[k]).collect());
            }
            let mut p = len;
            loop {
                if p == 0 {
                    break;
                }
                p -= 1;
                idx[p] += 1;
                if idx[p] < moves.len() {
                    break;
                }
                idx[p] = 0;
                if p == 0 {
                    p = usize::MAX;
                    break;
                }
            }
            if p == usize::MAX {
                break;
            }
        }
    }
    found.sort();
    (found, total)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn scan_matches_enumeration(g in game(), start in 0usize..4, depth in 1usize..=4) {
        let nodes: Vec<f64> = g.u.iter().chain(&g.e).cloned().collect();
        let x0 = nodes[start % nodes.len()];
        let spec = g.source().build().unwrap();
        let params = NoFreeLoopParams::new(1e-6, 0.25, depth).unwrap();
        let report = no_free_loop_scan(&spec, &params, 0.0, &[x0, 0.0]).unwrap();
        let mut got: Vec<Vec<LoopStep>> = report.violations.iter().map(|v| v.steps.clone()).collect();
        got.sort();
        let (want, total) = brute_force(&g, x0, depth, 1e-6, 0.25);
        prop_assert_eq!(got, want);
        prop_assert_eq!(report.sequences_checked, total);
        prop_assert!(report.complete);
    }
}

#[test]
fn budget_exhaustion_returns_partial_report() {
    let src = qvi_lab::models::zero();
    let spec = src.build().unwrap();
    let mut params = NoFreeLoopParams::new(1e-6, 0.25, 8).unwrap();
    params.budget = 1000;
    match no_free_loop_scan(&spec, &params, 0.0, &[0.0; 2]) {
        Err(qvi_lab::Error::LoopBudget { partial }) => {
            assert!(!partial.complete);
            assert_eq!(partial.sequences_checked, 1000);
            assert!(partial.coverage() < 1.0);
        }
        other => panic!("expected a budget error, got {other:?}"),
    }
}
