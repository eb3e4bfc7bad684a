//! Brute-force intervention operators on random teleport games.

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use qvi_lab::grid::Grid;
use qvi_lab::operators::{eval_inf_op, eval_penalty, eval_sup_op};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mesh, TeleportCase};

#[derive(Debug, Clone)]
pub struct OperatorCase {
    pub case: TeleportCase,
    pub nx: usize,
    pub t: f64,
    pub field: Vec<f64>,
    pub n: f64,
}

pub fn operator_case() -> impl Strategy<Value = OperatorCase> {
    (any::<u64>(), 3usize..40, 0.0f64..1.0, 0.5f64..500.0).prop_flat_map(|(seed, nx, t, n)| {
        let case = TeleportCase::random(&mut ChaCha8Rng::seed_from_u64(seed));
        prop::collection::vec(-5.0f64..5.0, nx).prop_map(move |field| OperatorCase {
            case: case.clone(),
            nx,
            t: t * case.horizon,
            field,
            n,
        })
    })
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// `M`, `N` and `K^n` against direct loops over nodes and marks.
pub fn check(oc: &OperatorCase) -> Result<(), TestCaseError> {
    let c = &oc.case;
    let spec = c.source().build().map_err(|e| TestCaseError::fail(e.to_string()))?;
    let grid = Grid::new(&spec, c.radius, oc.nx, 4).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let mesh = Mesh {
        radius: c.radius,
        nx: oc.nx,
        nt: 4,
        horizon: c.horizon,
    };
    let v = &oc.field;
    let (mv, argmax) = eval_sup_op(&spec, &grid, v, oc.t).unwrap();
    let (nv, argmin) = eval_inf_op(&spec, &grid, v, oc.t).unwrap();
    let pen = eval_penalty(&spec, &grid, v, oc.t, oc.n).unwrap();
    for i in 0..oc.nx {
        let x = mesh.x(i);
        let up: Vec<f64> = c.u.iter().map(|&b| mesh.interp(v, b) - c.ell(x)).collect();
        let down: Vec<f64> = c.e.iter().map(|&e| mesh.interp(v, e) + c.chi(x)).collect();
        let best = up.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let worst = down.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(close(mv[i], best), "Mv at node {}: {} vs {}", i, mv[i], best);
        prop_assert!(close(nv[i], worst), "Nv at node {}: {} vs {}", i, nv[i], worst);
        prop_assert!(close(up[argmax[i]], best));
        prop_assert!(close(down[argmin[i]], worst));
        let k: f64 = oc.n
            * c.w
                .iter()
                .zip(&down)
                .map(|(l, d)| l * (v[i] - d).max(0.0))
                .sum::<f64>();
        prop_assert!(
            (pen[i] - k).abs() <= 1e-10 * (1.0 + k.abs()),
            "penalty at node {}: {} vs {}",
            i,
            pen[i],
            k
        );
    }
    Ok(())
}

/// Raising the field never lowers `Mv` or `Nv`.
pub fn check_monotone(oc: &OperatorCase, bump: &[f64]) -> Result<(), TestCaseError> {
    let c = &oc.case;
    let spec = c.source().build().unwrap();
    let grid = Grid::new(&spec, c.radius, oc.nx, 4).unwrap();
    let w: Vec<f64> = oc.field.iter().zip(bump.iter().cycle()).map(|(a, b)| a + b.abs()).collect();
    let (m0, _) = eval_sup_op(&spec, &grid, &oc.field, oc.t).unwrap();
    let (m1, _) = eval_sup_op(&spec, &grid, &w, oc.t).unwrap();
    let (n0, _) = eval_inf_op(&spec, &grid, &oc.field, oc.t).unwrap();
    let (n1, _) = eval_inf_op(&spec, &grid, &w, oc.t).unwrap();
    for i in 0..oc.nx {
        prop_assert!(m1[i] >= m0[i] - 1e-12);
        prop_assert!(n1[i] >= n0[i] - 1e-12);
    }
    Ok(())
}
