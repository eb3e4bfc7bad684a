//! Intervention operators and the discrete generator against brute force.

mod common;

use common::operator_oracle::{check, check_monotone, operator_case};
use proptest::prelude::*;
use qvi_lab::grid::Grid;
use qvi_lab::model::ProblemSource;

fn two_dim(s1: f64, s2: f64, c: f64, a1: f64, a2: f64) -> ProblemSource {
    let mut src = ProblemSource::one_dim();
    src.dim = 2;
    src.drift = vec![format!("{a1:?} * x2"), format!("{a2:?} - x1")];
    src.diffusion = vec![
        vec![format!("{s1:?}"), format!("{c:?}")],
        vec![format!("{c:?}"), format!("{s2:?}")],
    ];
    src.impulse = vec!["b1 - x1".into(), "b2 - x2".into()];
    src.jump = vec!["e1 - x1".into(), "e2 - x2".into()];
    src.impulse_nodes = vec![[0.0, 0.0], [1.0, -1.0]];
    src.jump_nodes = vec![[0.5, 0.5]];
    src.jump_weights = vec![1.0];
    src
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn operators_match_brute_force(oc in operator_case()) {
        check(&oc)?;
    }

    #[test]
    fn obstacles_are_monotone(oc in operator_case(), bump in prop::collection::vec(0.0f64..2.0, 1..8)) {
        check_monotone(&oc, &bump)?;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Raising `v` at node `j` raises `(L v)_i` for `i ≠ j` and lowers
    /// `(L v)_j`.
    #[test]
    fn generator_is_monotone(
        s1 in 0.1f64..1.0,
        s2 in 0.1f64..1.0,
        frac in -1.0f64..1.0,
        a1 in -1.0f64..1.0,
        a2 in -1.0f64..1.0,
        nx in 3usize..9,
        v in prop::collection::vec(-3.0f64..3.0, 81),
        j in 0usize..81,
        bump in 0.01f64..1.0,
    ) {
        // Keeps σσᵀ diagonally dominant.
        let c = frac * s1.min(s2).powi(2) / (s1 + s2);
        let spec = two_dim(s1, s2, c, a1, a2).build().unwrap();
        let grid = Grid::new(&spec, 2.0, nx, 4).unwrap();
        let n = grid.node_count();
        let j = j % n;
        let v = &v[..n];
        let mut w = v.to_vec();
        w[j] += bump;
        let gen = grid.generator(&spec, 0.0).unwrap();
        for i in 0..n {
            prop_assert!(gen.row(i).all(|(_, wt)| wt > 0.0));
            let before = gen.apply_at(i, v);
            let after = gen.apply_at(i, &w);
            if i == j {
                prop_assert!(after <= before + 1e-12);
            } else {
                prop_assert!(after >= before - 1e-12);
            }
        }
    }
}

#[test]
fn non_dominant_covariance_is_rejected() {
    // σσᵀ = [[2, 0.1], [0.1, 0.01]].
    let mut src = two_dim(1.0, 0.1, 0.0, 0.0, 0.0);
    src.diffusion = vec![vec!["1".into(), "1".into()], vec!["0".into(), "0.1".into()]];
    let spec = src.build().unwrap();
    let grid = Grid::new(&spec, 2.0, 9, 4).unwrap();
    assert!(matches!(grid.generator(&spec, 0.0), Err(qvi_lab::Error::NotMonotone { .. })));
}
