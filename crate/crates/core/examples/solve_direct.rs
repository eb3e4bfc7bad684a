//! Solve the teleport game directly and inspect the solution.
//!
//! ```text
//! cargo run --release --example solve_direct
//! ```

use qvi_lab::grid::Grid;
use qvi_lab::models;
use qvi_lab::operators::{Interventions, ObstacleSlice};
use qvi_lab::solvers::{solve_direct, SolveParams, TimeStepping};
use qvi_lab::verify::{residual_tolerance, viscosity_residual};

fn main() -> qvi_lab::Result<()> {
    let spec = models::teleport().build()?;
    let grid = Grid::new(&spec, 2.0, 65, 64)?;
    for mode in [TimeStepping::Explicit, TimeStepping::Implicit] {
        let params = SolveParams {
            mode,
            ..SolveParams::default()
        };
        let start = std::time::Instant::now();
        let v = solve_direct(&spec, &grid, &params)?;
        let res = viscosity_residual(&v, &spec, &grid, mode)?;
        let origin = grid.nearest_node(&[0.0; 2]);
        println!(
            "{mode:?}: v(0, 0) = {:.6} in {:?}; residual sup {:.2e} (tolerance {:.2e})",
            v.get(0, origin),
            start.elapsed(),
            res.sup,
            residual_tolerance(&grid)
        );
    }

    // Who acts where at t = 0.
    let v = solve_direct(&spec, &grid, &SolveParams::default())?;
    let ops = Interventions::build(&spec, &grid, 0.0)?;
    let obs = ObstacleSlice::compute(&ops, v.slice(0));
    println!("\n     x        v       Mv       Nv   action");
    for i in (0..grid.node_count()).step_by(4) {
        let vi = v.get(0, i);
        let action = if vi - obs.mv[i] < 1e-9 {
            "impulse"
        } else if obs.nv[i] - vi < 1e-9 {
            "jump"
        } else {
            "-"
        };
        println!(
            "{:>6.3} {:>8.4} {:>8.4} {:>8.4}   {action}",
            grid.point(i)[0],
            vi,
            obs.mv[i],
            obs.nv[i]
        );
    }
    Ok(())
}
