//! With interventions priced out the game reduces to `E ∫ X_t² dt` for a
//! Brownian motion, whose value at the origin is `T² / 2`.
//!
//! ```text
//! cargo run --release --example pure_diffusion
//! ```

use qvi_lab::grid::Grid;
use qvi_lab::models;
use qvi_lab::simulate::estimate_game_value;
use qvi_lab::solvers::{solve_direct, SolveParams};
use qvi_lab::strategy::{ImpulsePolicy, RandomizationDensity};

fn main() -> qvi_lab::Result<()> {
    let spec = models::diffusion().build()?;
    let exact = spec.horizon * spec.horizon / 2.0;
    for (nx, nt) in [(61, 64), (121, 128)] {
        let grid = Grid::new(&spec, 6.0, nx, nt)?;
        let v = solve_direct(&spec, &grid, &SolveParams::default())?;
        let v0 = v.get(0, grid.nearest_node(&[0.0; 2]));
        println!(
            "nx = {nx:>3}, nt = {nt:>3}: v(0, 0) = {v0:.6}, relative error {:.3}%",
            100.0 * (v0 - exact).abs() / exact
        );
        if nx == 121 {
            let policy = ImpulsePolicy::empty(&grid);
            let density = RandomizationDensity::empty(&grid, spec.jumps.len(), 1.0);
            let mc = estimate_game_value(
                &spec, &grid, &policy, &density, 0.0, [0.0; 2], 10_000, grid.dt / 4.0, 11, v0,
            )?;
            print!("{mc}");
        }
    }
    Ok(())
}
