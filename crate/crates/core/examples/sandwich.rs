//! Lower and upper iterations around the direct solution, on two grids.
//!
//! ```text
//! cargo run --release --example sandwich
//! ```

use qvi_lab::grid::Grid;
use qvi_lab::models;
use qvi_lab::solvers::{lower_iteration, sandwich_gap, solve_direct, upper_iteration, SolveParams};

fn main() -> qvi_lab::Result<()> {
    let spec = models::teleport().build()?;
    let params = SolveParams::default();
    for (nx, nt) in [(33, 32), (65, 64), (129, 128)] {
        let grid = Grid::new(&spec, 2.0, nx, nt)?;
        let lower = lower_iteration(&spec, &grid, &params)?;
        let upper = upper_iteration(&spec, &grid, &params)?;
        let direct = solve_direct(&spec, &grid, &params)?;
        let gap = sandwich_gap(&lower, &upper, &direct, &grid, &params)?;
        println!("== grid nx = {nx}, nt = {nt}");
        println!("lower iteration deltas {:?}", lower.deltas);
        println!("upper ladder {:?} deltas {:?}", upper.levels, upper.deltas);
        print!("{gap}");
    }
    Ok(())
}
