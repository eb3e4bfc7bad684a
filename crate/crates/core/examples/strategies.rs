//! Extract the impulse policy and the randomization density and write them
//! as CSV.
//!
//! ```text
//! cargo run --release --example strategies -- /tmp/teleport-strategy
//! ```

use std::path::PathBuf;

use qvi_lab::grid::Grid;
use qvi_lab::models;
use qvi_lab::solvers::{upper_iteration, SolveParams};
use qvi_lab::strategy::{
    action_region_report, default_activation_tol, extract_strategies, region_masks_csv,
};

fn main() -> qvi_lab::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("qvi-lab-strategies"));
    let spec = models::teleport().build()?;
    let grid = Grid::new(&spec, 2.0, 65, 64)?;
    let params = SolveParams::default();
    let upper = upper_iteration(&spec, &grid, &params)?;
    let level = *params.penalty_ladder.last().unwrap();
    let (policy, density) =
        extract_strategies(&upper.field, &spec, &grid, level, default_activation_tol(&grid))?;
    let report = action_region_report(&policy, &density, &grid);
    print!("{report}");

    let m = 0;
    let row: String = (0..grid.node_count())
        .map(|i| match (policy.intervenes(m, i), density.any_triggered(m, i)) {
            (true, true) => 'X',
            (true, false) => 'I',
            (false, true) => 'J',
            (false, false) => '.',
        })
        .collect();
    println!("t = 0 over [-2, 2]: {row}");
    println!("I: impulse, J: randomized jump, X: both");

    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("policy.csv"), policy.to_csv())?;
    std::fs::write(out.join("density.csv"), density.to_csv())?;
    std::fs::write(out.join("masks.csv"), region_masks_csv(&policy, &density))?;
    std::fs::write(out.join("regions.csv"), report.to_csv(&grid))?;
    println!("wrote CSV files to {}", out.display());
    Ok(())
}
