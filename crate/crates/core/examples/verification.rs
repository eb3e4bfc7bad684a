//! Perturbation, exponential-scaling and comparison checks on the teleport
//! game.
//!
//! ```text
//! cargo run --release --example verification
//! ```

use qvi_lab::grid::{Grid, ValueField};
use qvi_lab::models;
use qvi_lab::solvers::{lower_iteration, upper_iteration, SolveParams};
use qvi_lab::verify::{
    comparison_check, exponential_scaling_check, perturbation_supersolution_check, PerturbParams,
};

fn main() -> qvi_lab::Result<()> {
    let spec = models::teleport().build()?;
    let grid = Grid::new(&spec, 2.0, 65, 64)?;
    let params = SolveParams::default();
    let lower = lower_iteration(&spec, &grid, &params)?;
    let upper = upper_iteration(&spec, &grid, &params)?;

    let perturb = PerturbParams::geometric(1.0, 0.01, 100.0, 9, 1.0);
    print!(
        "{}",
        perturbation_supersolution_check(&upper.field, &spec, &grid, params.mode, &perturb)?
    );

    for kappa in [-1.0, 0.0, 1.0] {
        print!("kappa = {kappa}: {}", exponential_scaling_check(&spec, &grid, &params, kappa)?);
    }

    print!("{}", comparison_check(&lower.field, &upper.field, &spec, &grid, params.mode)?);

    // Shifting the supersolution down breaks the ordering everywhere.
    let shifted = ValueField::from_fn(&grid, |m, i| upper.field.get(m, i) - 1.0);
    match comparison_check(&lower.field, &shifted, &spec, &grid, params.mode) {
        Ok(r) => print!("shifted: {r}"),
        Err(e) => println!("shifted: {e}"),
    }
    Ok(())
}
