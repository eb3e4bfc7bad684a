//! Check the standing assumptions of the reference models on sampled points.
//!
//! ```text
//! cargo run --example validate_model
//! ```

use qvi_lab::model::validate_assumptions;
use qvi_lab::models;

fn main() -> qvi_lab::Result<()> {
    for (name, src) in [
        ("zero", models::zero()),
        ("teleport", models::teleport()),
        ("diffusion", models::diffusion()),
    ] {
        let spec = src.build()?;
        let report = validate_assumptions(&spec, 2000, 2.0, 1)?;
        println!("== {name}: {}", if report.all_passed() { "all checks pass" } else { "FAILED" });
        print!("{report}");
    }

    // A negative impulse cost breaks the cost floor.
    let mut src = models::teleport();
    src.impulse_cost = "x1 - 0.5".into();
    let report = validate_assumptions(&src.build()?, 2000, 2.0, 1)?;
    let c = report.check("cost_floor").expect("always present");
    println!("== state-dependent cost: cost_floor passed = {}, witness {:?}", c.passed, c.witness);
    Ok(())
}
