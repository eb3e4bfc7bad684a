//! Search for zero-cost intervention loops.
//!
//! ```text
//! cargo run --example no_free_loop
//! ```

use qvi_lab::model::{no_free_loop_scan, NoFreeLoopParams};
use qvi_lab::models;

fn main() -> qvi_lab::Result<()> {
    let params = NoFreeLoopParams::new(1e-6, 0.25, 4)?;
    for (name, src) in [("trap", models::trap()), ("teleport", models::teleport()), ("zero", models::zero())] {
        let spec = src.build()?;
        let report = no_free_loop_scan(&spec, &params, 0.0, &[0.0; 2])?;
        println!(
            "{name}: {} violations among {} chains (coverage {:.0}%), cheapest return {:?}",
            report.violations.len(),
            report.sequences_checked,
            100.0 * report.coverage(),
            report.smallest_return_cost
        );
        if let Some(v) = report.violations.first() {
            println!("  e.g. {:?} with net cost {}", v.steps, v.net_cost);
        }
    }
    Ok(())
}
