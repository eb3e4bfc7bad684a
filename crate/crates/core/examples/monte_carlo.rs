//! Play the extracted strategies against each other by simulation and
//! compare the average payoff with the PDE value.
//!
//! ```text
//! cargo run --release --example monte_carlo
//! ```

use qvi_lab::grid::Grid;
use qvi_lab::models;
use qvi_lab::simulate::{estimate_game_value, moment_check, simulate_path};
use qvi_lab::solvers::{solve_direct, upper_iteration, SolveParams};
use qvi_lab::strategy::{default_activation_tol, extract_strategies};

fn main() -> qvi_lab::Result<()> {
    let spec = models::teleport().build()?;
    let grid = Grid::new(&spec, 2.0, 65, 64)?;
    let params = SolveParams::default();
    let direct = solve_direct(&spec, &grid, &params)?;
    let upper = upper_iteration(&spec, &grid, &params)?;
    let (policy, density) =
        extract_strategies(&upper.field, &spec, &grid, 256.0, default_activation_tol(&grid))?;

    let x0 = [0.0; 2];
    let dt = grid.dt / 4.0;
    let target = direct.get(0, grid.nearest_node(&x0));

    let path = simulate_path(&spec, &grid, &policy, &density, 0.0, x0, dt, 42)?;
    println!("one path: payoff {:.4}", path.payoff);
    for ev in &path.events {
        println!("  t = {:.4}: {:?} {:.3} -> {:.3}", ev.t, ev.kind, ev.before[0], ev.after[0]);
    }

    let start = std::time::Instant::now();
    let mc = estimate_game_value(&spec, &grid, &policy, &density, 0.0, x0, 10_000, dt, 7, target)?;
    print!("{mc}");
    println!("  ({:?})", start.elapsed());

    for p in [2, 4] {
        let m = moment_check(&spec, &grid, &policy, &density, 0.0, x0, p, 10_000, dt, 3)?;
        println!(
            "E sup|X|^{p} = {:.4} ± {:.4}, bound {} ({})",
            m.moment,
            1.96 * m.stderr,
            m.constant,
            if m.pass { "ok" } else { "exceeded" }
        );
    }
    Ok(())
}
