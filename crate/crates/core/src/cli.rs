//! The `qvi-lab` command line.
//!
//! Each command reads one config file, runs a pipeline and writes its
//! artifacts to the output directory. Exit codes: 0 when every check passes,
//! 2 when a check fails, 1 on errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::artifact::{resolve_out_dir, ArtifactWriter};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::model::{no_free_loop_scan, validate_assumptions, ProblemSpec};
use crate::operators::{Interventions, ObstacleSlice};
use crate::simulate::{estimate_game_value, moment_check, Simulator};
use crate::solvers::{lower_iteration, sandwich_gap, solve_direct, upper_iteration, SolveParams};
use crate::strategy::{
    action_region_report, default_activation_tol, extract_strategies, region_masks_csv,
    ImpulsePolicy, RandomizationDensity,
};
use crate::verify::{
    comparison_check, exponential_scaling_check, perturbation_supersolution_check,
    residual_tolerance, viscosity_residual,
};

#[derive(Debug, Parser)]
#[command(name = "qvi-lab", version, about = "Numerical lab for double-obstacle QVIs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Output directory (default `$QVI_LAB_OUT/<stem>` or `./out/<stem>`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for the parallel loops.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check the standing assumptions on sampled points.
    Validate { config: PathBuf },
    /// Solve the QVI directly and report its residual.
    Solve { config: PathBuf },
    /// Run the lower monotone iteration.
    BoundLower { config: PathBuf },
    /// Run the upper penalty iteration.
    BoundUpper { config: PathBuf },
    /// Compare lower, upper and direct solutions.
    Sandwich { config: PathBuf },
    /// Extract the impulse policy and randomization density.
    ExtractStrategy { config: PathBuf },
    /// Monte Carlo estimate of the game value under extracted strategies.
    Simulate { config: PathBuf },
    /// Residual, perturbation, scaling, comparison and loop checks.
    Verify { config: PathBuf },
    /// Write the direct field with obstacle maps for every slice.
    Export { config: PathBuf },
}

impl Command {
    pub fn config(&self) -> &Path {
        match self {
            Command::Validate { config }
            | Command::Solve { config }
            | Command::BoundLower { config }
            | Command::BoundUpper { config }
            | Command::Sandwich { config }
            | Command::ExtractStrategy { config }
            | Command::Simulate { config }
            | Command::Verify { config }
            | Command::Export { config } => config,
        }
    }
}

/// Parses `args` (including the program name), runs and returns the exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            code
        }
    }
}

/// Runs a parsed command line and returns the exit code.
pub fn run(cli: &Cli) -> i32 {
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli)) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(Error::Monotonicity { .. }) | Err(Error::LadderExhausted { .. }) => {
            // Pipelines abort on these; they are check failures.
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    out: ArtifactWriter,
}

impl Ctx {
    fn spec(&self) -> Result<ProblemSpec> {
        self.cfg.problem.build()
    }

    fn grid(&self, spec: &ProblemSpec) -> Result<Grid> {
        let g = &self.cfg.grid;
        Grid::new(spec, g.radius, g.nx, g.nt)
    }

    fn params(&self) -> &SolveParams {
        &self.cfg.solver
    }

    fn report(&mut self, name: &str, text: &str, kv: &str) -> Result<()> {
        print!("{text}");
        self.out.write(&format!("{name}.txt"), text)?;
        self.out.write(&format!("{name}.kv"), kv)?;
        Ok(())
    }
}

fn execute(cli: &Cli) -> Result<bool> {
    let path = cli.command.config();
    let cfg = RunConfig::load(path).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let dir = resolve_out_dir(cli.out.as_deref(), path);
    let out = ArtifactWriter::create(dir, &cfg.hash)?;
    let mut ctx = Ctx { cfg, out };
    let pass = match &cli.command {
        Command::Validate { .. } => cmd_validate(&mut ctx)?,
        Command::Solve { .. } => cmd_solve(&mut ctx)?,
        Command::BoundLower { .. } => cmd_bound(&mut ctx, true)?,
        Command::BoundUpper { .. } => cmd_bound(&mut ctx, false)?,
        Command::Sandwich { .. } => cmd_sandwich(&mut ctx)?,
        Command::ExtractStrategy { .. } => cmd_extract(&mut ctx)?,
        Command::Simulate { .. } => cmd_simulate(&mut ctx)?,
        Command::Verify { .. } => cmd_verify(&mut ctx)?,
        Command::Export { .. } => cmd_export(&mut ctx)?,
    };
    eprintln!(
        "{} ({} files in {})",
        if pass { "PASS" } else { "FAIL" },
        ctx.out.written().len(),
        ctx.out.dir().display()
    );
    Ok(pass)
}

fn cmd_validate(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let v = &ctx.cfg.verify;
    let radius = v.validation_radius.unwrap_or(ctx.cfg.grid.radius);
    let rep = validate_assumptions(&spec, v.validation_samples, radius, v.validation_seed)?;
    ctx.report("validation", &rep.to_string(), &rep.to_key_values())?;
    Ok(rep.all_passed())
}

fn cmd_solve(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let field = solve_direct(&spec, &grid, ctx.params())?;
    let res = viscosity_residual(&field, &spec, &grid, ctx.params().mode)?;
    let tol = residual_tolerance(&grid);
    let pass = res.sup <= tol && res.terminal <= 1e-12;
    let ops = Interventions::build(&spec, &grid, 0.0)?;
    let obstacles = ObstacleSlice::compute(&ops, field.slice(0));
    ctx.out.write("direct.csv", &field.to_csv(&grid))?;
    ctx.out.write("residual.csv", &res.residual.to_csv(&grid))?;
    ctx.out.write("obstacles_t0.csv", &obstacles.to_csv(&grid, field.slice(0)))?;
    let mid = grid.nearest_node(&[0.0; 2]);
    let text = format!(
        "direct solve {}\n  v(0, x*) = {} at node {mid}\n  {res}  tolerance {tol:.6e}\n",
        if pass { "PASS" } else { "FAIL" },
        field.get(0, mid),
    );
    let kv = format!(
        "value_at_origin={}\ntolerance={tol}\n{}pass={pass}\n",
        field.get(0, mid),
        res.to_key_values()
    );
    ctx.report("solve", &text, &kv)?;
    Ok(pass)
}

fn cmd_bound(ctx: &mut Ctx, lower: bool) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let rep = if lower {
        lower_iteration(&spec, &grid, ctx.params())?
    } else {
        upper_iteration(&spec, &grid, ctx.params())?
    };
    let name = if lower { "lower" } else { "upper" };
    eprintln!("{name} iteration took {:.3?}", rep.wall_time);
    let res = viscosity_residual(&rep.field, &spec, &grid, ctx.params().mode)?;
    let tol = residual_tolerance(&grid);
    // Lower fields are subsolutions and upper fields supersolutions.
    let pass = if lower { res.max <= tol } else { res.min >= -tol };
    ctx.out.write(&format!("{name}.csv"), &rep.field.to_csv(&grid))?;
    ctx.out.write(&format!("{name}_deltas.csv"), &rep.deltas_csv())?;
    ctx.out.write(&format!("{name}_residual.csv"), &res.residual.to_csv(&grid))?;
    let text = format!("{name} iteration {}\n{rep}  {res}", if pass { "PASS" } else { "FAIL" });
    let kv = format!(
        "{}residual_min={}\nresidual_max={}\ntolerance={tol}\npass={pass}\n",
        rep.to_key_values(),
        res.min,
        res.max
    );
    ctx.report(name, &text, &kv)?;
    Ok(pass)
}

fn cmd_sandwich(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let p = ctx.params();
    let lo = lower_iteration(&spec, &grid, p)?;
    let up = upper_iteration(&spec, &grid, p)?;
    let direct = solve_direct(&spec, &grid, p)?;
    let gap = sandwich_gap(&lo, &up, &direct, &grid, p)?;
    ctx.out.write("lower.csv", &lo.field.to_csv(&grid))?;
    ctx.out.write("upper.csv", &up.field.to_csv(&grid))?;
    ctx.out.write("direct.csv", &direct.to_csv(&grid))?;
    ctx.report("gap", &gap.to_string(), &gap.to_key_values())?;
    Ok(gap.pass)
}

fn strategies(
    ctx: &Ctx,
    spec: &ProblemSpec,
    grid: &Grid,
) -> Result<(ImpulsePolicy, RandomizationDensity)> {
    let p = ctx.params();
    let up = upper_iteration(spec, grid, p)?;
    let level = *p.penalty_ladder.last().expect("validated ladder is non-empty");
    let eps = ctx
        .cfg
        .simulate
        .activation_tol
        .unwrap_or_else(|| default_activation_tol(grid));
    extract_strategies(&up.field, spec, grid, level, eps)
}

fn cmd_extract(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let (policy, density) = strategies(ctx, &spec, &grid)?;
    let regions = action_region_report(&policy, &density, &grid);
    ctx.out.write("policy.csv", &policy.to_csv())?;
    ctx.out.write("density.csv", &density.to_csv())?;
    ctx.out.write("regions.csv", &regions.to_csv(&grid))?;
    ctx.out.write("masks.csv", &region_masks_csv(&policy, &density))?;
    let mut text = regions.to_string();
    writeln!(
        text,
        "activation tolerance {:.3e}, {} chain diagnostics, {} triggers",
        policy.activation_tol,
        policy.diagnostics.len(),
        density.trigger_count()
    )
    .unwrap();
    let kv = format!(
        "activation_tol={}\nchain_diagnostics={}\ntriggers={}\ndensity_level={}\n",
        policy.activation_tol,
        policy.diagnostics.len(),
        density.trigger_count(),
        density.level
    );
    ctx.report("strategy", &text, &kv)?;
    Ok(true)
}

fn cmd_simulate(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let direct = solve_direct(&spec, &grid, ctx.params())?;
    let (policy, density) = strategies(ctx, &spec, &grid)?;
    let s = ctx.cfg.simulate.clone();
    let dt = s.dt.unwrap_or(grid.dt / 4.0);
    let m0 = grid.time_slice(s.t0);
    let target = grid.interpolate(direct.slice(m0), &s.x0)?;
    let mc = estimate_game_value(
        &spec, &grid, &policy, &density, s.t0, s.x0, s.paths, dt, s.seed, target,
    )?;
    let mut text = mc.to_string();
    let mut kv = mc.to_key_values();
    for p in [2, 4] {
        let mo = moment_check(
            &spec,
            &grid,
            &policy,
            &density,
            s.t0,
            s.x0,
            p,
            s.paths,
            dt,
            s.seed.wrapping_add(p as u64),
        )?;
        writeln!(
            text,
            "moment p={p}: E sup|X|^p / (1 + |x0|^p) = {:.4} ± {:.4}, constant {} {}",
            mo.ratio,
            1.96 * mo.ratio_stderr,
            mo.constant,
            if mo.pass { "PASS" } else { "FAIL" }
        )
        .unwrap();
        for line in mo.to_key_values().lines() {
            writeln!(kv, "moment{p}.{line}").unwrap();
        }
    }
    if s.dump_paths > 0 {
        let sim = Simulator::new(&spec, &grid, &policy, &density, s.t0, s.x0, dt)?;
        for k in 0..s.dump_paths.min(s.paths) {
            let rec = sim.run(s.seed, k as u64, true)?;
            ctx.out.write(&format!("path_{k}.csv"), &rec.to_csv(spec.dim))?;
        }
    }
    ctx.report("mc", &text, &kv)?;
    Ok(mc.pass)
}

fn cmd_verify(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let p = ctx.params().clone();
    let v = ctx.cfg.verify.clone();
    let tol = residual_tolerance(&grid);
    let mut text = String::new();
    let mut all = true;

    let direct = solve_direct(&spec, &grid, &p)?;
    let res = viscosity_residual(&direct, &spec, &grid, p.mode)?;
    let res_pass = res.sup <= tol && res.terminal <= 1e-12;
    all &= res_pass;
    writeln!(text, "residual {} {res}", if res_pass { "PASS" } else { "FAIL" }).unwrap();
    ctx.out.write("residual.csv", &res.residual.to_csv(&grid))?;
    ctx.out.write(
        "residual.kv",
        &format!("{}tolerance={tol}\npass={res_pass}\n", res.to_key_values()),
    )?;

    let lo = lower_iteration(&spec, &grid, &p)?;
    let up = upper_iteration(&spec, &grid, &p)?;
    let pert = perturbation_supersolution_check(&up.field, &spec, &grid, p.mode, &v.perturb)?;
    all &= pert.pass;
    write!(text, "{pert}").unwrap();
    ctx.out.write("perturbation.kv", &pert.to_key_values())?;

    for &kappa in &v.kappa {
        let c = exponential_scaling_check(&spec, &grid, &p, kappa)?;
        all &= c.pass;
        write!(text, "kappa={kappa}: {c}").unwrap();
        ctx.out.write(&format!("scaling_kappa_{kappa}.kv"), &c.to_key_values())?;
    }

    let cmp = comparison_check(&lo.field, &up.field, &spec, &grid, p.mode)?;
    all &= cmp.pass;
    write!(text, "{cmp}").unwrap();
    ctx.out.write("comparison.kv", &cmp.to_key_values())?;

    let loops = no_free_loop_scan(&spec, &v.loops, 0.0, &v.loop_x0)?;
    let loop_pass = loops.violations.is_empty() && loops.complete;
    all &= loop_pass;
    writeln!(
        text,
        "no_free_loop {}: {} violations in {} of {} sequences",
        if loop_pass { "PASS" } else { "FAIL" },
        loops.violations.len(),
        loops.sequences_checked,
        loops.sequences_total
    )
    .unwrap();
    ctx.out.write("loops.kv", &loops.to_key_values())?;

    let kv = format!(
        "residual={res_pass}\nperturbation={}\ncomparison={}\nno_free_loop={loop_pass}\npass={all}\n",
        pert.pass, cmp.pass
    );
    ctx.report("verify", &text, &kv)?;
    Ok(all)
}

fn cmd_export(ctx: &mut Ctx) -> Result<bool> {
    let spec = ctx.spec()?;
    let grid = ctx.grid(&spec)?;
    let field = solve_direct(&spec, &grid, ctx.params())?;
    ctx.out.write("direct.csv", &field.to_csv(&grid))?;
    let mut all = String::from("m,");
    for m in 0..grid.time_count() {
        let ops = Interventions::build(&spec, &grid, grid.time(m))?;
        let obs = ObstacleSlice::compute(&ops, field.slice(m));
        let csv = obs.to_csv(&grid, field.slice(m));
        let mut lines = csv.lines();
        if m == 0 {
            writeln!(all, "{}", lines.next().unwrap_or_default()).unwrap();
        } else {
            lines.next();
        }
        for l in lines {
            writeln!(all, "{m},{l}").unwrap();
        }
    }
    ctx.out.write("obstacles.csv", &all)?;
    let mut problem = String::new();
    writeln!(problem, "dimension={}", spec.dim).unwrap();
    writeln!(problem, "horizon={}", spec.horizon).unwrap();
    writeln!(problem, "running_reward={}", spec.running).unwrap();
    writeln!(problem, "terminal={}", spec.terminal).unwrap();
    writeln!(problem, "impulse_cost={}", spec.impulse_cost).unwrap();
    writeln!(problem, "jump_cost={}", spec.jump_cost).unwrap();
    writeln!(problem, "nodes={}\ntimes={}\ndt={}\ndx={}", grid.node_count(), grid.time_count(), grid.dt, grid.dx).unwrap();
    ctx.report("export", &format!("exported {} slices\n", grid.time_count()), &problem)?;
    Ok(true)
}
