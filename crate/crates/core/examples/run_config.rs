//! Drive the command-line pipelines from code: parse a config and run the
//! `sandwich` command into a temporary directory.
//!
//! ```text
//! cargo run --release --example run_config
//! ```

use qvi_lab::config::RunConfig;

const CONFIG: &str = include_str!("../configs/teleport.cfg");

fn main() -> qvi_lab::Result<()> {
    let cfg = RunConfig::parse(CONFIG)?;
    println!(
        "teleport.cfg: sha256 {}, grid {:?}, ladder {:?}",
        &cfg.hash[..12],
        cfg.grid,
        cfg.solver.penalty_ladder
    );

    // A typo is reported with section and position.
    let typo = CONFIG.replace("nt = 64", "nt = 64\nnz = 3");
    if let Err(e) = RunConfig::parse(&typo) {
        println!("typo: {e}");
    }

    let dir = std::env::temp_dir().join("qvi-lab-run-config");
    let path = dir.join("teleport.cfg");
    std::fs::create_dir_all(&dir)?;
    std::fs::write(&path, CONFIG)?;
    let out = dir.join("out");
    let code = qvi_lab::cli::main_with([
        "qvi-lab".as_ref(),
        "sandwich".as_ref(),
        path.as_os_str(),
        "--out".as_ref(),
        out.as_os_str(),
    ]);
    println!("exit code {code}; artifacts in {}", out.display());
    Ok(())
}
