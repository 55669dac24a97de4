//! Drive the experiment runner from code: parse a config (a file, or a
//! small built-in one), run it and list what was written.
//!
//!     cargo run --release --example run_experiment -- [config.toml] [out_dir]

use fpflow::cli::{run, ExperimentConfig};

const SMALL: &str = r#"
experiment = "langevin_ou"
seed = 1

[langevin_ou]
N_x = 100
N_step = 100
hidden = [16, 16]
eval_particles = 500
"#;

fn main() -> fpflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let text = match args.get(1) {
        Some(path) => std::fs::read_to_string(path)?,
        None => SMALL.to_string(),
    };
    let mut cfg = ExperimentConfig::from_toml(&text)?;
    cfg.output_dir = args
        .get(2)
        .map_or_else(|| std::env::temp_dir().join("fpflow_run_experiment"), Into::into);
    println!("running {} into {}", cfg.experiment, cfg.output_dir.display());
    let report = run(&cfg)?;
    for (k, v) in &report.summary {
        println!("{k:>28} = {v:.4e}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
