use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fpflow::cli::{run, ExperimentConfig};
use fpflow::Error;

/// Train and evaluate a score-based flow for one configured experiment.
#[derive(Parser, Debug)]
#[command(name = "fpflow", version)]
struct Args {
    /// experiment config (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output directory; overrides `output_dir` in the config
    #[arg(long)]
    output: Option<PathBuf>,
    /// overrides `seed` in the config
    #[arg(long)]
    seed: Option<u64>,
    /// skip training; evaluate a checkpoint or the analytic field
    #[arg(long)]
    eval_only: bool,
    /// checkpoint file or directory of stage_<m>.ckpt files
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(t) = args.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("fpflow: cannot start {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("fpflow: cannot read {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::from_toml(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("fpflow: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(o) = args.output {
        cfg.output_dir = o;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.eval_only |= args.eval_only;
    if args.checkpoint.is_some() {
        cfg.checkpoint = args.checkpoint;
    }
    match run(&cfg) {
        Ok(report) => {
            for (k, v) in &report.summary {
                println!("{k} = {v:e}");
            }
            println!("wrote {} files to {}", report.files.len(), report.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("fpflow: {e}");
            match e {
                Error::Config(_) | Error::Input(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
