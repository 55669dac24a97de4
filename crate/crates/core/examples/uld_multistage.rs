//! Multi-stage training for underdamped Langevin with a quadratic
//! potential; each stage warm-starts from the previous one and its
//! checkpoint is written as soon as the stage finishes.
//!
//!     cargo run --release --example uld_multistage -- [out_dir] [n_step0] [n_step] [particles]

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use fpflow::analysis::{error_metrics, estimate_z, free_energy};
use fpflow::field::{write_checkpoint, Checkpoint};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme};
use fpflow::reference::{uld_covariance_rk4, GaussianRef, UldTrueField};
use fpflow::train::{train_multi_stage, AdamConfig, TrainPlan, TrainSetup};
use fpflow::{Field, Init, Potential, ProblemSpec, VelocityField};

fn main() -> fpflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let out = PathBuf::from(args.get(1).map_or("uld_checkpoints", String::as_str));
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (n_step0, n_step, n_x) = (num(2, 200), num(3, 80), num(4, 100));

    let spec = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0)?;
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 2.0)?;
    let plan = TrainPlan {
        n_x,
        steps_per_stage: 100,
        dt: 0.01,
        stages: 5,
        lr: 0.01,
        n_step0,
        n_step,
        seed: 0,
        adam: AdamConfig::default(),
        resample: true,
        scheme: Scheme::Symplectic,
        prefix_pool: None,
    };
    let setup = TrainSetup {
        spec: &spec,
        rho0: &rho0,
        plan: &plan,
    };
    std::fs::create_dir_all(&out)?;
    let init = VelocityField::for_problem(&spec, [32, 32], 0, Init::ScaledUniform)?;
    let result = train_multi_stage(&setup, init, |m, f| {
        let path = out.join(format!("stage_{m}.ckpt"));
        write_checkpoint(BufWriter::new(File::create(&path)?), &Checkpoint::of(f))?;
        println!("stage {m} done, wrote {}", path.display());
        Ok(())
    })?;
    for m in 1..=plan.stages {
        let last = result.history.iter().rev().find(|r| r.stage == m).unwrap();
        println!("stage {m}  final loss {:.3e}", last.loss);
    }

    let grid = plan.grid()?;
    let mut r = fpflow::rng::stream(1, "eval", &[]);
    let xs: Vec<Vec<f64>> = (0..1000).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let fields: Vec<&dyn Field> = result.fields.iter().map(|f| f as &dyn Field).collect();
    let opts = RolloutOptions {
        scheme: Scheme::Symplectic,
        record_every: 1,
    };
    let traj = rollout(&init, &fields, &grid, opts)?;
    let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.01, grid.total_steps())?;
    let truth = UldTrueField { d: 1, cov: cov.clone() };
    let m = error_metrics(&fields, &grid, &truth, |t| cov.gaussian(t, 1), &traj)?;
    println!("err_f {:.3e}  err_rho {:.3e}  err_s {:.3e}", m.err_f, m.err_rho, m.err_s);
    let z = estimate_z(free_energy(traj.last(), &spec)?);
    println!("Z estimate {z:.5} (exact {:.5})", 2.0 * std::f64::consts::PI);
    Ok(())
}
