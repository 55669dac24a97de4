//! Train a velocity field for the 2-d Ornstein-Uhlenbeck process and
//! compare it with the closed-form solution.
//!
//!     cargo run --release --example quickstart_ou -- [iterations] [width] [particles]

use std::time::Instant;

use fpflow::analysis::{error_metrics, estimate_z, free_energy};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme, TimeGrid};
use fpflow::reference::{GaussianRef, OuTrueField};
use fpflow::train::{train_single_stage, AdamConfig, TrainPlan, TrainSetup};
use fpflow::{Field, Init, Potential, ProblemSpec, VelocityField};

fn arg(i: usize, default: usize) -> usize {
    std::env::args()
        .nth(i)
        .and_then(|s| s.parse().ok())
        .unwrap_or(default)
}

fn main() -> fpflow::Result<()> {
    let iterations = arg(1, 300);
    let width = arg(2, 32);
    let n_x = arg(3, 200);

    let (eps, c) = (0.5, 0.5);
    let spec = ProblemSpec::langevin(2, Potential::Quadratic, eps, c)?;
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 1.0)?;
    let plan = TrainPlan {
        n_x,
        steps_per_stage: 100,
        dt: 0.01,
        stages: 1,
        lr: 0.01,
        n_step0: iterations,
        n_step: iterations,
        seed: 0,
        adam: AdamConfig::default(),
        resample: true,
        scheme: Scheme::Euler,
        prefix_pool: None,
    };
    let setup = TrainSetup {
        spec: &spec,
        rho0: &rho0,
        plan: &plan,
    };
    let field = VelocityField::for_problem(&spec, [width, width], 0, Init::ScaledUniform)?;

    let started = Instant::now();
    let (field, history) = train_single_stage(&setup, field)?;
    let secs = started.elapsed().as_secs_f64();
    for r in history.iter().step_by((iterations / 10).max(1)) {
        println!("iter {:4}  loss {:.3e}", r.iteration, r.loss);
    }
    println!(
        "trained {iterations} iterations in {secs:.1} s ({:.1} ms / iteration)",
        1e3 * secs / iterations.max(1) as f64
    );

    // evaluate on fresh particles
    let grid = TimeGrid::new(0.0, 0.01, 100, 1)?;
    let mut r = fpflow::rng::stream(1, "eval", &[]);
    let xs: Vec<Vec<f64>> = (0..1000).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let fields: [&dyn Field; 1] = [&field];
    let traj = rollout(&init, &fields, &grid, RolloutOptions::default())?;
    let truth = OuTrueField::new(2, 1.0, eps, c)?;
    let m = error_metrics(&fields, &grid, &truth, |t| Ok(truth.density_at(t)), &traj)?;
    println!(
        "err_f {:.3e}  err_rho {:.3e}  err_s {:.3e}",
        m.err_f, m.err_rho, m.err_s
    );
    let z = estimate_z(free_energy(traj.last(), &spec)?);
    println!("Z estimate {z:.5} (exact {:.5})", std::f64::consts::PI);
    Ok(())
}
