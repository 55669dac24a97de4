//! Train the 2-d double-well Langevin flow, then compare its partition
//! function estimate with quadrature and check that both wells are filled.
//!
//!     cargo run --release --example train_double_well -- [iterations] [width] [particles]

use fpflow::analysis::{estimate_z, free_energy};
use fpflow::cli::reference_partition;
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme};
use fpflow::reference::GaussianRef;
use fpflow::train::{train_single_stage, AdamConfig, TrainPlan, TrainSetup};
use fpflow::{Field, Init, Potential, ProblemSpec, VelocityField};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> fpflow::Result<()> {
    let (iterations, width, n_x) = (arg(1, 300), arg(2, 32), arg(3, 200));
    let spec = ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5)?;
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
    let (field, history) = train_single_stage(&setup, field)?;
    for r in history.iter().step_by((iterations / 10).max(1)) {
        println!("iter {:4}  loss {:.3e}", r.iteration, r.loss);
    }

    let mut r = fpflow::rng::stream(1, "eval", &[]);
    let xs: Vec<Vec<f64>> = (0..2000).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let traj = rollout(&init, &[&field as &dyn Field], &plan.grid()?, RolloutOptions::default())?;
    let z = estimate_z(free_energy(traj.last(), &spec)?);
    let zr = reference_partition(&spec)?;
    println!("Z flow {z:.5}  quadrature {zr:.5}  relative error {:.2}%", 100.0 * (z / zr - 1.0).abs());
    let up = traj.last().iter().filter(|s| s.x[0] + s.x[1] > 0.0).count();
    println!("particles near (1, 1): {up}, near (-1, -1): {}", xs.len() - up);
    Ok(())
}
