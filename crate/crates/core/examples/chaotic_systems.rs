//! Short training runs on the chaotic systems, compared with an
//! Euler-Maruyama reference ensemble through the energy distance and its
//! permutation threshold.
//!
//!     cargo run --release --example chaotic_systems -- [iterations] [horizon]

use fpflow::analysis::{energy_distance, permutation_threshold};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme, TimeGrid};
use fpflow::reference::{euler_maruyama, GaussianRef};
use fpflow::train::{train_multi_stage, AdamConfig, TrainPlan, TrainSetup};
use fpflow::{AtanVariant, Field, Init, ProblemSpec, VelocityField};

fn main() -> fpflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let iterations: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let horizon: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0.4);
    let systems = [
        ("lorenz", ProblemSpec::lorenz(0.1, 0.2)?),
        ("atan lorenz", ProblemSpec::atan_lorenz(0.1, 0.1, AtanVariant::Verbatim)?),
        ("van der pol", ProblemSpec::van_der_pol(2.0, 0.1)?),
    ];
    let stages = 2;
    for (name, spec) in &systems {
        let n = spec.state_dim();
        let rho0 = GaussianRef::isotropic(vec![0.0; n], 1.0)?;
        let grid = TimeGrid::from_horizon(horizon, stages, 0.01)?;
        let plan = TrainPlan {
            n_x: 200,
            steps_per_stage: grid.steps_per_stage,
            dt: 0.01,
            stages,
            lr: 0.01,
            n_step0: iterations,
            n_step: iterations / 2,
            seed: 0,
            adam: AdamConfig::default(),
            resample: true,
            scheme: Scheme::Euler,
            prefix_pool: None,
        };
        let setup = TrainSetup {
            spec,
            rho0: &rho0,
            plan: &plan,
        };
        let init = VelocityField::for_problem(spec, [32, 32], 0, Init::ScaledUniform)?;
        let result = train_multi_stage(&setup, init, |_, _| Ok(()))?;

        let draw = |tag: &str| -> Vec<Vec<f64>> {
            (0..500)
                .map(|i| rho0.sample(&mut fpflow::rng::stream(1, tag, &[i])))
                .collect()
        };
        let xs = draw("flow");
        let fields: Vec<&dyn Field> = result.fields.iter().map(|f| f as &dyn Field).collect();
        let traj = rollout(&initial_scores(&rho0, &xs, false)?, &fields, &grid, RolloutOptions::default())?;
        let flow_end: Vec<Vec<f64>> = traj.last().iter().map(|s| s.x.clone()).collect();
        let steps = grid.total_steps();
        let em_a = euler_maruyama(spec, &draw("em-a"), 0.01, steps, 2, steps)?;
        let em_b = euler_maruyama(spec, &draw("em-b"), 0.01, steps, 3, steps)?;
        let thr = permutation_threshold(em_a.last(), em_b.last(), 99, 0.99, 4)?;
        let dist = energy_distance(&flow_end, em_a.last())?;
        println!(
            "{name:<12} T = {horizon}: loss {:.2e}, energy distance {dist:.4} vs threshold {thr:.4}",
            result.history.last().map_or(f64::NAN, |r| r.loss)
        );
    }
    Ok(())
}
