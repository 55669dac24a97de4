//! Free energy and dissipation along the exact OU flow, the partition
//! function read off the terminal free energy, and the CSV trace.
//!
//!     cargo run --release --example free_energy -- [energy.csv]

use std::fs::File;

use fpflow::analysis::{estimate_z, gaussian_kl, stationary_gaussian, EnergyTrace};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, TimeGrid};
use fpflow::reference::OuTrueField;
use fpflow::{Field, Potential, ProblemSpec};

fn main() -> fpflow::Result<()> {
    let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5)?;
    let truth = OuTrueField::new(2, 1.0, 0.5, 0.5)?;
    let rho0 = truth.density_at(0.0);
    let mut r = fpflow::rng::stream(0, "example", &[]);
    let xs: Vec<Vec<f64>> = (0..4000).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let grid = TimeGrid::from_horizon(2.0, 1, 0.01)?;
    let traj = rollout(&init, &[&truth as &dyn Field], &grid, RolloutOptions::default())?;
    let trace = EnergyTrace::from_trajectory(&traj, &spec)?.with_reference(&spec, |t| Ok(truth.density_at(t)))?;

    let (rf, rd) = trace.reference.clone().unwrap();
    let log_z = (std::f64::consts::PI).ln();
    let pi = stationary_gaussian(&spec)?;
    for k in (0..trace.times.len()).step_by(25) {
        let t = trace.times[k];
        println!(
            "t {t:.2}  D {:.4} (exact {:.4}, KL + log Z = {:.4})  dissipation {:.4} (exact {:.4})",
            trace.free_energy[k],
            rf[k],
            gaussian_kl(&truth.density_at(t), &pi)? - log_z,
            trace.dissipation[k],
            rd[k]
        );
    }
    println!("largest increase between steps {:.2e}", trace.max_increase());
    let z = estimate_z(*trace.free_energy.last().unwrap());
    println!("Z estimate {z:.5} (exact {:.5})", std::f64::consts::PI);
    if let Some(path) = std::env::args().nth(1) {
        trace.write_csv(File::create(&path)?)?;
        println!("wrote {path}");
    }
    Ok(())
}
