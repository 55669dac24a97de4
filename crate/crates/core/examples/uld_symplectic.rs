//! Underdamped Langevin with the exact reference field: forward Euler
//! against the symplectic variant, measured against the covariance ODE.
//!
//!     cargo run --release --example uld_symplectic

use fpflow::analysis::{estimate_z, free_energy};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme, TimeGrid};
use fpflow::reference::{uld_covariance_rk4, GaussianRef, UldTrueField};
use fpflow::{Field, Potential, ProblemSpec};

fn main() -> fpflow::Result<()> {
    let spec = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0)?;
    let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.01, 500)?;
    let truth = UldTrueField { d: 1, cov: cov.clone() };
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 2.0)?;
    let mut r = fpflow::rng::stream(0, "example", &[]);
    let xs: Vec<Vec<f64>> = (0..2000).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, false)?;
    let grid = TimeGrid::from_horizon(5.0, 1, 0.01)?;

    for scheme in [Scheme::Euler, Scheme::Symplectic] {
        let opts = RolloutOptions {
            scheme,
            record_every: 100,
        };
        let traj = rollout(&init, &[&truth as &dyn Field], &grid, opts)?;
        println!("{scheme:?}");
        for (k, snap) in traj.states.iter().enumerate() {
            let exact = cov.gaussian(traj.times[k], 1)?;
            let mut worst = 0.0f64;
            for st in snap {
                let s = exact.score(&st.x)?;
                worst = worst.max((st.score[0] - s[0]).abs()).max((st.score[1] - s[1]).abs());
            }
            println!("  t {:.1}  max score error {worst:.2e}", traj.times[k]);
        }
        let z = estimate_z(free_energy(traj.last(), &spec)?);
        println!("  Z estimate {z:.5} (exact {:.5})", 2.0 * std::f64::consts::PI);
    }
    Ok(())
}
