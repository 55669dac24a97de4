//! Propagate density, score and log-density Hessian along the exact OU
//! flow and watch the error shrink linearly with the step size.
//!
//!     cargo run --release --example score_flow

use fpflow::flow::{initial_scores, rollout, RolloutOptions, TimeGrid};
use fpflow::reference::{ou_covariance, OuTrueField};
use fpflow::Field;

fn main() -> fpflow::Result<()> {
    let truth = OuTrueField::new(2, 1.0, 0.5, 0.5)?;
    let rho0 = truth.density_at(0.0);
    let mut r = fpflow::rng::stream(0, "example", &[]);
    let xs: Vec<Vec<f64>> = (0..500).map(|_| rho0.sample(&mut r)).collect();
    let init = initial_scores(&rho0, &xs, true)?;

    for dt in [0.02, 0.01, 0.005] {
        let grid = TimeGrid::from_horizon(1.0, 1, dt)?;
        let opts = RolloutOptions {
            record_every: (0.25 / dt).round() as usize,
            ..Default::default()
        };
        let traj = rollout(&init, &[&truth as &dyn Field], &grid, opts)?;
        println!("dt = {dt}");
        for (k, snap) in traj.states.iter().enumerate() {
            let var = ou_covariance(traj.times[k], 1.0, 0.5);
            let (mut es, mut eh, mut el) = (0.0f64, 0.0f64, 0.0f64);
            for st in snap {
                let exact = truth.density_at(traj.times[k]);
                el = el.max((st.log_density - exact.log_density(&st.x)?).abs());
                for i in 0..2 {
                    es = es.max((st.score[i] + st.x[i] / var).abs());
                }
                let h = st.hessian.as_ref().expect("hessians requested");
                eh = eh.max((h[0] + 1.0 / var).abs()).max(h[1].abs());
            }
            println!(
                "  t {:.2}  max |l - log rho| {el:.2e}  max score error {es:.2e}  max Hessian error {eh:.2e}",
                traj.times[k]
            );
        }
    }
    Ok(())
}
