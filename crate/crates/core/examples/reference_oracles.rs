//! The closed-form and numerical references: OU variance, the ULD
//! covariance ODE against Euler-Maruyama, and quadrature for partition
//! functions.
//!
//!     cargo run --release --example reference_oracles

use fpflow::cli::reference_partition;
use fpflow::reference::{euler_maruyama, ou_covariance, uld_covariance_rk4, GaussianRef};
use fpflow::{Potential, ProblemSpec};

fn main() -> fpflow::Result<()> {
    // OU variance against a simulated ensemble
    let ou = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5)?;
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 1.0)?;
    let x0: Vec<Vec<f64>> = (0..5000)
        .map(|i| rho0.sample(&mut fpflow::rng::stream(0, "x0", &[i])))
        .collect();
    let ens = euler_maruyama(&ou, &x0, 0.001, 1000, 1, 250)?;
    for (k, snap) in ens.states.iter().enumerate() {
        let var = snap.iter().map(|z| z[0] * z[0] + z[1] * z[1]).sum::<f64>() / (2.0 * snap.len() as f64);
        println!(
            "OU  t {:.2}  simulated variance {var:.4}  exact {:.4}",
            ens.times[k],
            ou_covariance(ens.times[k], 1.0, 0.5)
        );
    }

    // ULD covariance ODE against simulation
    let uld = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0)?;
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 2.0)?;
    let x0: Vec<Vec<f64>> = (0..5000)
        .map(|i| rho0.sample(&mut fpflow::rng::stream(0, "v0", &[i])))
        .collect();
    let ens = euler_maruyama(&uld, &x0, 0.001, 5000, 1, 1000)?;
    let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.001, 5000)?;
    for (k, snap) in ens.states.iter().enumerate() {
        let n = snap.len() as f64;
        let m = |f: &dyn Fn(&[f64]) -> f64| snap.iter().map(|z| f(z)).sum::<f64>() / n;
        let sim = [m(&|z| z[0] * z[0]), m(&|z| z[0] * z[1]), m(&|z| z[1] * z[1])];
        let ode = cov.at(ens.times[k]);
        println!(
            "ULD t {:.1}  simulated ({:.3}, {:.3}, {:.3})  ODE ({:.3}, {:.3}, {:.3})",
            ens.times[k], sim[0], sim[1], sim[2], ode[0], ode[1], ode[2]
        );
    }

    for (name, spec) in [
        ("quadratic, eps = 0.5", ou),
        ("double well, eps = 0.5", ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.0)?),
        ("underdamped quadratic", uld),
    ] {
        println!("Z[{name}] = {:.6}", reference_partition(&spec)?);
    }
    Ok(())
}
