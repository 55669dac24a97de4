//! Exact spatial jets of a composed field against central differences.
//!
//!     cargo run --release --example derivative_jets -- [seed]

use fpflow::field::{block_error, fd_jet};
use fpflow::{AtanVariant, Field, Init, JetOrder, Potential, ProblemSpec, VelocityField};

fn main() -> fpflow::Result<()> {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let problems = [
        ("langevin double well", ProblemSpec::langevin(2, Potential::DoubleWell, 0.5, 0.5)?),
        ("underdamped double well", ProblemSpec::uld(2, Potential::DoubleWell, 1.0, 1.0)?),
        ("lorenz", ProblemSpec::lorenz(0.1, 0.2)?),
        ("atan lorenz", ProblemSpec::atan_lorenz(0.1, 0.1, AtanVariant::Verbatim)?),
        ("van der pol", ProblemSpec::van_der_pol(2.0, 0.1)?),
    ];
    println!("{:<24} {:>10} {:>10} {:>10} {:>10}", "field", "jacobian", "grad div", "hessians", "hess div");
    for (name, spec) in &problems {
        let field = VelocityField::for_problem(spec, [16, 16], seed, Init::ScaledUniform)?;
        let mut z = vec![0.0; spec.state_dim()];
        fpflow::rng::fill_normal(&mut fpflow::rng::stream(seed, "example-point", &[]), &mut z);
        let exact = field.jet(0.4, &z, JetOrder::Second)?;
        let fd = fd_jet(&field, 0.4, &z, 1e-5, JetOrder::Second)?;
        println!(
            "{name:<24} {:>10.2e} {:>10.2e} {:>10.2e} {:>10.2e}",
            block_error(&exact.jacobian, &fd.jacobian),
            block_error(&exact.grad_div, &fd.grad_div),
            block_error(exact.comp_hessians.as_ref().unwrap(), fd.comp_hessians.as_ref().unwrap()),
            block_error(exact.hess_div.as_ref().unwrap(), fd.hess_div.as_ref().unwrap()),
        );
    }
    Ok(())
}
