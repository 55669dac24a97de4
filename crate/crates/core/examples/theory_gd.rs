//! Gradient descent on the one-step linear flow-matching loss for the OU
//! process: contraction rate against the bound `log(1 - 2 eta lambda0)`.
//!
//!     cargo run --release --example theory_gd -- [dim] [samples] [seed]

use fpflow::theory::{gd_run, LinearParams, OneStepProblem, TheorySummary};

fn main() -> fpflow::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let num = |i: usize, d: usize| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let (d, n, seed) = (num(1, 3), num(2, 10_000), num(3, 0) as u64);

    let problem = OneStepProblem::random(d, seed)?;
    let samples = problem.samples(n, seed)?;
    let eta = problem.max_step_size();
    let run = gd_run(&problem, &samples, LinearParams::zeros(d), eta, 2000)?;
    for k in (0..run.losses.len()).step_by(200) {
        println!("k {k:5}  loss {:.3e}  |theta - theta*| {:.3e}", run.losses[k], run.distances[k]);
    }
    TheorySummary::from_run(&problem, &run, eta).write(std::io::stdout())?;
    let pop = problem.population_hessian();
    println!(
        "population Hessian: min eigenvalue {:.4} >= 2 lambda0 = {:.4}, norm {:.4}",
        pop.min_eigenvalue,
        2.0 * problem.lambda0(),
        pop.norm
    );
    Ok(())
}
