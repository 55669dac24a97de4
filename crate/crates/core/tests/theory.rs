use fpflow::theory::{gd_run, LinearParams, Moments, OneStepProblem};
use nalgebra::{DMatrix, DVector};

fn perturbed(p: &LinearParams, seed: u64, scale: f64) -> LinearParams {
    let mut r = fpflow::rng::stream(seed, "test-perturb", &[]);
    let d = p.theta0.len();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d * d];
    fpflow::rng::fill_normal(&mut r, &mut a);
    fpflow::rng::fill_normal(&mut r, &mut b);
    LinearParams {
        theta0: &p.theta0 + DVector::from_vec(a) * scale,
        theta1: &p.theta1 + DMatrix::from_vec(d, d, b) * scale,
    }
}

#[test]
fn hessian_bounds_hold_on_random_instances() {
    for k in 0..100u64 {
        let d = 1 + (k % 5) as usize;
        let prob = OneStepProblem::random(d, 1000 + k).unwrap();
        let h = prob.population_hessian();
        let lam = prob.lambda0();
        assert!(lam > 0.0 && lam <= 1.0, "{lam}");
        assert!(h.min_eigenvalue >= 2.0 * lam * (1.0 - 1e-10), "instance {k}");
        let upper = 4.0 * (1.0 + prob.mu0.norm_squared()) + 2.0 * prob.sigma0_norm();
        assert!(h.norm <= upper, "instance {k}: {} > {upper}", h.norm);
    }
}

#[test]
fn empirical_loss_is_consistent_at_root_n() {
    let prob = OneStepProblem::random(3, 7).unwrap();
    let theta = perturbed(&prob.optimal_params(), 1, 0.5);
    let exact = prob.population_loss(&theta);
    let sizes = [100usize, 1000, 10000];
    let reps = 30;
    let rms: Vec<f64> = sizes
        .iter()
        .map(|&n| {
            let sq: f64 = (0..reps)
                .map(|rep| {
                    let xs = prob.samples(n, 100 * n as u64 + rep).unwrap();
                    (prob.empirical_loss(&theta, &xs).unwrap() - exact).powi(2)
                })
                .sum();
            (sq / reps as f64).sqrt()
        })
        .collect();
    let slope = (rms[2].ln() - rms[0].ln()) / (10000f64.ln() - 100f64.ln());
    assert!((-0.7..-0.3).contains(&slope), "slope {slope}, rms {rms:?}");
}

#[test]
fn every_step_contracts_at_the_empirical_rate() {
    for seed in 0..10u64 {
        let d = 1 + (seed % 4) as usize;
        let prob = OneStepProblem::random(d, seed).unwrap();
        let xs = prob.samples(1000, seed).unwrap();
        let lam_hat = prob.empirical_hessian(&Moments::of(&xs).unwrap()).min_eigenvalue / 2.0;
        let eta = prob.max_step_size();
        let run = gd_run(&prob, &xs, LinearParams::zeros(d), eta, 300).unwrap();
        let bound = 1.0 - 2.0 * eta * lam_hat;
        for (k, w) in run.losses.windows(2).enumerate() {
            if w[0] > 1e-26 {
                assert!(w[1] / w[0] <= bound + 1e-12, "seed {seed} step {k}");
            }
        }
        assert!(run.distances.windows(2).all(|w| w[1] <= w[0] + 1e-14));
    }
}

#[test]
fn fitted_rate_beats_the_bound() {
    for (d, seed) in [(1usize, 2u64), (3, 3), (5, 4)] {
        let prob = OneStepProblem::random(d, seed).unwrap();
        let xs = prob.samples(1000, seed).unwrap();
        let eta = prob.max_step_size();
        let run = gd_run(&prob, &xs, LinearParams::zeros(d), eta, 3000).unwrap();
        let fitted = run.fitted_rate(1e-24).unwrap();
        let bound = (1.0 - 2.0 * eta * prob.lambda0()).ln();
        assert!(fitted <= 0.9 * bound, "d = {d}: {fitted} vs {bound}");
        assert!(run.distances.last().unwrap() < &1e-8);
    }
}

#[test]
fn quadratic_identity_holds_for_perturbations() {
    let prob = OneStepProblem::random(4, 11).unwrap();
    let opt = prob.optimal_params();
    let h = prob.population_hessian().matrix;
    for seed in 0..5 {
        let p = perturbed(&opt, seed, 1.0);
        // every output row shares the block: sum_i w_i^T (H/2) w_i, w_i = (da_i, dB_i.)
        let mut q = 0.0;
        for i in 0..4 {
            let mut w = DVector::zeros(5);
            w[0] = p.theta0[i] - opt.theta0[i];
            for j in 0..4 {
                w[1 + j] = p.theta1[(i, j)] - opt.theta1[(i, j)];
            }
            q += 0.5 * w.dot(&(&h * &w));
        }
        let l = prob.population_loss(&p);
        assert!((l - q).abs() <= 1e-12 * l.max(1.0), "{l} vs {q}");
    }
}
