use fpflow::analysis::{
    energy_distance, free_energy, gaussian_kl, permutation_threshold, stationary_gaussian,
    EnergyTrace,
};
use fpflow::flow::{initial_scores, rollout, RolloutOptions, Scheme, ScoreFlowState, TimeGrid};
use fpflow::reference::{uld_covariance_rk4, GaussianRef, OuTrueField, UldTrueField};
use fpflow::{Field, Potential, ProblemSpec};

fn draw(g: &GaussianRef, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = fpflow::rng::stream(seed, "test-draw", &[]);
    (0..n).map(|_| g.sample(&mut r)).collect()
}

fn ou_trace(n: usize, horizon: f64) -> EnergyTrace {
    let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
    let truth = OuTrueField::new(2, 1.0, 0.5, 0.5).unwrap();
    let rho0 = truth.density_at(0.0);
    let init = initial_scores(&rho0, &draw(&rho0, n, 1), false).unwrap();
    let grid = TimeGrid::from_horizon(horizon, 1, 0.01).unwrap();
    let traj = rollout(&init, &[&truth as &dyn Field], &grid, RolloutOptions::default()).unwrap();
    EnergyTrace::from_trajectory(&traj, &spec)
        .unwrap()
        .with_reference(&spec, |t| Ok(truth.density_at(t)))
        .unwrap()
}

#[test]
fn independent_ensembles_fall_under_the_permutation_threshold() {
    let g = GaussianRef::isotropic(vec![0.0, 0.0], 1.0).unwrap();
    let a = draw(&g, 1000, 1);
    let b = draw(&g, 1000, 2);
    let thr = permutation_threshold(&a, &b, 199, 0.99, 5).unwrap();
    let same = energy_distance(&a, &b).unwrap();
    assert!(same <= thr, "{same} > {thr}");
    let shifted = GaussianRef::isotropic(vec![3.0, 0.0], 1.0).unwrap();
    let far = energy_distance(&a, &draw(&shifted, 1000, 3)).unwrap();
    assert!(far > thr, "{far} <= {thr}");
    assert_eq!(energy_distance(&a, &a).unwrap(), 0.0);
}

#[test]
fn ou_free_energy_decays_at_the_dissipation_rate() {
    // under the exact linear flow both sides depend on the sample only
    // through its second moment; rescaling the draws to the exact moment
    // leaves the O(dt) Euler lag; it grows relative to the vanishing
    // dissipation, so the comparison stops at t = 1
    let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.5).unwrap();
    let truth = OuTrueField::new(2, 1.0, 0.5, 0.5).unwrap();
    let rho0 = truth.density_at(0.0);
    let mut xs = draw(&rho0, 2000, 1);
    let m2 = xs.iter().flatten().map(|v| v * v).sum::<f64>() / (2.0 * xs.len() as f64);
    xs.iter_mut().flatten().for_each(|v| *v /= m2.sqrt());
    let init = initial_scores(&rho0, &xs, false).unwrap();
    let grid = TimeGrid::from_horizon(1.5, 1, 0.0025).unwrap();
    let opts = RolloutOptions {
        scheme: Scheme::Euler,
        record_every: 4,
    };
    let traj = rollout(&init, &[&truth as &dyn Field], &grid, opts).unwrap();
    let trace = EnergyTrace::from_trajectory(&traj, &spec).unwrap();
    for (k, d) in trace.numerical_derivative() {
        let t = trace.times[k];
        if t <= 0.2 || t > 1.0 {
            continue;
        }
        let diss = trace.dissipation[k];
        assert!(
            (d - diss).abs() <= 0.05 * diss.abs(),
            "t = {t}: dD/dt {d} vs dissipation {diss}"
        );
    }
}

#[test]
fn exact_ou_trace_tracks_the_closed_form() {
    let trace = ou_trace(5000, 1.0);
    let (rf, rd) = trace.reference.clone().unwrap();
    for k in 0..trace.times.len() {
        assert!((trace.free_energy[k] - rf[k]).abs() < 0.05, "free energy at {k}");
        assert!((trace.dissipation[k] - rd[k]).abs() <= 0.05 * rd[k].abs() + 1e-3);
    }
    assert!(trace.max_increase() <= 1e-2);
    assert!(trace.dissipation.iter().all(|d| *d <= 0.0));
}

#[test]
fn free_energy_minus_log_z_is_the_relative_entropy() {
    let spec = ProblemSpec::langevin(2, Potential::Quadratic, 0.5, 0.0).unwrap();
    let pi = stationary_gaussian(&spec).unwrap();
    let log_z = (2.0 * std::f64::consts::PI * 0.5).ln();
    for (seed, rho) in [
        GaussianRef::isotropic(vec![0.0, 0.0], 1.0).unwrap(),
        GaussianRef::new(vec![0.5, -0.3], vec![0.8, 0.2, 0.2, 0.4]).unwrap(),
    ]
    .into_iter()
    .enumerate()
    {
        let xs = draw(&rho, 10_000, 10 + seed as u64);
        let states: Vec<ScoreFlowState> = xs
            .iter()
            .map(|x| ScoreFlowState::from_gaussian(&rho, x.clone(), 0.0, false).unwrap())
            .collect();
        let d = free_energy(&states, &spec).unwrap();
        let terms: Vec<f64> = states
            .iter()
            .map(|s| s.log_density + spec.stationary_potential(&s.x).unwrap())
            .collect();
        let n = terms.len() as f64;
        let var = terms.iter().map(|v| (v - d).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let kl = gaussian_kl(&rho, &pi).unwrap();
        assert!((d + log_z - kl).abs() <= 3.0 * se, "{} vs {kl} (se {se})", d + log_z);
    }
}

#[test]
fn exact_uld_trace_is_non_increasing() {
    let spec = ProblemSpec::uld(1, Potential::Quadratic, 1.0, 1.0).unwrap();
    let cov = uld_covariance_rk4([2.0, 0.0, 2.0], 1.0, 1.0, 0.005, 1000).unwrap();
    let truth = UldTrueField { d: 1, cov };
    let rho0 = GaussianRef::isotropic(vec![0.0, 0.0], 2.0).unwrap();
    let init = initial_scores(&rho0, &draw(&rho0, 3000, 4), false).unwrap();
    let grid = TimeGrid::from_horizon(5.0, 1, 0.01).unwrap();
    let opts = RolloutOptions {
        scheme: Scheme::Symplectic,
        record_every: 10,
    };
    let traj = rollout(&init, &[&truth as &dyn Field], &grid, opts).unwrap();
    let trace = EnergyTrace::from_trajectory(&traj, &spec).unwrap();
    assert!(trace.max_increase() <= 1e-2, "{}", trace.max_increase());
    // terminal free energy is -log Z with Z = 2 pi
    let z = fpflow::analysis::estimate_z(*trace.free_energy.last().unwrap());
    assert!((z / (2.0 * std::f64::consts::PI) - 1.0).abs() < 0.03, "{z}");
}


