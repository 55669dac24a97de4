use std::fs;
use std::path::Path;
use std::process::Command;

use fpflow::cli::{run, Experiment, ExperimentConfig};
use fpflow::Error;

fn config(text: &str, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg
}

fn issue_keys(text: &str) -> Vec<String> {
    match ExperimentConfig::from_toml(text) {
        Err(Error::Config(issues)) => issues.into_iter().map(|i| i.key).collect(),
        other => panic!("expected config error, got {other:?}"),
    }
}

const TINY: &str = r#"
experiment = "langevin_doublewell"
seed = 11

[langevin_doublewell]
T = 0.2
N_T = 1
N_x = 8
N_step = 3
hidden = [4, 4]
eval_particles = 20
em_paths = 20
trajectory_every = 5
"#;

#[test]
fn lorenz_defaults_follow_the_table() {
    let cfg = ExperimentConfig::from_toml("experiment = \"lorenz\"").unwrap();
    let p = &cfg.params;
    assert_eq!((p.horizon, p.n_stages, p.n_x), (5.0, 25, 1000));
    assert_eq!((p.eps, p.s, p.dt, p.lr), (0.1, 0.2, 0.01, 0.01));
    assert_eq!(p.n_t, 20);
    assert_eq!(cfg.experiment, Experiment::Lorenz);
}

#[test]
fn inconsistent_grid_names_every_key() {
    let keys = issue_keys("experiment = \"lorenz\"\n[lorenz]\ndt = 0.01\nN_t = 7\nN_T = 25\nT = 5.0\n");
    for k in ["lorenz.dt", "lorenz.N_t", "lorenz.N_T", "lorenz.T"] {
        assert!(keys.iter().any(|x| x == k), "{k} missing from {keys:?}");
    }
    let keys = issue_keys("experiment = \"langevin_ou\"\n[langevin_ou]\nN_x = -5\n");
    assert_eq!(keys, vec!["langevin_ou.N_x"]);
    let keys = issue_keys("experiment = \"nope\"");
    assert_eq!(keys, vec!["experiment"]);
}

#[test]
fn theory_run_reaches_the_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("experiment = \"theory_ou\"", &dir.path().join("out"));
    let rep = run(&cfg).unwrap();
    assert!(rep.get("lambda0").unwrap() > 0.0);
    assert!(rep.get("fitted_rate").unwrap() <= 0.9 * rep.get("bound_rate").unwrap());
    assert!(rep.get("final_distance").unwrap() < 1e-8);
    for f in ["theory.csv", "theory_summary.txt", "manifest.toml"] {
        assert!(dir.path().join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn analytic_ou_eval_recovers_pi() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "langevin_ou"
eval_only = true
[langevin_ou]
analytic_field = true
N_x = 8
eval_particles = 2000
"#;
    let rep = run(&config(text, dir.path())).unwrap();
    assert!(rep.get("err_f").unwrap() < 1e-12);
    let z = rep.get("z_estimate").unwrap();
    assert!((z / std::f64::consts::PI - 1.0).abs() < 0.03, "{z}");
    for f in ["trajectory.csv", "energy.csv", "errors.csv", "z_estimate.txt"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn unknown_experiment_exits_with_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("bad.toml");
    fs::write(&cfg_path, "experiment = \"heat_equation\"\n").unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_fpflow"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--output")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(status.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&status.stderr).contains("experiment"));
    assert!(!out.exists());
}

#[test]
fn eval_only_without_a_field_is_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(TINY, &dir.path().join("out"));
    cfg.eval_only = true;
    assert!(matches!(run(&cfg), Err(Error::Input(_))));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&config(TINY, &a)).unwrap();
    run(&config(TINY, &b)).unwrap();
    for f in ["loss.csv", "trajectory.csv", "energy.csv", "em_ensemble.csv", "checkpoints/stage_1.ckpt"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let mut other = config(TINY, &dir.path().join("c"));
    other.seed = 12;
    run(&other).unwrap();
    assert_ne!(
        fs::read(a.join("loss.csv")).unwrap(),
        fs::read(dir.path().join("c/loss.csv")).unwrap()
    );
}

#[test]
fn manifest_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    run(&config(TINY, &a)).unwrap();
    let manifest = fs::read_to_string(a.join("manifest.toml")).unwrap();
    let b = dir.path().join("b");
    run(&config(&manifest, &b)).unwrap();
    for f in ["loss.csv", "trajectory.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn multi_stage_checkpoints_can_be_evaluated_alone() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "uld_gaussian"
[uld_gaussian]
T = 0.3
N_T = 3
N_x = 8
N_step0 = 3
N_step = 2
hidden = [4, 4]
eval_particles = 30
"#;
    let a = dir.path().join("a");
    let rep = run(&config(text, &a)).unwrap();
    assert!(rep.get("stage_3_loss").is_some());
    for m in 1..=3 {
        assert!(a.join(format!("checkpoints/stage_{m}.ckpt")).exists());
    }
    let b = dir.path().join("b");
    let mut eval = config(text, &b);
    eval.eval_only = true;
    eval.checkpoint = Some(a.join("checkpoints"));
    run(&eval).unwrap();
    assert!(!b.join("loss.csv").exists());
    for f in ["trajectory.csv", "errors.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn chaotic_runs_report_energy_distances() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"
experiment = "van_der_pol"
[van_der_pol]
T = 0.2
N_T = 1
N_x = 8
N_step = 2
hidden = [4, 4]
eval_particles = 40
em_paths = 40
permutations = 9
"#;
    let rep = run(&config(text, dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("energy_distance.csv")).unwrap();
    assert!(csv.starts_with("t,distance,threshold,within"));
    assert_eq!(csv.lines().count(), 1 + 5);
    assert!(rep.get("energy_distance_within").is_some());
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let text = fs::read_to_string(&path).unwrap();
            let cfg = ExperimentConfig::from_toml(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            assert_eq!(
                path.file_stem().unwrap().to_str().unwrap(),
                cfg.experiment.name()
            );
            seen += 1;
        }
    }
    assert_eq!(seen, Experiment::ALL.len());
}
