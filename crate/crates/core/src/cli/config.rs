//! Experiment configuration: TOML with a few top-level keys and one section
//! named after the experiment.
//!
//! ```toml
//! experiment = "lorenz"
//! seed = 7
//! output_dir = "runs/lorenz"
//!
//! [lorenz]
//! N_x = 200
//! N_T = 5
//! T = 1.0
//! ```
//!
//! Every key left out takes the published default for that experiment.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use toml::{Table, Value};

use crate::error::{ConfigIssue, Error, Result};
use crate::flow::Scheme;
use crate::problems::{AtanVariant, Potential, ProblemSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    LangevinOu,
    LangevinDoublewell,
    UldGaussian,
    UldDoublewell,
    Lorenz,
    AtanLorenz,
    VanDerPol,
    TheoryOu,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::LangevinOu,
        Experiment::LangevinDoublewell,
        Experiment::UldGaussian,
        Experiment::UldDoublewell,
        Experiment::Lorenz,
        Experiment::AtanLorenz,
        Experiment::VanDerPol,
        Experiment::TheoryOu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::LangevinOu => "langevin_ou",
            Experiment::LangevinDoublewell => "langevin_doublewell",
            Experiment::UldGaussian => "uld_gaussian",
            Experiment::UldDoublewell => "uld_doublewell",
            Experiment::Lorenz => "lorenz",
            Experiment::AtanLorenz => "atan_lorenz",
            Experiment::VanDerPol => "van_der_pol",
            Experiment::TheoryOu => "theory_ou",
        }
    }

    pub fn is_chaotic(self) -> bool {
        matches!(
            self,
            Experiment::Lorenz | Experiment::AtanLorenz | Experiment::VanDerPol
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                Error::Config(vec![ConfigIssue {
                    key: "experiment".into(),
                    message: format!("unknown experiment {s:?}; expected one of {}", names.join(", ")),
                }])
            })
    }
}

/// Resolved parameters of one experiment. Config keys match the field
/// names except `T` (horizon), `N_t`, `N_T` (n_stages), `N_x`, `N_step0`
/// and `N_step`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentParams {
    pub dt: f64,
    pub horizon: f64,
    pub n_t: usize,
    pub n_stages: usize,
    pub n_x: usize,
    pub lr: f64,
    pub n_step0: usize,
    pub n_step: usize,
    pub hidden: [usize; 2],
    pub resample: bool,
    pub scheme: Scheme,
    pub prefix_pool: Option<usize>,
    /// spatial dimension `d` (Langevin and underdamped problems)
    pub dim: usize,
    pub eps: f64,
    pub c: f64,
    pub gamma: f64,
    pub beta: f64,
    /// state scaling of the Lorenz variants
    pub s: f64,
    pub mu: f64,
    pub atan_variant: AtanVariant,
    /// the initial density is `N(0, init_var I)`
    pub init_var: f64,
    pub eval_particles: usize,
    pub em_paths: usize,
    /// EM steps per flow step
    pub em_substeps: usize,
    pub snapshot_times: Vec<f64>,
    pub trajectory_every: usize,
    pub permutations: usize,
    /// inject the closed-form composed field instead of a network
    pub analytic_field: bool,
    pub theory_dim: usize,
    pub theory_samples: usize,
    pub theory_iterations: usize,
    /// gradient-descent step as a fraction of the largest admissible one
    pub theory_step_fraction: f64,
}

impl ExperimentParams {
    /// Published defaults for `exp`. `N_t` is derived from `T`, `N_T` and
    /// `dt`.
    pub fn defaults(exp: Experiment) -> Self {
        let mut p = ExperimentParams {
            dt: 0.01,
            horizon: 1.0,
            n_t: 100,
            n_stages: 1,
            n_x: 500,
            lr: 0.01,
            n_step0: 500,
            n_step: 500,
            hidden: [100, 100],
            resample: true,
            scheme: Scheme::Euler,
            prefix_pool: None,
            dim: 2,
            eps: 0.5,
            c: 0.5,
            gamma: 1.0,
            beta: 1.0,
            s: 0.2,
            mu: 2.0,
            atan_variant: AtanVariant::Verbatim,
            init_var: 1.0,
            eval_particles: 1000,
            em_paths: 1000,
            em_substeps: 1,
            snapshot_times: Vec::new(),
            trajectory_every: 10,
            permutations: 199,
            analytic_field: false,
            theory_dim: 3,
            theory_samples: 10_000,
            theory_iterations: 2000,
            theory_step_fraction: 1.0,
        };
        let multi = |p: &mut ExperimentParams, horizon: f64, stages: usize| {
            p.horizon = horizon;
            p.n_stages = stages;
            p.n_x = 1000;
            p.n_step0 = 500;
            p.n_step = 200;
        };
        match exp {
            Experiment::LangevinOu | Experiment::LangevinDoublewell | Experiment::TheoryOu => {}
            Experiment::UldGaussian => {
                multi(&mut p, 5.0, 5);
                p.dim = 1;
                p.init_var = 2.0;
                p.scheme = Scheme::Symplectic;
            }
            Experiment::UldDoublewell => {
                multi(&mut p, 5.0, 25);
                p.dim = 1;
            }
            Experiment::Lorenz => {
                multi(&mut p, 5.0, 25);
                p.eps = 0.1;
                p.s = 0.2;
            }
            Experiment::AtanLorenz => {
                multi(&mut p, 5.0, 25);
                p.eps = 0.1;
                p.s = 0.1;
            }
            Experiment::VanDerPol => {
                multi(&mut p, 2.0, 10);
                p.eps = 0.1;
                p.mu = 2.0;
            }
        }
        p.n_t = (p.horizon / (p.n_stages as f64 * p.dt)).round() as usize;
        p.snapshot_times = default_snapshots(p.horizon);
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub eval_only: bool,
    /// a checkpoint file, or a directory holding `stage_<m>.ckpt`
    pub checkpoint: Option<PathBuf>,
    pub params: ExperimentParams,
}

impl ExperimentConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        ExperimentConfig {
            experiment,
            seed: 0,
            output_dir: PathBuf::from(format!("runs/{}", experiment.name())),
            eval_only: false,
            checkpoint: None,
            params: ExperimentParams::defaults(experiment),
        }
    }

    /// Parse and validate a config document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(vec![ConfigIssue {
                key: "<document>".into(),
                message: e.message().to_string(),
            }])
        })?;
        let mut issues = Vec::new();
        let name = match table.get("experiment") {
            Some(Value::String(s)) => s.clone(),
            Some(_) => {
                return Err(issue("experiment", "must be a string"));
            }
            None => return Err(issue("experiment", "missing")),
        };
        let exp: Experiment = name.parse()?;
        let mut cfg = ExperimentConfig::defaults(exp);

        let mut keys = Keys {
            issues: &mut issues,
            prefix: String::new(),
        };
        for (k, v) in &table {
            match k.as_str() {
                // run metadata written into manifests
                "experiment" | "run" => {}
                "seed" => {
                    if let Some(s) = keys.nonneg_int(k, v) {
                        cfg.seed = s as u64;
                    }
                }
                "output_dir" => {
                    if let Some(s) = keys.string(k, v) {
                        cfg.output_dir = PathBuf::from(s);
                    }
                }
                "eval_only" => {
                    if let Some(b) = keys.boolean(k, v) {
                        cfg.eval_only = b;
                    }
                }
                "checkpoint" => {
                    if let Some(s) = keys.string(k, v) {
                        cfg.checkpoint = Some(PathBuf::from(s));
                    }
                }
                s if s == exp.name() => {}
                s if Experiment::ALL.iter().any(|e| e.name() == s) => {
                    // sections of other experiments are ignored
                }
                _ => keys.push(k, "unknown key"),
            }
        }

        let section = match table.get(exp.name()) {
            Some(Value::Table(t)) => Some(t.clone()),
            Some(_) => {
                issues.push(ConfigIssue {
                    key: exp.name().into(),
                    message: "must be a table".into(),
                });
                None
            }
            None => None,
        };
        let mut explicit_nt = None;
        if let Some(sec) = &section {
            let mut keys = Keys {
                issues: &mut issues,
                prefix: format!("{}.", exp.name()),
            };
            apply_section(&mut cfg, sec, &mut keys, &mut explicit_nt);
            if !sec.contains_key("snapshot_times") {
                cfg.params.snapshot_times = default_snapshots(cfg.params.horizon);
            }
        }
        validate(&mut cfg, explicit_nt, &mut issues);
        if issues.is_empty() {
            Ok(cfg)
        } else {
            Err(Error::Config(issues))
        }
    }

    /// Render the resolved configuration, suitable for re-running.
    pub fn to_toml(&self) -> String {
        let p = &self.params;
        let mut sec = Table::new();
        let int = |x: usize| Value::Integer(x as i64);
        sec.insert("dt".into(), Value::Float(p.dt));
        sec.insert("T".into(), Value::Float(p.horizon));
        sec.insert("N_t".into(), int(p.n_t));
        sec.insert("N_T".into(), int(p.n_stages));
        sec.insert("N_x".into(), int(p.n_x));
        sec.insert("lr".into(), Value::Float(p.lr));
        sec.insert("N_step0".into(), int(p.n_step0));
        sec.insert("N_step".into(), int(p.n_step));
        sec.insert("hidden".into(), Value::Array(p.hidden.iter().map(|h| int(*h)).collect()));
        sec.insert("resample".into(), Value::Boolean(p.resample));
        sec.insert(
            "scheme".into(),
            Value::String(match p.scheme {
                Scheme::Euler => "euler".into(),
                Scheme::Symplectic => "symplectic".into(),
            }),
        );
        if let Some(k) = p.prefix_pool {
            sec.insert("prefix_pool".into(), int(k));
        }
        sec.insert("dim".into(), int(p.dim));
        sec.insert("eps".into(), Value::Float(p.eps));
        sec.insert("c".into(), Value::Float(p.c));
        sec.insert("gamma".into(), Value::Float(p.gamma));
        sec.insert("beta".into(), Value::Float(p.beta));
        sec.insert("s".into(), Value::Float(p.s));
        sec.insert("mu".into(), Value::Float(p.mu));
        sec.insert(
            "atan_variant".into(),
            Value::String(match p.atan_variant {
                AtanVariant::Verbatim => "verbatim".into(),
                AtanVariant::Consistent => "consistent".into(),
            }),
        );
        sec.insert("init_var".into(), Value::Float(p.init_var));
        sec.insert("eval_particles".into(), int(p.eval_particles));
        sec.insert("em_paths".into(), int(p.em_paths));
        sec.insert("em_substeps".into(), int(p.em_substeps));
        sec.insert(
            "snapshot_times".into(),
            Value::Array(p.snapshot_times.iter().map(|t| Value::Float(*t)).collect()),
        );
        sec.insert("trajectory_every".into(), int(p.trajectory_every));
        sec.insert("permutations".into(), int(p.permutations));
        sec.insert("analytic_field".into(), Value::Boolean(p.analytic_field));
        sec.insert("theory_dim".into(), int(p.theory_dim));
        sec.insert("theory_samples".into(), int(p.theory_samples));
        sec.insert("theory_iterations".into(), int(p.theory_iterations));
        sec.insert("theory_step_fraction".into(), Value::Float(p.theory_step_fraction));

        let mut top = Table::new();
        top.insert("experiment".into(), Value::String(self.experiment.name().into()));
        top.insert("seed".into(), Value::Integer(self.seed as i64));
        top.insert(
            "output_dir".into(),
            Value::String(self.output_dir.display().to_string()),
        );
        top.insert("eval_only".into(), Value::Boolean(self.eval_only));
        if let Some(c) = &self.checkpoint {
            top.insert("checkpoint".into(), Value::String(c.display().to_string()));
        }
        top.insert(self.experiment.name().into(), Value::Table(sec));
        toml::to_string(&top).expect("plain tables always serialize")
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let p = &self.params;
        match self.experiment {
            Experiment::LangevinOu | Experiment::TheoryOu => {
                ProblemSpec::langevin(p.dim, Potential::Quadratic, p.eps, p.c)
            }
            Experiment::LangevinDoublewell => {
                ProblemSpec::langevin(p.dim, Potential::DoubleWell, p.eps, p.c)
            }
            Experiment::UldGaussian => ProblemSpec::uld(p.dim, Potential::Quadratic, p.gamma, p.beta),
            Experiment::UldDoublewell => {
                ProblemSpec::uld(p.dim, Potential::DoubleWell, p.gamma, p.beta)
            }
            Experiment::Lorenz => ProblemSpec::lorenz(p.eps, p.s),
            Experiment::AtanLorenz => ProblemSpec::atan_lorenz(p.eps, p.s, p.atan_variant),
            Experiment::VanDerPol => ProblemSpec::van_der_pol(p.mu, p.eps),
        }
    }
}

fn issue(key: &str, message: &str) -> Error {
    Error::Config(vec![ConfigIssue {
        key: key.into(),
        message: message.into(),
    }])
}

struct Keys<'a> {
    issues: &'a mut Vec<ConfigIssue>,
    prefix: String,
}

impl Keys<'_> {
    fn push(&mut self, key: &str, message: impl Into<String>) {
        self.issues.push(ConfigIssue {
            key: format!("{}{key}", self.prefix),
            message: message.into(),
        });
    }

    fn float(&mut self, key: &str, v: &Value) -> Option<f64> {
        match v {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            _ => {
                self.push(key, "expected a number");
                None
            }
        }
    }

    fn int(&mut self, key: &str, v: &Value) -> Option<i64> {
        match v {
            Value::Integer(i) => Some(*i),
            _ => {
                self.push(key, "expected an integer");
                None
            }
        }
    }

    fn nonneg_int(&mut self, key: &str, v: &Value) -> Option<usize> {
        let i = self.int(key, v)?;
        if i < 0 {
            self.push(key, format!("must be non-negative, got {i}"));
            None
        } else {
            Some(i as usize)
        }
    }

    fn positive_int(&mut self, key: &str, v: &Value) -> Option<usize> {
        let i = self.int(key, v)?;
        if i <= 0 {
            self.push(key, format!("must be positive, got {i}"));
            None
        } else {
            Some(i as usize)
        }
    }

    fn boolean(&mut self, key: &str, v: &Value) -> Option<bool> {
        match v {
            Value::Boolean(b) => Some(*b),
            _ => {
                self.push(key, "expected true or false");
                None
            }
        }
    }

    fn string(&mut self, key: &str, v: &Value) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.push(key, "expected a string");
                None
            }
        }
    }

    fn floats(&mut self, key: &str, v: &Value) -> Option<Vec<f64>> {
        match v {
            Value::Array(items) => items
                .iter()
                .map(|x| match x {
                    Value::Float(f) => Some(*f),
                    Value::Integer(i) => Some(*i as f64),
                    _ => None,
                })
                .collect::<Option<Vec<f64>>>()
                .or_else(|| {
                    self.push(key, "expected an array of numbers");
                    None
                }),
            _ => {
                self.push(key, "expected an array of numbers");
                None
            }
        }
    }
}

fn default_snapshots(horizon: f64) -> Vec<f64> {
    (0..=4).map(|k| horizon * k as f64 / 4.0).collect()
}

fn apply_section(
    cfg: &mut ExperimentConfig,
    sec: &Table,
    keys: &mut Keys<'_>,
    explicit_nt: &mut Option<usize>,
) {
    let p = &mut cfg.params;
    for (k, v) in sec {
        match k.as_str() {
            "dt" => p.dt = keys.float(k, v).unwrap_or(p.dt),
            "T" => p.horizon = keys.float(k, v).unwrap_or(p.horizon),
            "N_t" => *explicit_nt = keys.nonneg_int(k, v).or(*explicit_nt),
            "N_T" => p.n_stages = keys.positive_int(k, v).unwrap_or(p.n_stages),
            "N_x" => p.n_x = keys.positive_int(k, v).unwrap_or(p.n_x),
            "lr" => p.lr = keys.float(k, v).unwrap_or(p.lr),
            "N_step0" => p.n_step0 = keys.nonneg_int(k, v).unwrap_or(p.n_step0),
            "N_step" => p.n_step = keys.nonneg_int(k, v).unwrap_or(p.n_step),
            "hidden" => match keys.floats(k, v).as_deref() {
                Some([a, b]) if *a >= 1.0 && *b >= 1.0 && a.fract() == 0.0 && b.fract() == 0.0 => {
                    p.hidden = [*a as usize, *b as usize]
                }
                Some(_) => keys.push(k, "expected two positive integer widths"),
                None => {}
            },
            "resample" => p.resample = keys.boolean(k, v).unwrap_or(p.resample),
            "scheme" => match keys.string(k, v).as_deref() {
                Some("euler") => p.scheme = Scheme::Euler,
                Some("symplectic") => p.scheme = Scheme::Symplectic,
                Some(other) => keys.push(k, format!("unknown scheme {other:?} (euler, symplectic)")),
                None => {}
            },
            "prefix_pool" => p.prefix_pool = keys.positive_int(k, v).or(p.prefix_pool),
            "dim" => p.dim = keys.positive_int(k, v).unwrap_or(p.dim),
            "eps" => p.eps = keys.float(k, v).unwrap_or(p.eps),
            "c" => p.c = keys.float(k, v).unwrap_or(p.c),
            "gamma" => p.gamma = keys.float(k, v).unwrap_or(p.gamma),
            "beta" => p.beta = keys.float(k, v).unwrap_or(p.beta),
            "s" => p.s = keys.float(k, v).unwrap_or(p.s),
            "mu" => p.mu = keys.float(k, v).unwrap_or(p.mu),
            "atan_variant" => match keys.string(k, v).as_deref() {
                Some("verbatim") => p.atan_variant = AtanVariant::Verbatim,
                Some("consistent") => p.atan_variant = AtanVariant::Consistent,
                Some(other) => {
                    keys.push(k, format!("unknown variant {other:?} (verbatim, consistent)"))
                }
                None => {}
            },
            "init_var" => p.init_var = keys.float(k, v).unwrap_or(p.init_var),
            "eval_particles" => p.eval_particles = keys.positive_int(k, v).unwrap_or(p.eval_particles),
            "em_paths" => p.em_paths = keys.positive_int(k, v).unwrap_or(p.em_paths),
            "em_substeps" => p.em_substeps = keys.positive_int(k, v).unwrap_or(p.em_substeps),
            "snapshot_times" => p.snapshot_times = keys.floats(k, v).unwrap_or(p.snapshot_times.clone()),
            "trajectory_every" => {
                p.trajectory_every = keys.positive_int(k, v).unwrap_or(p.trajectory_every)
            }
            "permutations" => p.permutations = keys.positive_int(k, v).unwrap_or(p.permutations),
            "analytic_field" => p.analytic_field = keys.boolean(k, v).unwrap_or(p.analytic_field),
            "theory_dim" => p.theory_dim = keys.positive_int(k, v).unwrap_or(p.theory_dim),
            "theory_samples" => p.theory_samples = keys.positive_int(k, v).unwrap_or(p.theory_samples),
            "theory_iterations" => {
                p.theory_iterations = keys.nonneg_int(k, v).unwrap_or(p.theory_iterations)
            }
            "theory_step_fraction" => {
                p.theory_step_fraction = keys.float(k, v).unwrap_or(p.theory_step_fraction)
            }
            _ => keys.push(k, "unknown key"),
        }
    }
}

/// Fill derived values and check cross-key consistency.
fn validate(cfg: &mut ExperimentConfig, explicit_nt: Option<usize>, issues: &mut Vec<ConfigIssue>) {
    let name = cfg.experiment.name();
    let key = |k: &str| format!("{name}.{k}");
    let p = &mut cfg.params;
    let mut bad = |k: &str, m: String| {
        issues.push(ConfigIssue {
            key: key(k),
            message: m,
        })
    };
    if !(p.dt > 0.0) || !p.dt.is_finite() {
        bad("dt", format!("must be positive, got {}", p.dt));
    }
    if !(p.horizon > 0.0) || !p.horizon.is_finite() {
        bad("T", format!("must be positive, got {}", p.horizon));
    }
    if !(p.lr > 0.0) {
        bad("lr", format!("must be positive, got {}", p.lr));
    }
    if p.eps < 0.0 {
        bad("eps", format!("must be non-negative, got {}", p.eps));
    }
    if !(p.gamma > 0.0) {
        bad("gamma", format!("must be positive, got {}", p.gamma));
    }
    if !(p.beta > 0.0) {
        bad("beta", format!("must be positive, got {}", p.beta));
    }
    if !(p.init_var > 0.0) {
        bad("init_var", format!("must be positive, got {}", p.init_var));
    }
    if !(p.theory_step_fraction > 0.0) {
        bad("theory_step_fraction", "must be positive".into());
    }
    if p.snapshot_times.iter().any(|t| *t < 0.0 || *t > p.horizon + 1e-12) {
        bad("snapshot_times", format!("times must lie in [0, {}]", p.horizon));
    }
    if p.dt > 0.0 && p.horizon > 0.0 {
        let implied = p.horizon / (p.n_stages as f64 * p.dt);
        let whole = implied.round();
        let consistent = |n: f64| (n - implied).abs() <= 1e-9 * implied.max(1.0);
        match explicit_nt {
            Some(nt) if !consistent(nt as f64) => {
                let message = format!(
                    "dt * N_t * N_T = {} * {nt} * {} = {} differs from T = {}",
                    p.dt,
                    p.n_stages,
                    p.dt * (nt * p.n_stages) as f64,
                    p.horizon
                );
                for k in ["dt", "N_t", "N_T", "T"] {
                    bad(k, message.clone());
                }
            }
            None if !consistent(whole) || whole < 1.0 => {
                let message = format!(
                    "T / (N_T dt) = {implied} is not a positive whole number of steps"
                );
                for k in ["dt", "N_T", "T"] {
                    bad(k, message.clone());
                }
            }
            _ => p.n_t = whole as usize,
        }
    }
    if matches!(cfg.experiment, Experiment::LangevinOu | Experiment::LangevinDoublewell)
        && p.c != 0.0
        && p.dim % 2 == 1
    {
        bad("c", "an antisymmetric part needs an even dimension".into());
    }
    if p.scheme == Scheme::Symplectic
        && !matches!(
            cfg.experiment,
            Experiment::UldGaussian | Experiment::UldDoublewell | Experiment::VanDerPol
        )
    {
        bad("scheme", "the symplectic scheme needs a position-velocity problem".into());
    }
    if p.analytic_field
        && !matches!(cfg.experiment, Experiment::LangevinOu | Experiment::UldGaussian)
    {
        bad("analytic_field", "a closed-form field exists only for langevin_ou and uld_gaussian".into());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_the_table() {
        let c = ExperimentConfig::from_toml("experiment = \"lorenz\"").unwrap();
        let p = &c.params;
        assert_eq!((p.horizon, p.n_stages, p.n_x, p.eps, p.s), (5.0, 25, 1000, 0.1, 0.2));
        assert_eq!((p.n_t, p.n_step0, p.n_step), (20, 500, 200));
        let ou = ExperimentConfig::from_toml("experiment = \"langevin_ou\"").unwrap();
        assert_eq!((ou.params.n_t, ou.params.n_x, ou.params.n_step), (100, 500, 500));
        let vdp = ExperimentConfig::defaults(Experiment::VanDerPol);
        assert_eq!((vdp.params.horizon, vdp.params.n_stages, vdp.params.n_t), (2.0, 10, 20));
        let uld = ExperimentConfig::defaults(Experiment::UldGaussian);
        assert_eq!(uld.params.scheme, Scheme::Symplectic);
        assert_eq!(uld.params.init_var, 2.0);
    }

    #[test]
    fn inconsistent_grid_names_all_four_keys() {
        let err = ExperimentConfig::from_toml(
            "experiment = \"langevin_ou\"\n[langevin_ou]\nN_t = 50\nT = 1.0\n",
        )
        .unwrap_err();
        let Error::Config(issues) = err else { panic!() };
        let keys: Vec<&str> = issues.iter().map(|i| i.key.as_str()).collect();
        for k in ["dt", "N_t", "N_T", "T"] {
            assert!(keys.contains(&format!("langevin_ou.{k}").as_str()), "{keys:?}");
        }
    }

    #[test]
    fn rejects_bad_values_and_keys() {
        let err = ExperimentConfig::from_toml("experiment = \"lorenz\"\n[lorenz]\nN_x = -5\n").unwrap_err();
        let Error::Config(issues) = err else { panic!() };
        assert_eq!(issues[0].key, "lorenz.N_x");
        assert!(ExperimentConfig::from_toml("experiment = \"nope\"").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"lorenz\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("experiment = \"lorenz\"\n[lorenz]\nscheme = \"rk4\"").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = ExperimentConfig::defaults(Experiment::AtanLorenz);
        c.seed = 11;
        c.params.n_x = 64;
        c.params.prefix_pool = Some(4);
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }
}
