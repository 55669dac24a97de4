//! Fokker–Planck simulation by flow matching with score-based normalizing
//! flows.
//!
//! A deterministic velocity field `f(t, x) = b(x) + N_theta(t, x)` is
//! trained so that its continuity equation reproduces the density evolution
//! of `dx = b(x) dt + sqrt(2 eps) dW`. Particles carry their density,
//! log-density, score and (optionally) log-density Hessian along the flow,
//! which makes the training loss and every diagnostic a plain average over
//! particles.
//!
//! ```text
//! problems   drifts, potentials, stationary densities
//! field      tanh network + baseline, exact spatial jets, checkpoints
//! flow       score-flow integrators and rollouts
//! train      flow-matching loss, exact gradients, Adam, stage drivers
//! reference  Gaussian oracles, ULD covariance ODE, Euler–Maruyama, quadrature
//! analysis   free energy, dissipation, Z estimate, errors, energy distance
//! theory     one-step linear flow matching for the OU process
//! cli        config-driven experiment runner
//! ```
//!
//! Runnable examples, one per capability:
//!
//! ```text
//! cargo run --release --example quickstart_ou
//! cargo run --release --example derivative_jets
//! cargo run --release --example score_flow
//! cargo run --release --example uld_symplectic
//! cargo run --release --example train_double_well
//! cargo run --release --example uld_multistage
//! cargo run --release --example chaotic_systems
//! cargo run --release --example reference_oracles
//! cargo run --release --example free_energy
//! cargo run --release --example theory_gd
//! cargo run --release --example run_experiment
//! ```

pub mod analysis;
pub mod cli;
pub mod error;
pub mod field;
pub mod flow;
pub mod jet;
pub mod problems;
pub mod reference;
pub mod rng;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
pub use field::{Baseline, Field, Init, VelocityField};
pub use jet::{FieldJet, JetOrder};
pub use problems::{AtanVariant, ControlLayout, Potential, ProblemKind, ProblemSpec};
