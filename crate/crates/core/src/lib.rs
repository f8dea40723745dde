//! Learning treatment-allocation policies when agents strategically misreport
//! the covariates the policy depends on.
//!
//! The crate simulates two environments (strategic classification and linear
//! price discrimination), estimates policy gradients from randomized
//! perturbation experiments, and compares the resulting iterative learner with
//! repeated risk minimization, a naive one-shot fit and a full-information optimum.

pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod gradest;
pub mod learn;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod rng;
pub mod types;

pub use config::{validate_config, ConfigOverrides, RunConfig};
pub use env::{Classification, Environment, Pricing};
pub use error::{ConfigError, EnvError, Error, Result};
pub use gradest::{design_perturbations, estimate_gradient, fd_oracle, perturbation_scale, FdGradient, GradientEstimate};
pub use learn::{run_iterative, run_naive, run_rrm, solve_full_info, FullInfoSolution};
pub use metrics::{avg_regret, mc_objective, summarize, weighted_regret, EvalPanel, McEstimate, RunSummary};
pub use par::ExecMode;
pub use types::{AgentType, BatchRecord, EnvKind, Method, PerturbationDesign, PolicyParams, Step, Trajectory};
