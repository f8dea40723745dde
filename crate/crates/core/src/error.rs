use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A configuration invariant that does not hold.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

impl ConfigError {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field,
            reason: reason.into(),
        }
    }
}

/// Failure inside a single agent's best response.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("report denominator 1 - p1^2*gamma = {denominator:.6} is at or below the singularity guard")]
    PricingSingularity { denominator: f64 },
    #[error("agent type does not belong to the {expected} environment")]
    TypeMismatch { expected: &'static str },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("agent {agent}: {source}")]
    Agent { agent: usize, source: EnvError },
    #[error("{0}")]
    Env(#[from] EnvError),
    #[error("perturbation design is rank deficient (pivot {pivot:.3e}); increase n or resample")]
    RankDeficient { pivot: f64 },
    #[error("risk-minimization first-order system is singular")]
    SingularFoc,
    #[error("step {t}: {source}")]
    Step { t: usize, source: Box<Error> },
    #[error("full-information search: incumbent on the search boundary at {beta:?}; expand search region")]
    SearchBoundary { beta: Vec<f64> },
    #[error("trajectories come from different environments")]
    MixedEnvironments,
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn at_step(self, t: usize) -> Self {
        match self {
            e @ Error::Step { .. } => e,
            e => Error::Step {
                t,
                source: Box::new(e),
            },
        }
    }

    /// Configuration problems are user errors; everything else is a runtime failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Step { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
