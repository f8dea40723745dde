//! Simulated environments: type distribution, strategic report, treatment rule,
//! outcome, planner objective and the treatment effect the planner is assumed to know.

mod classification;
mod pricing;

pub use classification::Classification;
pub use pricing::Pricing;

use crate::error::{EnvError, Error, Result};
use crate::par::{self, ExecMode};
use crate::rng::{AgentRng, SeedStream};
use crate::types::{AgentType, EnvKind, PolicyParams};

/// Reports whose best-response denominator falls to this value or below are rejected.
pub const SINGULARITY_GUARD: f64 = 1e-3;

pub trait Environment: Send + Sync {
    fn kind(&self) -> EnvKind;

    /// Policy dimension.
    fn k(&self) -> usize;

    fn sample_type(&self, rng: &mut AgentRng) -> AgentType;

    /// The agent's best-response report under the announced policy.
    fn report(&self, beta: &PolicyParams, theta: &AgentType) -> Result<f64, EnvError>;

    /// Regressors of the treatment rule; the nominal rule is `features(x) . beta`.
    fn features(&self, x: f64) -> Vec<f64>;

    fn treat(&self, x: f64, beta: &PolicyParams) -> f64;

    fn outcome(&self, w: f64, theta: &AgentType) -> f64;

    /// Planner objective for one agent; every method maximizes its mean.
    fn objective(&self, w: f64, y: f64) -> f64;

    /// `(d pi / d w, d pi / d y)`.
    fn objective_partials(&self, w: f64, y: f64) -> (f64, f64);

    /// Individual treatment effect `dY/dw`.
    fn ite(&self, w: f64, theta: &AgentType) -> f64;

    fn initial_beta(&self) -> PolicyParams;

    /// The same policy with no dependence on the reported covariate.
    fn manipulation_free(&self, beta: &PolicyParams) -> PolicyParams;

    /// Coordinate bounds of the admissible region.
    fn safe_box(&self) -> Vec<(f64, f64)>;

    /// Clamps into the admissible box shrunk by `margin`, so that any
    /// `beta + margin * eps` with `eps` in `{-1, 1}^K` stays admissible.
    fn project(&self, beta: &PolicyParams, margin: f64) -> PolicyParams {
        let values = beta
            .as_slice()
            .iter()
            .zip(self.safe_box())
            .map(|(&b, (lo, hi))| {
                let (lo, hi) = (lo + margin, hi - margin);
                if lo > hi {
                    0.5 * (lo + hi)
                } else {
                    b.clamp(lo, hi)
                }
            })
            .collect();
        PolicyParams::from_vec_unchecked(values)
    }
}

pub fn build(kind: EnvKind) -> Box<dyn Environment> {
    match kind {
        EnvKind::Classification => Box::new(Classification),
        EnvKind::Pricing => Box::new(Pricing),
    }
}

/// Draws `n` i.i.d. types; agent `i` uses sub-stream `i`.
pub fn sample_types(env: &dyn Environment, n: usize, stream: &SeedStream, mode: ExecMode) -> Vec<AgentType> {
    par::map_indexed(mode, n, |i| env.sample_type(&mut stream.agent(i)))
}

/// Realized quantities for one agent facing one announced policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Realized {
    pub x: f64,
    pub w: f64,
    pub y: f64,
    pub pi: f64,
}

pub fn simulate(env: &dyn Environment, beta: &PolicyParams, theta: &AgentType) -> Result<Realized, EnvError> {
    let x = env.report(beta, theta)?;
    let w = env.treat(x, beta);
    let y = env.outcome(w, theta);
    let pi = env.objective(w, y);
    Ok(Realized { x, w, y, pi })
}

/// Every agent in `types` facing the same policy.
pub fn simulate_all(
    env: &dyn Environment,
    beta: &PolicyParams,
    types: &[AgentType],
    mode: ExecMode,
) -> Result<Vec<Realized>> {
    par::try_map_indexed(mode, types.len(), |i| {
        simulate(env, beta, &types[i]).map_err(|source| Error::Agent { agent: i, source })
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
