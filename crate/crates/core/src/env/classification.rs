use rand::Rng;
use rand_distr::StandardNormal;

use super::Environment;
use crate::error::EnvError;
use crate::rng::AgentRng;
use crate::types::{AgentType, EnvKind, PolicyParams};

/// Content-quality prediction from a click-through metric that sellers can inflate.
///
/// Types: `z ~ N(0, 1)`, `gamma ~ U(0, 1.5)`, `r ~ N(0, 1)`. The seller reports
/// `x = z + gamma * beta1`, the true quality is `y = z + r` regardless of the
/// prediction, and the planner maximizes `-(y - w)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Classification;

/// Coefficients are kept in `[-BOUND, BOUND]`.
pub const BOUND: f64 = 2.0;

fn unpack(theta: &AgentType) -> Result<(f64, f64, f64), EnvError> {
    match *theta {
        AgentType::Classification { z, gamma, r } => Ok((z, gamma, r)),
        _ => Err(EnvError::TypeMismatch { expected: "classification" }),
    }
}

impl Environment for Classification {
    fn kind(&self) -> EnvKind {
        EnvKind::Classification
    }

    fn k(&self) -> usize {
        2
    }

    fn sample_type(&self, rng: &mut AgentRng) -> AgentType {
        let z: f64 = rng.sample(StandardNormal);
        let gamma = rng.gen_range(0.0..1.5);
        let r: f64 = rng.sample(StandardNormal);
        AgentType::Classification { z, gamma, r }
    }

    fn report(&self, beta: &PolicyParams, theta: &AgentType) -> Result<f64, EnvError> {
        let (z, gamma, _) = unpack(theta)?;
        Ok(z + gamma * beta[1])
    }

    fn features(&self, x: f64) -> Vec<f64> {
        vec![1.0, x]
    }

    fn treat(&self, x: f64, beta: &PolicyParams) -> f64 {
        beta[0] + beta[1] * x
    }

    fn outcome(&self, _w: f64, theta: &AgentType) -> f64 {
        let (z, _, r) = unpack(theta).expect("classification outcome needs a classification type");
        z + r
    }

    fn objective(&self, w: f64, y: f64) -> f64 {
        -(y - w) * (y - w)
    }

    fn objective_partials(&self, w: f64, y: f64) -> (f64, f64) {
        (2.0 * (y - w), -2.0 * (y - w))
    }

    fn ite(&self, _w: f64, _theta: &AgentType) -> f64 {
        0.0
    }

    fn initial_beta(&self) -> PolicyParams {
        PolicyParams::zeros(2)
    }

    fn manipulation_free(&self, beta: &PolicyParams) -> PolicyParams {
        PolicyParams::from_vec_unchecked(vec![beta[0], 0.0])
    }

    fn safe_box(&self) -> Vec<(f64, f64)> {
        vec![(-BOUND, BOUND); 2]
    }
}
