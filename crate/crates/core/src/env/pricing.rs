use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Environment, SINGULARITY_GUARD};
use crate::error::EnvError;
use crate::rng::AgentRng;
use crate::types::{AgentType, EnvKind, PolicyParams};

/// Linear price discrimination on a search-history metric customers can shade.
///
/// Types: `z ~ U(10, 20)`, `v ~ N(5 + z, sd 2)`, `gamma ~ U(0, 3)`. Demand is
/// `y = v - w`; the customer's report is the closed-form best response
/// `x = (z - gamma * p1 * (v - p0)) / (1 - p1^2 * gamma)`. Posted prices are
/// floored at zero; demand is not truncated.
#[derive(Debug, Clone, Copy, Default)]
pub struct Pricing;

pub const GAMMA_MAX: f64 = 3.0;
pub const P0_RANGE: (f64, f64) = (0.0, 40.0);

/// Largest admissible `|p1|`: keeps `1 - p1^2 * gamma` above the guard for every type.
pub fn p1_limit() -> f64 {
    (1.0 - SINGULARITY_GUARD) / GAMMA_MAX.sqrt()
}

fn unpack(theta: &AgentType) -> Result<(f64, f64, f64), EnvError> {
    match *theta {
        AgentType::Pricing { v, z, gamma } => Ok((v, z, gamma)),
        _ => Err(EnvError::TypeMismatch { expected: "pricing" }),
    }
}

impl Environment for Pricing {
    fn kind(&self) -> EnvKind {
        EnvKind::Pricing
    }

    fn k(&self) -> usize {
        2
    }

    fn sample_type(&self, rng: &mut AgentRng) -> AgentType {
        let z = rng.gen_range(10.0..20.0);
        let v = Normal::new(5.0 + z, 2.0).expect("finite parameters").sample(rng);
        let gamma = rng.gen_range(0.0..GAMMA_MAX);
        AgentType::Pricing { v, z, gamma }
    }

    fn report(&self, beta: &PolicyParams, theta: &AgentType) -> Result<f64, EnvError> {
        let (v, z, gamma) = unpack(theta)?;
        let (p0, p1) = (beta[0], beta[1]);
        let denominator = 1.0 - p1 * p1 * gamma;
        if denominator <= SINGULARITY_GUARD {
            return Err(EnvError::PricingSingularity { denominator });
        }
        Ok((z - gamma * p1 * (v - p0)) / denominator)
    }

    fn features(&self, x: f64) -> Vec<f64> {
        vec![1.0, x]
    }

    fn treat(&self, x: f64, beta: &PolicyParams) -> f64 {
        (beta[0] + beta[1] * x).max(0.0)
    }

    fn outcome(&self, w: f64, theta: &AgentType) -> f64 {
        let (v, _, _) = unpack(theta).expect("pricing outcome needs a pricing type");
        v - w
    }

    fn objective(&self, w: f64, y: f64) -> f64 {
        w * y
    }

    fn objective_partials(&self, w: f64, y: f64) -> (f64, f64) {
        (y, w)
    }

    fn ite(&self, _w: f64, _theta: &AgentType) -> f64 {
        -1.0
    }

    fn initial_beta(&self) -> PolicyParams {
        PolicyParams::from_vec_unchecked(vec![10.0, 0.0])
    }

    fn manipulation_free(&self, beta: &PolicyParams) -> PolicyParams {
        PolicyParams::from_vec_unchecked(vec![beta[0], 0.0])
    }

    fn safe_box(&self) -> Vec<(f64, f64)> {
        let lim = p1_limit();
        vec![P0_RANGE, (-lim, lim)]
    }
}
