//! Monte-Carlo policy evaluation, regret statistics and run summaries.
//!
//! All evaluations go through an [`EvalPanel`]: a fixed set of agent types drawn
//! once from an evaluation seed. Evaluating two policies on the same panel pairs
//! them (common random numbers), so differences reflect the policy and not the draw.

use serde::{Deserialize, Serialize};

use crate::env::{self, Environment};
use crate::error::{Error, Result};
use crate::par::{self, ExecMode};
use crate::rng::{Purpose, SeedStream};
use crate::types::{AgentType, EnvKind, Method, PolicyParams, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPanel {
    env: EnvKind,
    seed: u64,
    types: Vec<AgentType>,
}

impl EvalPanel {
    pub fn sample(env: &dyn Environment, reps: usize, seed: u64, mode: ExecMode) -> Self {
        let stream = SeedStream::new(seed, Purpose::Evaluation, 0);
        EvalPanel {
            env: env.kind(),
            seed,
            types: env::sample_types(env, reps, &stream, mode),
        }
    }

    pub fn env(&self) -> EnvKind {
        self.env
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn reps(&self) -> usize {
        self.types.len()
    }

    pub fn types(&self) -> &[AgentType] {
        &self.types
    }
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let var = if n > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0)
        } else {
            0.0
        };
        McEstimate {
            mean,
            se: (var / nf).sqrt(),
            n,
        }
    }
}

fn panel_objectives(env: &dyn Environment, beta: &PolicyParams, panel: &EvalPanel, mode: ExecMode) -> Result<Vec<f64>> {
    let types = panel.types();
    par::try_map_indexed(mode, types.len(), |i| {
        env::simulate(env, beta, &types[i])
            .map(|r| r.pi)
            .map_err(|source| Error::Agent { agent: i, source })
    })
}

/// Mean objective of an unperturbed policy over the panel.
pub fn mc_objective(env: &dyn Environment, beta: &PolicyParams, panel: &EvalPanel, mode: ExecMode) -> Result<McEstimate> {
    Ok(McEstimate::from_values(&panel_objectives(env, beta, panel, mode)?))
}

/// Per-agent paired difference `pi(a) - pi(b)` over the panel.
pub fn paired_difference(
    env: &dyn Environment,
    a: &PolicyParams,
    b: &PolicyParams,
    panel: &EvalPanel,
    mode: ExecMode,
) -> Result<McEstimate> {
    let types = panel.types();
    let diffs = par::try_map_indexed(mode, types.len(), |i| {
        let ra = env::simulate(env, a, &types[i]).map_err(|source| Error::Agent { agent: i, source })?;
        let rb = env::simulate(env, b, &types[i]).map_err(|source| Error::Agent { agent: i, source })?;
        Ok::<_, Error>(ra.pi - rb.pi)
    })?;
    Ok(McEstimate::from_values(&diffs))
}

/// `Pi_hat(beta^t)` for every step, reusing the value when consecutive steps repeat a policy.
pub fn policy_values(env: &dyn Environment, traj: &Trajectory, panel: &EvalPanel, mode: ExecMode) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(traj.len());
    let mut last: Option<(&PolicyParams, f64)> = None;
    for step in &traj.steps {
        let v = match last {
            Some((b, v)) if *b == step.beta => v,
            _ => mc_objective(env, &step.beta, panel, mode).map_err(|e| e.at_step(step.t))?.mean,
        };
        out.push(v);
        last = Some((&step.beta, v));
    }
    Ok(out)
}

/// Fills `eval_pi` for every step.
pub fn attach_evaluations(env: &dyn Environment, traj: &mut Trajectory, panel: &EvalPanel, mode: ExecMode) -> Result<()> {
    let values = policy_values(env, traj, panel, mode)?;
    for (step, v) in traj.steps.iter_mut().zip(values) {
        step.eval_pi = Some(v);
    }
    Ok(())
}

fn regret_from_values(values: &[f64], reference: f64) -> f64 {
    values.iter().map(|v| v - reference).sum::<f64>() / values.len() as f64
}

fn weighted_from_values(values: &[f64], reference: f64) -> f64 {
    values
        .iter()
        .enumerate()
        .map(|(i, v)| (i + 1) as f64 * (reference - v))
        .sum::<f64>()
        / values.len() as f64
}

/// `(1/T) sum_t (Pi_hat(beta^t) - Pi_hat(beta*))`: non-positive when `beta*` is optimal.
pub fn avg_regret(
    traj: &Trajectory,
    beta_star: &PolicyParams,
    env: &dyn Environment,
    panel: &EvalPanel,
    mode: ExecMode,
) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let reference = mc_objective(env, beta_star, panel, mode)?.mean;
    Ok(regret_from_values(&policy_values(env, traj, panel, mode)?, reference))
}

/// `(1/T) sum_t t * (Pi_hat(beta_ref) - Pi_hat(beta^t))`, with `t` the position in the trajectory.
pub fn weighted_regret(
    traj: &Trajectory,
    beta_ref: &PolicyParams,
    env: &dyn Environment,
    panel: &EvalPanel,
    mode: ExecMode,
) -> Result<f64> {
    if traj.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    let reference = mc_objective(env, beta_ref, panel, mode)?.mean;
    Ok(weighted_from_values(&policy_values(env, traj, panel, mode)?, reference))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub steps: usize,
    /// Mean over steps of `Pi_hat(beta^t)`.
    pub avg_objective: f64,
    /// `-avg_objective` for the classification environment.
    pub avg_mse: Option<f64>,
    /// Mean of `Pi_hat(beta^t) - Pi_hat(beta*)`.
    pub avg_regret: f64,
    pub weighted_regret: f64,
    pub terminal_beta: PolicyParams,
    /// `|beta* - beta^T|^2`.
    pub terminal_error: f64,
    pub max_gradient_norm: Option<f64>,
    pub diverged: bool,
    pub oscillating: bool,
}

/// One row per trajectory, all evaluated on the same panel against `beta_star`.
pub fn summarize(
    trajs: &[Trajectory],
    env: &dyn Environment,
    beta_star: &PolicyParams,
    panel: &EvalPanel,
    mode: ExecMode,
) -> Result<Vec<RunSummary>> {
    if trajs.iter().any(|t| t.env != env.kind()) || panel.env() != env.kind() {
        return Err(Error::MixedEnvironments);
    }
    let reference = mc_objective(env, beta_star, panel, mode)?.mean;
    trajs
        .iter()
        .map(|traj| {
            let values = policy_values(env, traj, panel, mode)?;
            summary_from_values(traj, &values, reference, beta_star)
        })
        .collect()
}

/// Builds a summary from precomputed `Pi_hat(beta^t)` values and `Pi_hat(beta*)`.
pub fn summary_from_values(
    traj: &Trajectory,
    values: &[f64],
    reference: f64,
    beta_star: &PolicyParams,
) -> Result<RunSummary> {
    let terminal = traj.terminal_beta().ok_or(Error::EmptyTrajectory)?;
    assert_eq!(values.len(), traj.len());
    let avg_objective = values.iter().sum::<f64>() / values.len() as f64;
    Ok(RunSummary {
        env: traj.env,
        method: traj.method,
        seed: traj.seed,
        steps: traj.len(),
        avg_objective,
        avg_mse: (traj.env == EnvKind::Classification).then_some(-avg_objective),
        avg_regret: regret_from_values(values, reference),
        weighted_regret: weighted_from_values(values, reference),
        terminal_beta: terminal.clone(),
        terminal_error: terminal.distance_sq(beta_star),
        max_gradient_norm: traj.max_gradient_norm(),
        diverged: traj.flags.diverged,
        oscillating: traj.flags.oscillating,
    })
}

/// The regret-bound surrogate `eta * M_hat^2 / 2` with `M_hat` the largest gradient-estimate norm.
pub fn regret_bound(traj: &Trajectory, eta: f64) -> Option<f64> {
    traj.max_gradient_norm().map(|m| eta * m * m / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Classification, Pricing};
    use crate::types::Step;

    fn p(v: &[f64]) -> PolicyParams {
        PolicyParams::new(v.to_vec()).unwrap()
    }

    fn constant_traj(env: EnvKind, beta: &PolicyParams, t: usize) -> Trajectory {
        let mut traj = Trajectory::new(env, Method::FullInfo, 0);
        for t in 1..=t {
            traj.steps.push(Step {
                t,
                beta: beta.clone(),
                gamma_hat: None,
                batch_mean_pi: 0.0,
                eval_pi: None,
            });
        }
        traj
    }

    #[test]
    fn zero_policy_mse_is_outcome_variance() {
        // Predicting 0 for Y = Z + R has MSE Var(Z) + Var(R) = 2.
        let panel = EvalPanel::sample(&Classification, 1_000_000, 1, ExecMode::available());
        let est = mc_objective(&Classification, &PolicyParams::zeros(2), &panel, ExecMode::available()).unwrap();
        assert!((est.mean + 2.0).abs() < 4.0 * est.se, "{est:?}");
    }

    #[test]
    fn uniform_price_revenue() {
        // E[10 (V - 10)] = 10 * (E[V] - 10) = 100.
        let panel = EvalPanel::sample(&Pricing, 1_000_000, 2, ExecMode::available());
        let est = mc_objective(&Pricing, &p(&[10.0, 0.0]), &panel, ExecMode::available()).unwrap();
        assert!((est.mean - 100.0).abs() < 4.0 * est.se, "{est:?}");
    }

    #[test]
    fn standard_error_scales_with_reps() {
        for env in [&Classification as &dyn Environment, &Pricing] {
            let beta = env.project(&env.initial_beta().offset(1.0, &[0.2, 0.1]), 0.0);
            let a = mc_objective(env, &beta, &EvalPanel::sample(env, 100_000, 3, ExecMode::available()), ExecMode::available()).unwrap();
            let b = mc_objective(env, &beta, &EvalPanel::sample(env, 200_000, 4, ExecMode::available()), ExecMode::available()).unwrap();
            let ratio = b.se / a.se;
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.1 * std::f64::consts::FRAC_1_SQRT_2, "{ratio}");
        }
    }

    #[test]
    fn crn_differences_are_exact() {
        let panel = EvalPanel::sample(&Pricing, 10_000, 9, ExecMode::available());
        let beta = p(&[8.0, 0.15]);
        let a = mc_objective(&Pricing, &beta, &panel, ExecMode::Parallel).unwrap();
        let b = mc_objective(&Pricing, &beta, &panel, ExecMode::Sequential).unwrap();
        assert_eq!(a.mean - b.mean, 0.0);
        let d = paired_difference(&Pricing, &beta, &beta, &panel, ExecMode::available()).unwrap();
        assert_eq!((d.mean, d.se), (0.0, 0.0));
    }

    #[test]
    fn full_info_trajectory_has_zero_regret() {
        let panel = EvalPanel::sample(&Pricing, 10_000, 9, ExecMode::available());
        let beta = p(&[8.0, 0.15]);
        let traj = constant_traj(EnvKind::Pricing, &beta, 20);
        assert_eq!(avg_regret(&traj, &beta, &Pricing, &panel, ExecMode::available()).unwrap(), 0.0);
        assert_eq!(weighted_regret(&traj, &beta, &Pricing, &panel, ExecMode::available()).unwrap(), 0.0);
    }

    #[test]
    fn weighted_regret_depends_on_order() {
        let panel = EvalPanel::sample(&Classification, 10_000, 9, ExecMode::available());
        let star = p(&[-0.49, 0.8]);
        let mut traj = constant_traj(EnvKind::Classification, &star, 4);
        traj.steps[0].beta = PolicyParams::zeros(2);
        let forward = weighted_regret(&traj, &star, &Classification, &panel, ExecMode::available()).unwrap();
        traj.steps.reverse();
        let backward = weighted_regret(&traj, &star, &Classification, &panel, ExecMode::available()).unwrap();
        assert!(forward > 0.0 && backward > forward);
        assert!((backward - 4.0 * forward).abs() < 1e-9);
    }

    #[test]
    fn summary_rows_and_mse_sign() {
        let panel = EvalPanel::sample(&Classification, 10_000, 9, ExecMode::available());
        let star = p(&[-0.49, 0.8]);
        let traj = constant_traj(EnvKind::Classification, &star, 5);
        let rows = summarize(std::slice::from_ref(&traj), &Classification, &star, &panel, ExecMode::available()).unwrap();
        assert_eq!(rows.len(), 1);
        let r = &rows[0];
        assert_eq!(r.avg_mse, Some(-r.avg_objective));
        assert_eq!(r.avg_regret, 0.0);
        assert_eq!(r.terminal_beta, star);
        let mut other = traj;
        other.env = EnvKind::Pricing;
        assert!(matches!(
            summarize(&[other], &Classification, &star, &panel, ExecMode::available()),
            Err(Error::MixedEnvironments)
        ));
        assert!(matches!(
            avg_regret(&Trajectory::new(EnvKind::Classification, Method::Rrm, 0), &star, &Classification, &panel, ExecMode::available()),
            Err(Error::EmptyTrajectory)
        ));
    }
}
