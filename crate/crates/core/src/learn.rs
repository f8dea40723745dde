//! Policy-learning procedures.
//!
//! * [`run_iterative`]: perturbation experiment with gradient ascent on the estimate.
//! * [`run_rrm`]: repeated risk minimization, refitting on reports as if exogenous.
//! * [`run_naive`]: one fit on manipulation-free data, then deployed unchanged.
//! * [`solve_full_info`]: grid search on the Monte-Carlo objective with the true model.
//!
//! Agents never persist across steps: step `t` draws a fresh batch from
//! stream `(seed, types, t)`, shared by every method so runs are paired.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{self, dot, Environment, Realized};
use crate::error::{Error, Result};
use crate::gradest::{design_perturbations, estimate_gradient, perturbation_scale};
use crate::linalg;
use crate::metrics::{mc_objective, EvalPanel, McEstimate};
use crate::par::{self, ExecMode};
use crate::rng::{Purpose, SeedStream};
use crate::types::{AgentRecord, AgentType, BatchRecord, Method, PerturbationDesign, PolicyParams, Step, Trajectory};

/// Minimum step-to-step movement that counts as oscillation.
pub const OSCILLATION_TOL: f64 = 0.05;
/// A refit larger than this multiple of `max(1, |beta^0|)` stops the run.
pub const DIVERGENCE_FACTOR: f64 = 1e3;

fn batch_types(env: &dyn Environment, cfg: &RunConfig, t: usize) -> Vec<AgentType> {
    env::sample_types(env, cfg.n, &SeedStream::new(cfg.seed, Purpose::Types, t as u64), cfg.exec)
}

/// Agents facing `base + h * eps_i`, one row of `design` each.
pub fn experiment_batch(
    env: &dyn Environment,
    base: &PolicyParams,
    design: &PerturbationDesign,
    types: &[AgentType],
    mode: ExecMode,
) -> Result<BatchRecord> {
    assert_eq!(design.n(), types.len());
    let h = design.h();
    let rows = par::try_map_indexed(mode, types.len(), |i| {
        let eps = design.signs_row(i).to_vec();
        let dir: Vec<f64> = eps.iter().map(|&s| f64::from(s)).collect();
        let beta_i = base.offset(h, &dir);
        let r = env::simulate(env, &beta_i, &types[i]).map_err(|source| Error::Agent { agent: i, source })?;
        Ok::<_, Error>(AgentRecord {
            eps,
            beta_i,
            x: r.x,
            w: r.w,
            y: r.y,
            pi: r.pi,
        })
    })?;
    Ok(BatchRecord {
        base: base.clone(),
        h,
        rows,
    })
}

fn mean_pi(realized: &[Realized]) -> f64 {
    realized.iter().map(|r| r.pi).sum::<f64>() / realized.len() as f64
}

pub fn run_iterative(env: &dyn Environment, cfg: &RunConfig) -> Result<Trajectory> {
    run_iterative_from(env, cfg, &env.initial_beta())
}

/// The perturbation experiment from an explicit starting policy.
///
/// With `t_max = 1` this is a single update `beta^1 = beta^0 + eta * Gamma_hat`.
pub fn run_iterative_from(env: &dyn Environment, cfg: &RunConfig, beta0: &PolicyParams) -> Result<Trajectory> {
    cfg.validate()?;
    let k = beta0.k();
    let h = perturbation_scale(cfg.c, cfg.alpha, cfg.n);
    let mut beta = env.project(beta0, h);
    let mut traj = Trajectory::new(env.kind(), Method::Iterative, cfg.seed);
    for t in 1..=cfg.t_max {
        let step = || -> Result<Step> {
            let types = batch_types(env, cfg, t);
            let design = design_perturbations(
                cfg.n,
                k,
                cfg.c,
                cfg.alpha,
                &SeedStream::new(cfg.seed, Purpose::Perturbation, t as u64),
            );
            let batch = experiment_batch(env, &beta, &design, &types, cfg.exec)?;
            let est = estimate_gradient(&design, &batch.pi(), cfg.demean)?;
            let scale = 2.0 / (t as f64 + 1.0);
            let updated: Vec<f64> = (0..k)
                .map(|j| beta[j] + scale * cfg.eta_at(j) * est.gamma_hat[j])
                .collect();
            let next = env.project(&PolicyParams::new(updated)?, h);
            Ok(Step {
                t,
                beta: next,
                gamma_hat: Some(est.gamma_hat),
                batch_mean_pi: batch.mean_pi(),
                eval_pi: None,
            })
        };
        let s = step().map_err(|e| e.at_step(t))?;
        beta = s.beta.clone();
        traj.steps.push(s);
    }
    Ok(traj)
}

const FOC_MAX_ITERS: usize = 50;

/// Solves the risk-minimization first-order condition on one batch, treating
/// the reports as fixed:
///
/// `0 = sum_i [dpi/dw + dpi/dy * ITE_i] * dW_i/dbeta`
///
/// with `W_i(beta) = features(X_i) . beta` and the outcome moved along the known
/// treatment effect, `Y_i(w) = Y_i + ITE_i * (w - W_i)`. Newton's method; one
/// step is exact when the objective is quadratic in `(w, y)`.
pub fn risk_minimization_fit(
    env: &dyn Environment,
    types: &[AgentType],
    realized: &[Realized],
    start: &PolicyParams,
) -> Result<PolicyParams> {
    let k = start.k();
    let rows: Vec<(Vec<f64>, f64, f64, f64)> = types
        .iter()
        .zip(realized)
        .map(|(theta, r)| (env.features(r.x), r.w, r.y, env.ite(r.w, theta)))
        .collect();
    let score = |w: f64, w_obs: f64, y_obs: f64, ite: f64| {
        let y = y_obs + ite * (w - w_obs);
        let (dw, dy) = env.objective_partials(w, y);
        dw + dy * ite
    };
    let mut beta = start.as_slice().to_vec();
    for _ in 0..FOC_MAX_ITERS {
        let mut g = vec![0.0; k];
        let mut jac = vec![0.0; k * k];
        for (phi, w_obs, y_obs, ite) in &rows {
            let w = dot(phi, &beta);
            let s = score(w, *w_obs, *y_obs, *ite);
            let d = 1e-4 * (1.0 + w.abs());
            let ds = (score(w + d, *w_obs, *y_obs, *ite) - score(w - d, *w_obs, *y_obs, *ite)) / (2.0 * d);
            for a in 0..k {
                g[a] += s * phi[a];
                for b in 0..k {
                    jac[a * k + b] += ds * phi[a] * phi[b];
                }
            }
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = linalg::solve(&jac, &neg_g, 1e-12).ok_or(Error::SingularFoc)?;
        let size: f64 = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        for (b, d) in beta.iter_mut().zip(&delta) {
            *b += d;
        }
        if !beta.iter().all(|b| b.is_finite()) {
            return Err(Error::SingularFoc);
        }
        let norm: f64 = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if size <= 1e-10 * (1.0 + norm) {
            break;
        }
    }
    Ok(PolicyParams::new(beta)?)
}

/// Flags a trajectory whose second half never settles: every step moves by at least `tol`.
pub fn detect_oscillation(traj: &Trajectory, tol: f64) -> bool {
    let n = traj.steps.len();
    if n < 4 {
        return false;
    }
    traj.steps[n / 2 - 1..]
        .windows(2)
        .all(|w| w[1].beta.distance_sq(&w[0].beta).sqrt() >= tol)
}

pub fn run_rrm(env: &dyn Environment, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let beta0 = env.project(&env.initial_beta(), 0.0);
    let guard = DIVERGENCE_FACTOR * beta0.norm().max(1.0);
    let mut beta = beta0;
    let mut traj = Trajectory::new(env.kind(), Method::Rrm, cfg.seed);
    for t in 1..=cfg.t_max {
        let types = batch_types(env, cfg, t);
        let realized = env::simulate_all(env, &beta, &types, cfg.exec).map_err(|e| e.at_step(t))?;
        let fit = risk_minimization_fit(env, &types, &realized, &beta).map_err(|e| e.at_step(t))?;
        if fit.norm() > guard {
            traj.flags.diverged = true;
            break;
        }
        beta = env.project(&fit, 0.0);
        traj.steps.push(Step {
            t,
            beta: beta.clone(),
            gamma_hat: None,
            batch_mean_pi: mean_pi(&realized),
            eval_pi: None,
        });
    }
    traj.flags.oscillating = detect_oscillation(&traj, OSCILLATION_TOL);
    Ok(traj)
}

/// The naive estimate: fitted once on a batch that has no incentive to misreport.
pub fn naive_fit(env: &dyn Environment, cfg: &RunConfig) -> Result<PolicyParams> {
    let free = env.manipulation_free(&env.project(&env.initial_beta(), 0.0));
    let types = env::sample_types(env, cfg.n, &SeedStream::new(cfg.seed, Purpose::NaiveFit, 0), cfg.exec);
    let realized = env::simulate_all(env, &free, &types, cfg.exec)?;
    let fit = risk_minimization_fit(env, &types, &realized, &free)?;
    Ok(env.project(&fit, 0.0))
}

pub fn run_naive(env: &dyn Environment, cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let beta = naive_fit(env, cfg)?;
    constant_policy_run(env, cfg, Method::Naive, &beta)
}

fn constant_policy_run(env: &dyn Environment, cfg: &RunConfig, method: Method, beta: &PolicyParams) -> Result<Trajectory> {
    let mut traj = Trajectory::new(env.kind(), method, cfg.seed);
    for t in 1..=cfg.t_max {
        let types = batch_types(env, cfg, t);
        let realized = env::simulate_all(env, beta, &types, cfg.exec).map_err(|e| e.at_step(t))?;
        traj.steps.push(Step {
            t,
            beta: beta.clone(),
            gamma_hat: None,
            batch_mean_pi: mean_pi(&realized),
            eval_pi: None,
        });
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullInfoSolution {
    pub beta_star: PolicyParams,
    /// Monte-Carlo objective at `beta_star`.
    pub pi_star: f64,
    pub pi_star_se: f64,
    /// Every evaluated `(beta, Pi_hat)`, in search order.
    pub grid_trace: Vec<(PolicyParams, f64)>,
}

/// Grid-search settings: a coarse grid over the admissible box, then
/// `refinements` rounds each shrinking the box by `shrink` around the incumbent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub coarse_points: usize,
    pub refine_points: usize,
    pub refinements: usize,
    pub shrink: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            coarse_points: 41,
            refine_points: 21,
            refinements: 2,
            shrink: 5.0,
        }
    }
}

fn axis(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    if points < 2 || hi <= lo {
        return vec![0.5 * (lo + hi)];
    }
    (0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else {
                lo + (hi - lo) * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

/// Maximizes the panel objective using the true model.
pub fn solve_full_info(env: &dyn Environment, cfg: &RunConfig) -> Result<FullInfoSolution> {
    cfg.validate()?;
    let panel = EvalPanel::sample(env, cfg.eval_reps, cfg.seed, cfg.exec);
    solve_full_info_on(env, &panel, &GridSpec::default(), cfg.exec)
}

pub fn solve_full_info_on(env: &dyn Environment, panel: &EvalPanel, grid: &GridSpec, mode: ExecMode) -> Result<FullInfoSolution> {
    let region = env.safe_box();
    let k = region.len();
    let mut trace: Vec<(PolicyParams, f64)> = Vec::new();
    let mut bounds = region.clone();
    let mut incumbent: Option<(PolicyParams, f64)> = None;
    let mut axes: Vec<Vec<f64>> = Vec::new();
    for round in 0..=grid.refinements {
        let points = if round == 0 { grid.coarse_points } else { grid.refine_points };
        if let Some((best, _)) = &incumbent {
            let factor = grid.shrink.powi(round as i32);
            bounds = region
                .iter()
                .enumerate()
                .map(|(j, &(lo, hi))| {
                    let half = 0.5 * (hi - lo) / factor;
                    ((best[j] - half).max(lo), (best[j] + half).min(hi))
                })
                .collect();
        }
        axes = bounds.iter().map(|&(lo, hi)| axis(lo, hi, points)).collect();
        let total: usize = axes.iter().map(Vec::len).product();
        let candidates: Vec<PolicyParams> = (0..total)
            .map(|mut idx| {
                let mut v = vec![0.0; k];
                for j in (0..k).rev() {
                    v[j] = axes[j][idx % axes[j].len()];
                    idx /= axes[j].len();
                }
                PolicyParams::from_vec_unchecked(v)
            })
            .collect();
        let values = par::try_map_indexed(mode, candidates.len(), |i| {
            mc_objective(env, &candidates[i], panel, ExecMode::Sequential).map(|e| e.mean)
        })?;
        for (beta, v) in candidates.into_iter().zip(values) {
            let better = incumbent.as_ref().is_none_or(|(_, best)| v > *best);
            if better {
                incumbent = Some((beta.clone(), v));
            }
            trace.push((beta, v));
        }
    }
    let (beta_star, _) = incumbent.expect("grid is never empty");
    let on_edge = (0..k).any(|j| {
        let a = &axes[j];
        a.len() > 1 && (beta_star[j] == a[0] || beta_star[j] == a[a.len() - 1])
    });
    if on_edge {
        return Err(Error::SearchBoundary {
            beta: beta_star.as_slice().to_vec(),
        });
    }
    let McEstimate { mean, se, .. } = mc_objective(env, &beta_star, panel, mode)?;
    Ok(FullInfoSolution {
        beta_star,
        pi_star: mean,
        pi_star_se: se,
        grid_trace: trace,
    })
}

/// The full-information policy held fixed for `t_max` steps.
pub fn run_full_info(env: &dyn Environment, cfg: &RunConfig, solution: &FullInfoSolution) -> Result<Trajectory> {
    cfg.validate()?;
    constant_policy_run(env, cfg, Method::FullInfo, &solution.beta_star)
}

/// Runs `cfg.method`. Full information needs a solution computed beforehand.
pub fn run_method(env: &dyn Environment, cfg: &RunConfig, full_info: Option<&FullInfoSolution>) -> Result<Trajectory> {
    match cfg.method {
        Method::Iterative => run_iterative(env, cfg),
        Method::Rrm => run_rrm(env, cfg),
        Method::Naive => run_naive(env, cfg),
        Method::FullInfo => match full_info {
            Some(sol) => run_full_info(env, cfg, sol),
            None => run_full_info(env, cfg, &solve_full_info(env, cfg)?),
        },
    }
}
