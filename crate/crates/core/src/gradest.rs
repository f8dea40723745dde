//! Zeroth-order gradient estimation from randomized policy perturbations.
//!
//! Each agent in a batch faces `beta + h * eps_i` with `eps_i` uniform on
//! `{-1, 1}^K`; regressing the realized objective on the perturbations recovers
//! the gradient of the population objective, including the part that flows
//! through the agents' strategic reports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::linalg;
use crate::metrics::{paired_difference, EvalPanel};
use crate::par::{self, ExecMode};
use crate::rng::SeedStream;
use crate::types::{PerturbationDesign, PolicyParams};

const RANK_TOL: f64 = 1e-10;

/// `h = c * n^-alpha`.
pub fn perturbation_scale(c: f64, alpha: f64, n: usize) -> f64 {
    c * (n as f64).powf(-alpha)
}

/// Draws an `n x K` Rademacher design at scale `c * n^-alpha`. Row `i` uses sub-stream `i`.
pub fn design_perturbations(n: usize, k: usize, c: f64, alpha: f64, stream: &SeedStream) -> PerturbationDesign {
    let h = perturbation_scale(c, alpha, n);
    let mut signs = Vec::with_capacity(n * k);
    for i in 0..n {
        let mut rng = stream.agent(i);
        signs.extend((0..k).map(|_| if rng.gen::<bool>() { 1i8 } else { -1i8 }));
    }
    PerturbationDesign::from_signs(signs, n, k, h, c, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate {
    pub gamma_hat: Vec<f64>,
    pub n_used: usize,
    pub h_used: f64,
}

/// OLS of `pi` on the perturbation matrix: `(Q'Q)^{-1} Q' pi`.
///
/// With `demean`, the fit includes an intercept: both `pi` and the columns of
/// `Q` are centered.
pub fn estimate_gradient(design: &PerturbationDesign, pi: &[f64], demean: bool) -> Result<GradientEstimate> {
    let (n, k, h) = (design.n(), design.k(), design.h());
    assert_eq!(pi.len(), n, "one objective value per agent");
    let center = if demean { pi.iter().sum::<f64>() / n as f64 } else { 0.0 };
    // Accumulate on the sign scale; Q = h * S so (Q'Q)^{-1} Q' pi = (S'S)^{-1} S' pi / h.
    let mut sts = vec![0.0; k * k];
    let mut stp = vec![0.0; k];
    let mut col_sum = vec![0.0; k];
    for (i, &p) in pi.iter().enumerate() {
        let row = design.signs_row(i);
        let p = p - center;
        for a in 0..k {
            let sa = f64::from(row[a]);
            col_sum[a] += sa;
            stp[a] += sa * p;
            for b in a..k {
                sts[a * k + b] += sa * f64::from(row[b]);
            }
        }
    }
    if demean {
        let nf = n as f64;
        for a in 0..k {
            for b in a..k {
                sts[a * k + b] -= col_sum[a] * col_sum[b] / nf;
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            sts[a * k + b] = sts[b * k + a];
        }
    }
    let coef = linalg::cholesky_solve(&sts, &stp, RANK_TOL).map_err(|pivot| Error::RankDeficient { pivot })?;
    let gamma_hat: Vec<f64> = coef.into_iter().map(|g| g / h).collect();
    if gamma_hat.iter().any(|g| !g.is_finite()) {
        return Err(Error::RankDeficient { pivot: f64::NAN });
    }
    Ok(GradientEstimate {
        gamma_hat,
        n_used: n,
        h_used: h,
    })
}

/// Centered finite differences of the Monte-Carlo objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdGradient {
    pub grad: Vec<f64>,
    /// Monte-Carlo standard error of each coordinate.
    pub se: Vec<f64>,
}

/// For each coordinate `j`: `(Pi(beta + h e_j) - Pi(beta - h e_j)) / 2h`, both
/// sides evaluated on the same panel of agents.
pub fn fd_oracle(
    env: &dyn Environment,
    beta: &PolicyParams,
    h_fd: f64,
    panel: &EvalPanel,
    mode: ExecMode,
) -> Result<FdGradient> {
    let k = beta.k();
    let per_coord = par::try_map_indexed(ExecMode::Sequential, k, |j| {
        let mut e = vec![0.0; k];
        e[j] = 1.0;
        let d = paired_difference(env, &beta.offset(h_fd, &e), &beta.offset(-h_fd, &e), panel, mode)?;
        Ok::<_, Error>((d.mean / (2.0 * h_fd), d.se / (2.0 * h_fd)))
    })?;
    let (grad, se) = per_coord.into_iter().unzip();
    Ok(FdGradient { grad, se })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Classification, Pricing};
    use crate::rng::Purpose;
    use proptest::prelude::*;

    fn design(n: usize, k: usize, seed: u64) -> PerturbationDesign {
        design_perturbations(n, k, 1.0, 0.25, &SeedStream::new(seed, Purpose::Perturbation, 0))
    }

    #[test]
    fn scale_schedule() {
        assert!((perturbation_scale(1.0, 0.25, 10_000) - 0.1).abs() < 1e-15);
        assert!((perturbation_scale(0.5, 0.25, 10_000) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn small_design_has_plus_minus_h_entries() {
        // c chosen so that h = 0.1 at n = 4.
        let c = 0.1 * 4f64.powf(0.25);
        let d = design_perturbations(4, 1, c, 0.25, &SeedStream::new(3, Purpose::Perturbation, 1));
        assert_eq!((d.n(), d.k()), (4, 1));
        assert!((d.h() - 0.1).abs() < 1e-15);
        for i in 0..4 {
            assert!(d.q(i, 0) == d.h() || d.q(i, 0) == -d.h());
        }
        assert_eq!(d.h(), perturbation_scale(d.c(), d.alpha(), d.n()));
    }

    #[test]
    fn large_design_is_balanced_and_orthogonal() {
        let n = 1_000_000;
        let d = design(n, 2, 17);
        let nf = n as f64;
        let mut col = [0.0f64; 2];
        let mut gram = [0.0f64; 4];
        for i in 0..n {
            let r = d.signs_row(i);
            for a in 0..2 {
                col[a] += f64::from(r[a]);
                for b in 0..2 {
                    gram[a * 2 + b] += f64::from(r[a]) * f64::from(r[b]);
                }
            }
        }
        // 3 / sqrt(n) bound on a Rademacher mean.
        for c in col {
            assert!((c / nf).abs() < 0.004, "{}", c / nf);
        }
        for a in 0..2 {
            for b in 0..2 {
                let target = if a == b { 1.0 } else { 0.0 };
                assert!((gram[a * 2 + b] / nf - target).abs() < 0.01);
            }
        }
    }

    #[test]
    fn constant_objective_gives_zero_gradient_when_demeaned() {
        let d = design(500, 2, 1);
        let g = estimate_gradient(&d, &vec![5.0; 500], true).unwrap();
        assert_eq!(g.gamma_hat, vec![0.0, 0.0]);
        assert_eq!(g.n_used, 500);
    }

    #[test]
    fn noiseless_linear_objective_is_recovered_exactly() {
        let d = design(400, 2, 2);
        let pi: Vec<f64> = (0..400).map(|i| d.q(i, 0) * 1.0 + d.q(i, 1) * 2.0).collect();
        for demean in [true, false] {
            let g = estimate_gradient(&d, &pi, demean).unwrap();
            assert!((g.gamma_hat[0] - 1.0).abs() < 1e-9 && (g.gamma_hat[1] - 2.0).abs() < 1e-9, "{g:?}");
        }
        let a = estimate_gradient(&d, &pi, true).unwrap();
        let b = estimate_gradient(&d, &pi, false).unwrap();
        for j in 0..2 {
            assert!((a.gamma_hat[j] - b.gamma_hat[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn rank_deficient_design_is_an_error() {
        // Identical columns.
        let d = PerturbationDesign::from_signs(vec![1, 1, -1, -1, 1, 1, -1, -1], 4, 2, 0.1, 1.0, 0.25);
        let err = estimate_gradient(&d, &[1.0, 2.0, 3.0, 4.0], true).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
        assert!(err.to_string().contains("increase n"));
    }

    #[test]
    fn fd_oracle_at_zero_policy_has_zero_intercept_slope() {
        // dPi/dbeta0 = -2 (beta0 + 0.75 beta1^2) = 0 at the origin.
        let panel = EvalPanel::sample(&Classification, 200_000, 4, ExecMode::available());
        let g = fd_oracle(&Classification, &PolicyParams::zeros(2), 1e-3, &panel, ExecMode::available()).unwrap();
        assert!(g.grad[0].abs() < 3.0 * g.se[0] + 1e-9, "{g:?}");
        // dPi/dbeta1 = 2 (1 - beta1) - ... = 2 at the origin.
        assert!((g.grad[1] - 2.0).abs() < 4.0 * g.se[1] + 0.02, "{g:?}");
    }

    #[test]
    fn fd_oracle_at_uniform_optimal_price() {
        // E[p0 (V - p0)] is maximized at p0 = E[V] / 2 = 10.
        let beta = PolicyParams::new(vec![10.0, 0.0]).unwrap();
        let panel = EvalPanel::sample(&Pricing, 200_000, 5, ExecMode::available());
        let g = fd_oracle(&Pricing, &beta, 1e-3, &panel, ExecMode::available()).unwrap();
        assert!(g.grad[0].abs() < 3.0 * g.se[0] + 0.02, "{g:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn row_permutation_leaves_estimate_unchanged(seed in any::<u64>(), shift in 1usize..199) {
            let n = 200;
            let d = design(n, 2, seed);
            let pi: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 0.3 * d.q(i, 1)).collect();
            let perm: Vec<usize> = (0..n).map(|i| (i + shift) % n).collect();
            let pp: Vec<f64> = perm.iter().map(|&p| pi[p]).collect();
            let a = estimate_gradient(&d, &pi, true).unwrap();
            let b = estimate_gradient(&d.permuted(&perm), &pp, true).unwrap();
            for j in 0..2 {
                prop_assert!((a.gamma_hat[j] - b.gamma_hat[j]).abs() <= 1e-9 * (1.0 + a.gamma_hat[j].abs()));
            }
        }

        #[test]
        fn doubling_h_keeps_linear_gradient(seed in any::<u64>(), g0 in -5.0f64..5.0, g1 in -5.0f64..5.0) {
            let n = 100;
            let d = design(n, 2, seed);
            let d2 = d.rescaled(2.0 * d.h());
            let lin = |d: &PerturbationDesign| -> Vec<f64> { (0..n).map(|i| 3.0 + g0 * d.q(i, 0) + g1 * d.q(i, 1)).collect() };
            let a = estimate_gradient(&d, &lin(&d), true).unwrap();
            let b = estimate_gradient(&d2, &lin(&d2), true).unwrap();
            for j in 0..2 {
                prop_assert!((a.gamma_hat[j] - b.gamma_hat[j]).abs() < 1e-8);
            }
        }
    }
}
