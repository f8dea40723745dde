//! Value types shared by every stage of a run.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Coefficients of the treatment rule `w(x; beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PolicyParams(Vec<f64>);

impl PolicyParams {
    pub fn new(values: Vec<f64>) -> Result<Self, ConfigError> {
        if values.is_empty() {
            return Err(ConfigError::invalid("beta", "policy must have at least one coefficient"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(ConfigError::invalid("beta", format!("non-finite coefficient {v}")));
        }
        Ok(PolicyParams(values))
    }

    /// Builds without validation; callers guarantee finiteness.
    pub(crate) fn from_vec_unchecked(values: Vec<f64>) -> Self {
        debug_assert!(!values.is_empty());
        PolicyParams(values)
    }

    pub fn zeros(k: usize) -> Self {
        PolicyParams(vec![0.0; k.max(1)])
    }

    pub fn k(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance_sq(&self, other: &PolicyParams) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    /// `self + scale * direction`, coordinate-wise.
    pub fn offset(&self, scale: f64, direction: &[f64]) -> PolicyParams {
        PolicyParams(
            self.0
                .iter()
                .zip(direction)
                .map(|(b, d)| b + scale * d)
                .collect(),
        )
    }
}

impl std::ops::Index<usize> for PolicyParams {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for PolicyParams {
    type Error = ConfigError;
    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        PolicyParams::new(v)
    }
}

impl From<PolicyParams> for Vec<f64> {
    fn from(p: PolicyParams) -> Vec<f64> {
        p.0
    }
}

/// Unobserved per-agent type. The variant must match the environment in use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "env", rename_all = "lowercase")]
pub enum AgentType {
    /// Latent engagement `z`, manipulation ability `gamma`, outcome noise `r`.
    Classification { z: f64, gamma: f64, r: f64 },
    /// Valuation `v`, latent search metric `z`, manipulation ability `gamma`.
    Pricing { v: f64, z: f64, gamma: f64 },
}

impl AgentType {
    pub fn gamma(&self) -> f64 {
        match *self {
            AgentType::Classification { gamma, .. } | AgentType::Pricing { gamma, .. } => gamma,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Classification,
    Pricing,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Classification => "classification",
            EnvKind::Pricing => "pricing",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "classification" => Ok(EnvKind::Classification),
            "pricing" => Ok(EnvKind::Pricing),
            other => Err(ConfigError::invalid(
                "env",
                format!("unknown environment `{other}` (expected classification | pricing)"),
            )),
        }
    }
}

/// Policy-learning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iterative,
    Rrm,
    Naive,
    FullInfo,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::FullInfo, Method::Iterative, Method::Rrm, Method::Naive];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iterative => "iterative",
            Method::Rrm => "rrm",
            Method::Naive => "naive",
            Method::FullInfo => "full_info",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Iterative => "Iterative Learning",
            Method::Rrm => "Repeated Risk Minimization",
            Method::Naive => "Naive Risk Minimization",
            Method::FullInfo => "Full Information",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "iterative" => Ok(Method::Iterative),
            "rrm" => Ok(Method::Rrm),
            "naive" => Ok(Method::Naive),
            "full_info" | "full-info" => Ok(Method::FullInfo),
            other => Err(ConfigError::invalid(
                "method",
                format!("unknown method `{other}` (expected iterative | rrm | naive | full_info)"),
            )),
        }
    }
}

/// Signed perturbation matrix `Q = h * eps` for one batch, stored as signs.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationDesign {
    signs: Vec<i8>,
    n: usize,
    k: usize,
    h: f64,
    c: f64,
    alpha: f64,
}

impl PerturbationDesign {
    pub(crate) fn from_signs(signs: Vec<i8>, n: usize, k: usize, h: f64, c: f64, alpha: f64) -> Self {
        debug_assert_eq!(signs.len(), n * k);
        debug_assert!(signs.iter().all(|s| *s == 1 || *s == -1));
        PerturbationDesign { signs, n, k, h, c, alpha }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sign(&self, i: usize, j: usize) -> i8 {
        self.signs[i * self.k + j]
    }

    pub fn signs_row(&self, i: usize) -> &[i8] {
        &self.signs[i * self.k..(i + 1) * self.k]
    }

    /// Entry `Q[i][j]`, exactly `+h` or `-h`.
    pub fn q(&self, i: usize, j: usize) -> f64 {
        f64::from(self.sign(i, j)) * self.h
    }

    /// The same signs at a different scale.
    pub fn rescaled(&self, h: f64) -> PerturbationDesign {
        PerturbationDesign { h, ..self.clone() }
    }

    /// Reorders agents: row `i` of the result is row `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> PerturbationDesign {
        let mut signs = Vec::with_capacity(self.signs.len());
        for &p in perm {
            signs.extend_from_slice(self.signs_row(p));
        }
        PerturbationDesign { signs, ..self.clone() }
    }
}

/// One simulated agent: announced policy, report, treatment, outcome, objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub eps: Vec<i8>,
    pub beta_i: PolicyParams,
    pub x: f64,
    pub w: f64,
    pub y: f64,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub base: PolicyParams,
    pub h: f64,
    pub rows: Vec<AgentRecord>,
}

impl BatchRecord {
    pub fn pi(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.pi).collect()
    }

    pub fn mean_pi(&self) -> f64 {
        self.rows.iter().map(|r| r.pi).sum::<f64>() / self.rows.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub t: usize,
    pub beta: PolicyParams,
    pub gamma_hat: Option<Vec<f64>>,
    pub batch_mean_pi: f64,
    pub eval_pi: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryFlags {
    pub diverged: bool,
    pub oscillating: bool,
}

/// Per-step history of one learning procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub env: EnvKind,
    pub method: Method,
    pub seed: u64,
    pub steps: Vec<Step>,
    #[serde(default)]
    pub flags: TrajectoryFlags,
}

impl Trajectory {
    pub fn new(env: EnvKind, method: Method, seed: u64) -> Self {
        Trajectory {
            env,
            method,
            seed,
            steps: Vec::new(),
            flags: TrajectoryFlags::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn terminal_beta(&self) -> Option<&PolicyParams> {
        self.steps.last().map(|s| &s.beta)
    }

    pub fn k(&self) -> usize {
        self.steps.first().map_or(0, |s| s.beta.k())
    }

    /// Largest Euclidean norm of the recorded gradient estimates.
    pub fn max_gradient_norm(&self) -> Option<f64> {
        self.steps
            .iter()
            .filter_map(|s| s.gamma_hat.as_ref())
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}
