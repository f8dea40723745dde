//! Run configuration and the flat `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, Error, Result};
use crate::par::ExecMode;
use crate::types::{EnvKind, Method};

pub const DEFAULT_ALPHA: f64 = 0.25;
pub const DEFAULT_N: usize = 1000;
pub const DEFAULT_EVAL_REPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvKind,
    pub method: Method,
    /// Agents per batch.
    pub n: usize,
    /// Number of steps `T`.
    pub t_max: usize,
    /// Step size; one entry broadcasts to every coordinate.
    pub eta: Vec<f64>,
    /// Perturbation constant in `h = c * n^-alpha`.
    pub c: f64,
    pub alpha: f64,
    pub seed: u64,
    /// Center the objective before the gradient regression.
    pub demean: bool,
    /// Monte-Carlo panel size for policy evaluation.
    pub eval_reps: usize,
    #[serde(default)]
    pub exec: ExecMode,
}

impl RunConfig {
    /// Defaults for an environment: the table/figure settings used in the simulations.
    pub fn new(env: EnvKind, method: Method) -> Self {
        let (t_max, eta, c) = match env {
            EnvKind::Classification => (1000, vec![0.5], 0.5),
            EnvKind::Pricing => (500, vec![0.5, 0.005], 1.25),
        };
        RunConfig {
            env,
            method,
            n: DEFAULT_N,
            t_max,
            eta,
            c,
            alpha: DEFAULT_ALPHA,
            seed: 0,
            demean: true,
            eval_reps: DEFAULT_EVAL_REPS,
            exec: ExecMode::available(),
        }
    }

    /// Policy dimension for the configured environment.
    pub fn k(&self) -> usize {
        2
    }

    /// Step size for coordinate `j`.
    pub fn eta_at(&self, j: usize) -> f64 {
        if self.eta.len() == 1 {
            self.eta[0]
        } else {
            self.eta[j]
        }
    }

    pub fn eta_max(&self) -> f64 {
        self.eta.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let k = self.k();
        if self.n < 2 {
            return Err(ConfigError::invalid("n", "batch size must be at least 2"));
        }
        if self.n < 2 * k {
            return Err(ConfigError::invalid(
                "n",
                format!("n too small for K: need n >= 2K = {}, got {}", 2 * k, self.n),
            ));
        }
        if self.t_max < 1 {
            return Err(ConfigError::invalid("t_max", "need at least one step"));
        }
        if self.eta.len() != 1 && self.eta.len() != k {
            return Err(ConfigError::invalid(
                "eta",
                format!("expected 1 or {k} entries, got {}", self.eta.len()),
            ));
        }
        if self.eta.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(ConfigError::invalid("eta", "step sizes must be positive and finite"));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(ConfigError::invalid("c", "perturbation constant must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(ConfigError::invalid("alpha", "alpha must lie in (0, 0.5)"));
        }
        if self.eval_reps < 2 {
            return Err(ConfigError::invalid("eval_reps", "need at least 2 evaluation draws"));
        }
        Ok(())
    }

    /// Serializes to the flat config format accepted by [`ConfigOverrides::parse`].
    pub fn to_kv_string(&self) -> String {
        let eta = self
            .eta
            .iter()
            .map(|e| e.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let mut s = String::new();
        let _ = writeln!(s, "env = {}", self.env);
        let _ = writeln!(s, "method = {}", self.method);
        let _ = writeln!(s, "n = {}", self.n);
        let _ = writeln!(s, "t_max = {}", self.t_max);
        let _ = writeln!(s, "eta = {eta}");
        let _ = writeln!(s, "c = {}", self.c);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "demean = {}", self.demean);
        let _ = writeln!(s, "eval_reps = {}", self.eval_reps);
        let exec = match self.exec {
            ExecMode::Sequential => "sequential",
            ExecMode::Parallel => "parallel",
        };
        let _ = writeln!(s, "exec = {exec}");
        s
    }
}

/// Returns the config unchanged iff every invariant holds.
pub fn validate_config(cfg: RunConfig) -> Result<RunConfig, ConfigError> {
    cfg.validate()?;
    Ok(cfg)
}

/// Partially specified configuration, layered file-then-flags.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigOverrides {
    pub env: Option<EnvKind>,
    pub method: Option<Method>,
    pub n: Option<usize>,
    pub t_max: Option<usize>,
    pub eta: Option<Vec<f64>>,
    pub c: Option<f64>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub demean: Option<bool>,
    pub eval_reps: Option<usize>,
    pub exec: Option<ExecMode>,
}

fn parse_num<T: std::str::FromStr>(field: &'static str, v: &str) -> Result<T, ConfigError> {
    v.trim()
        .parse()
        .map_err(|_| ConfigError::invalid(field, format!("cannot parse `{}`", v.trim())))
}

pub fn parse_eta(v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|p| parse_num("eta", p)).collect()
}

pub fn parse_bool(field: &'static str, v: &str) -> Result<bool, ConfigError> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(ConfigError::invalid(field, format!("expected true or false, got `{other}`"))),
    }
}

impl ConfigOverrides {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut o = ConfigOverrides::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Parse {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            o.set(key.trim(), value.trim()).map_err(|e| match e {
                ConfigError::Invalid { field, reason } => ConfigError::Parse {
                    line: idx + 1,
                    message: format!("{field}: {reason}"),
                },
                other => other,
            })?;
        }
        Ok(o)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(ConfigError::invalid("config", format!("{}: {e}", path.display())))
        })?;
        Ok(Self::parse(&text)?)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "env" => self.env = Some(value.parse()?),
            "method" => self.method = Some(value.parse()?),
            "n" => self.n = Some(parse_num("n", value)?),
            "t_max" | "T" => self.t_max = Some(parse_num("t_max", value)?),
            "eta" => self.eta = Some(parse_eta(value)?),
            "c" => self.c = Some(parse_num("c", value)?),
            "alpha" => self.alpha = Some(parse_num("alpha", value)?),
            "seed" => self.seed = Some(parse_num("seed", value)?),
            "demean" => self.demean = Some(parse_bool("demean", value)?),
            "eval_reps" => self.eval_reps = Some(parse_num("eval_reps", value)?),
            "exec" => {
                self.exec = Some(match value {
                    "sequential" => ExecMode::Sequential,
                    "parallel" => ExecMode::Parallel,
                    other => {
                        return Err(ConfigError::invalid(
                            "exec",
                            format!("expected sequential | parallel, got `{other}`"),
                        ))
                    }
                })
            }
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// `other` wins wherever it is set.
    pub fn merge(self, other: ConfigOverrides) -> ConfigOverrides {
        ConfigOverrides {
            env: other.env.or(self.env),
            method: other.method.or(self.method),
            n: other.n.or(self.n),
            t_max: other.t_max.or(self.t_max),
            eta: other.eta.or(self.eta),
            c: other.c.or(self.c),
            alpha: other.alpha.or(self.alpha),
            seed: other.seed.or(self.seed),
            demean: other.demean.or(self.demean),
            eval_reps: other.eval_reps.or(self.eval_reps),
            exec: other.exec.or(self.exec),
        }
    }

    /// Fills unset fields from the environment defaults and validates.
    pub fn resolve(&self, default_env: EnvKind, default_method: Method) -> Result<RunConfig, ConfigError> {
        let env = self.env.unwrap_or(default_env);
        let method = self.method.unwrap_or(default_method);
        let d = RunConfig::new(env, method);
        let cfg = RunConfig {
            env,
            method,
            n: self.n.unwrap_or(d.n),
            t_max: self.t_max.unwrap_or(d.t_max),
            eta: self.eta.clone().unwrap_or(d.eta),
            c: self.c.unwrap_or(d.c),
            alpha: self.alpha.unwrap_or(d.alpha),
            seed: self.seed.unwrap_or(d.seed),
            demean: self.demean.unwrap_or(d.demean),
            eval_reps: self.eval_reps.unwrap_or(d.eval_reps),
            exec: self.exec.unwrap_or(d.exec),
        };
        validate_config(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> RunConfig {
        RunConfig::new(EnvKind::Classification, Method::Iterative)
    }

    #[test]
    fn defaults_validate() {
        let cfg = RunConfig { alpha: 0.25, n: 1000, ..base() };
        assert_eq!(validate_config(cfg.clone()).unwrap(), cfg);
        RunConfig::new(EnvKind::Pricing, Method::Rrm).validate().unwrap();
    }

    #[test]
    fn alpha_boundaries_are_excluded() {
        for alpha in [0.5, 0.0, 0.7, -0.1] {
            let err = validate_config(RunConfig { alpha, ..base() }).unwrap_err();
            assert_eq!(err.to_string(), "alpha: alpha must lie in (0, 0.5)");
        }
    }

    #[test]
    fn tiny_batches_are_rejected() {
        let err = validate_config(RunConfig { n: 1, ..base() }).unwrap_err();
        assert!(err.to_string().contains("n"), "{err}");
        let err = validate_config(RunConfig { n: 3, ..base() }).unwrap_err();
        assert!(err.to_string().contains("n too small for K"), "{err}");
        assert!(validate_config(RunConfig { n: 4, ..base() }).is_ok());
    }

    #[test]
    fn eta_shape_and_sign_are_checked() {
        assert!(validate_config(RunConfig { eta: vec![0.1, 0.2, 0.3], ..base() }).is_err());
        assert!(validate_config(RunConfig { eta: vec![-0.1], ..base() }).is_err());
        assert!(validate_config(RunConfig { eta: vec![0.1, 0.2], ..base() }).is_ok());
        assert!(validate_config(RunConfig { c: 0.0, ..base() }).is_err());
        assert!(validate_config(RunConfig { t_max: 0, ..base() }).is_err());
    }

    #[test]
    fn parses_flat_file_with_comments() {
        let text = "# pricing sweep\nenv = pricing\nmethod = rrm  # baseline\n\nn = 2000\nt_max = 50\neta = 0.5, 0.01\ndemean = false\n";
        let cfg = ConfigOverrides::parse(text)
            .unwrap()
            .resolve(EnvKind::Classification, Method::Iterative)
            .unwrap();
        assert_eq!(cfg.env, EnvKind::Pricing);
        assert_eq!(cfg.method, Method::Rrm);
        assert_eq!(cfg.n, 2000);
        assert_eq!(cfg.t_max, 50);
        assert_eq!(cfg.eta, vec![0.5, 0.01]);
        assert!(!cfg.demean);
        assert_eq!(cfg.alpha, DEFAULT_ALPHA);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = ConfigOverrides::parse("env = pricing\nn: 5\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 2, .. }));
        let err = ConfigOverrides::parse("n = many\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 1, .. }));
        let err = ConfigOverrides::parse("colour = blue\n").unwrap_err();
        assert_eq!(err, ConfigError::UnknownKey("colour".into()));
    }

    #[test]
    fn flags_override_file() {
        let file = ConfigOverrides::parse("n = 10\nseed = 3\n").unwrap();
        let flags = ConfigOverrides { n: Some(20), ..Default::default() };
        let cfg = file.merge(flags).resolve(EnvKind::Pricing, Method::Naive).unwrap();
        assert_eq!((cfg.n, cfg.seed), (20, 3));
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            prop_oneof![Just(EnvKind::Classification), Just(EnvKind::Pricing)],
            prop::sample::select(Method::ALL.to_vec()),
            4usize..100_000,
            1usize..5000,
            prop_oneof![
                (1e-6f64..10.0).prop_map(|e| vec![e]),
                (1e-6f64..10.0, 1e-6f64..10.0).prop_map(|(a, b)| vec![a, b])
            ],
            (1e-6f64..100.0, 1e-3f64..0.499, any::<u64>(), any::<bool>(), 2usize..1_000_000),
        )
            .prop_map(|(env, method, n, t_max, eta, (c, alpha, seed, demean, eval_reps))| RunConfig {
                env,
                method,
                n,
                t_max,
                eta,
                c,
                alpha,
                seed,
                demean,
                eval_reps,
                exec: ExecMode::Sequential,
            })
    }

    proptest! {
        #[test]
        fn kv_round_trip(cfg in arb_config()) {
            let text = cfg.to_kv_string();
            let back = ConfigOverrides::parse(&text).unwrap().resolve(EnvKind::Pricing, Method::Rrm).unwrap();
            prop_assert_eq!(back, cfg);
        }

        #[test]
        fn json_round_trip(cfg in arb_config()) {
            let s = serde_json::to_string(&cfg).unwrap();
            let back: RunConfig = serde_json::from_str(&s).unwrap();
            prop_assert_eq!(back, cfg);
        }
    }
}
