//! Command-line front end: single runs, reproduction suites and diagnostic checks.
//!
//! Every command writes an [`OutputBundle`] under `--out-dir` and prints a
//! summary table. Exit codes: 0 on success, 1 for configuration errors,
//! 2 for runtime errors.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{parse_eta, ConfigOverrides, RunConfig};
use crate::env::{self, Environment};
use crate::error::{ConfigError, Error, Result};
use crate::gradest::{design_perturbations, estimate_gradient, fd_oracle, FdGradient};
use crate::learn::{self, experiment_batch, FullInfoSolution, GridSpec};
use crate::metrics::{policy_values, regret_bound, summary_from_values, EvalPanel, RunSummary};
use crate::rng::{Purpose, SeedStream};
use crate::types::{EnvKind, Method, PolicyParams, Trajectory};

#[derive(Debug, Parser)]
#[command(name = "stratlearn", version, about = "Learn treatment-allocation policies against strategic agents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one method on one environment.
    Run(CommonArgs),
    /// Reproduce a results table or the data behind a convergence figure.
    Reproduce {
        target: Target,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Include repeated risk minimization in `fig2`.
        #[arg(long)]
        include_rrm: bool,
    },
    /// Diagnostic checks of the gradient estimator and the regret bound.
    Check {
        what: CheckKind,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long)]
        seeds: Option<usize>,
        /// Batch sizes for `gradients`, comma separated.
        #[arg(long, default_value = "1000,10000,100000")]
        ns: String,
        /// Policy at which `gradients` is evaluated, comma separated.
        #[arg(long)]
        beta: Option<String>,
        /// Step of the finite-difference reference in `gradients`.
        #[arg(long, default_value_t = 1e-3)]
        h_fd: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Target {
    Table1,
    Table2,
    Fig1,
    Fig2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    Gradients,
    RegretBound,
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Flat `key = value` config file; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub method: Option<String>,
    /// Agents per batch.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of steps.
    #[arg(long = "T")]
    pub t_max: Option<usize>,
    /// Step size, scalar or comma-separated per coordinate.
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, action = ArgAction::Set, value_name = "BOOL")]
    pub demean: Option<bool>,
    #[arg(long)]
    pub eval_reps: Option<usize>,
    /// sequential | parallel
    #[arg(long)]
    pub exec: Option<String>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

impl CommonArgs {
    /// Config file values overlaid with flag values.
    pub fn overrides(&self) -> Result<ConfigOverrides> {
        let file = match &self.config {
            Some(path) => ConfigOverrides::from_file(path)?,
            None => ConfigOverrides::default(),
        };
        let mut flags = ConfigOverrides::default();
        if let Some(v) = &self.env {
            flags.set("env", v)?;
        }
        if let Some(v) = &self.method {
            flags.set("method", v)?;
        }
        if let Some(v) = &self.eta {
            flags.eta = Some(parse_eta(v)?);
        }
        if let Some(v) = &self.exec {
            flags.set("exec", v)?;
        }
        flags.n = self.n;
        flags.t_max = self.t_max;
        flags.c = self.c;
        flags.alpha = self.alpha;
        flags.seed = self.seed;
        flags.demean = self.demean;
        flags.eval_reps = self.eval_reps;
        Ok(file.merge(flags))
    }
}

/// Paths written by one command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputBundle {
    /// One file per run, in run order.
    pub trajectory_csv: Vec<PathBuf>,
    pub summary_json: PathBuf,
    pub figure_data_csv: PathBuf,
}

/// Medians across seeds for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    pub seeds: usize,
    pub median_avg_objective: f64,
    pub median_avg_mse: Option<f64>,
    pub median_avg_regret: f64,
    pub median_terminal_error: f64,
    pub oscillating_runs: usize,
    pub diverged_runs: usize,
}

/// Several methods over several seeds, evaluated on one shared panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub env: EnvKind,
    pub config: RunConfig,
    pub solution: FullInfoSolution,
    pub summaries: Vec<RunSummary>,
    pub table: Vec<MethodRow>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
}

impl SuiteResult {
    pub fn row(&self, method: Method) -> Option<&MethodRow> {
        self.table.iter().find(|r| r.method == method)
    }

    pub fn runs(&self, method: Method) -> impl Iterator<Item = (&Trajectory, &RunSummary)> {
        self.trajectories
            .iter()
            .zip(&self.summaries)
            .filter(move |(t, _)| t.method == method)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn seed_list(first: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| first + i).collect()
}

/// Runs `methods` for each seed. The evaluation panel and the full-information
/// solution are drawn once from `base.seed` and shared by every run.
pub fn run_suite(base: &RunConfig, methods: &[Method], seeds: &[u64]) -> Result<SuiteResult> {
    base.validate()?;
    let environment = env::build(base.env);
    let envr: &dyn Environment = environment.as_ref();
    let panel = EvalPanel::sample(envr, base.eval_reps, base.seed, base.exec);
    let solution = learn::solve_full_info_on(envr, &panel, &GridSpec::default(), base.exec)?;
    let reference = solution.pi_star;
    let mut trajectories = Vec::new();
    let mut summaries = Vec::new();
    for &method in methods {
        for &seed in seeds {
            let cfg = RunConfig {
                method,
                seed,
                ..base.clone()
            };
            let mut traj = learn::run_method(envr, &cfg, Some(&solution))?;
            let values = policy_values(envr, &traj, &panel, cfg.exec)?;
            for (step, v) in traj.steps.iter_mut().zip(&values) {
                step.eval_pi = Some(*v);
            }
            summaries.push(summary_from_values(&traj, &values, reference, &solution.beta_star)?);
            trajectories.push(traj);
        }
    }
    let table = methods
        .iter()
        .map(|&method| {
            let rows: Vec<&RunSummary> = summaries.iter().filter(|s| s.method == method).collect();
            let col = |f: &dyn Fn(&RunSummary) -> f64| median(&rows.iter().map(|s| f(s)).collect::<Vec<_>>());
            MethodRow {
                method,
                seeds: rows.len(),
                median_avg_objective: col(&|s| s.avg_objective),
                median_avg_mse: (base.env == EnvKind::Classification).then(|| col(&|s| -s.avg_objective)),
                median_avg_regret: col(&|s| s.avg_regret),
                median_terminal_error: col(&|s| s.terminal_error),
                oscillating_runs: rows.iter().filter(|s| s.oscillating).count(),
                diverged_runs: rows.iter().filter(|s| s.diverged).count(),
            }
        })
        .collect();
    Ok(SuiteResult {
        env: base.env,
        config: base.clone(),
        solution,
        summaries,
        table,
        trajectories,
    })
}

/// One gradient estimate compared with the finite-difference reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientRow {
    pub n: usize,
    pub seed: u64,
    pub gamma_hat: Vec<f64>,
    pub abs_error: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientLevel {
    pub n: usize,
    pub median_abs_error: f64,
    pub median_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub env: EnvKind,
    pub beta: PolicyParams,
    pub c: f64,
    pub alpha: f64,
    pub reference: FdGradient,
    pub rows: Vec<GradientRow>,
    pub levels: Vec<GradientLevel>,
}

/// Compares perturbation-experiment gradient estimates at `beta` with a
/// finite-difference reference, for each batch size in `ns` and each seed.
pub fn gradient_check(
    cfg: &RunConfig,
    beta: &PolicyParams,
    ns: &[usize],
    seeds: &[u64],
    h_fd: f64,
) -> Result<GradientCheck> {
    cfg.validate()?;
    let environment = env::build(cfg.env);
    let envr: &dyn Environment = environment.as_ref();
    if beta.k() != envr.k() {
        return Err(ConfigError::invalid("beta", format!("expected {} components, got {}", envr.k(), beta.k())).into());
    }
    let panel = EvalPanel::sample(envr, cfg.eval_reps, cfg.seed, cfg.exec);
    let reference = fd_oracle(envr, beta, h_fd, &panel, cfg.exec)?;
    let ref_norm = reference.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let mut rows = Vec::new();
    for &n in ns {
        if n < 2 * envr.k() {
            return Err(ConfigError::invalid("ns", format!("batch size {n} is below 2K")).into());
        }
        for &seed in seeds {
            let design = design_perturbations(n, envr.k(), cfg.c, cfg.alpha, &SeedStream::new(seed, Purpose::Perturbation, 0));
            let types = env::sample_types(envr, n, &SeedStream::new(seed, Purpose::Types, 0), cfg.exec);
            let batch = experiment_batch(envr, beta, &design, &types, cfg.exec)?;
            let est = estimate_gradient(&design, &batch.pi(), cfg.demean)?;
            let abs_error = est
                .gamma_hat
                .iter()
                .zip(&reference.grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            rows.push(GradientRow {
                n,
                seed,
                gamma_hat: est.gamma_hat,
                abs_error,
                rel_error: abs_error / ref_norm,
            });
        }
    }
    let levels = ns
        .iter()
        .map(|&n| {
            let at: Vec<&GradientRow> = rows.iter().filter(|r| r.n == n).collect();
            GradientLevel {
                n,
                median_abs_error: median(&at.iter().map(|r| r.abs_error).collect::<Vec<_>>()),
                median_rel_error: median(&at.iter().map(|r| r.rel_error).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(GradientCheck {
        env: cfg.env,
        beta: beta.clone(),
        c: cfg.c,
        alpha: cfg.alpha,
        reference,
        rows,
        levels,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub seed: u64,
    pub weighted_regret: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Weighted regret of iterative runs against `eta_max * M_hat^2 / 2`.
pub fn bound_rows(suite: &SuiteResult) -> Vec<BoundRow> {
    suite
        .runs(Method::Iterative)
        .map(|(traj, summary)| {
            let bound = regret_bound(traj, suite.config.eta_max()).unwrap_or(f64::NAN);
            BoundRow {
                seed: summary.seed,
                weighted_regret: summary.weighted_regret,
                bound,
                holds: summary.weighted_regret <= bound,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Trajectory CSV: `t, beta_*, gamma_hat_*, batch_mean_pi, eval_pi`; missing values are empty.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let k = traj.k();
    let mut out = String::from("t");
    for j in 0..k {
        let _ = write!(out, ",beta_{j}");
    }
    for j in 0..k {
        let _ = write!(out, ",gamma_hat_{j}");
    }
    out.push_str(",batch_mean_pi,eval_pi\n");
    for s in &traj.steps {
        let _ = write!(out, "{}", s.t);
        for b in s.beta.as_slice() {
            let _ = write!(out, ",{b}");
        }
        for j in 0..k {
            let _ = write!(out, ",{}", fmt_opt(s.gamma_hat.as_ref().map(|g| g[j])));
        }
        let _ = writeln!(out, ",{},{}", s.batch_mean_pi, fmt_opt(s.eval_pi));
    }
    out
}

/// Long-format per-step policy components: `method, seed, t, beta_*`.
pub fn figure_csv(trajs: &[Trajectory]) -> String {
    let k = trajs.iter().map(Trajectory::k).max().unwrap_or(0);
    let mut out = String::from("method,seed,t");
    for j in 0..k {
        let _ = write!(out, ",beta_{j}");
    }
    out.push('\n');
    for traj in trajs {
        for s in &traj.steps {
            let _ = write!(out, "{},{},{}", traj.method, traj.seed, s.t);
            for b in s.beta.as_slice() {
                let _ = write!(out, ",{b}");
            }
            out.push('\n');
        }
    }
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents)?;
    Ok(())
}

fn write_bundle<S: Serialize>(
    out_dir: &Path,
    stem: &str,
    trajs: &[Trajectory],
    summary: &S,
    figure: &str,
) -> Result<OutputBundle> {
    fs::create_dir_all(out_dir)?;
    let mut paths = Vec::new();
    for traj in trajs {
        let path = out_dir.join(format!("{stem}_{}_seed{}_trajectory.csv", traj.method, traj.seed));
        write_file(&path, &trajectory_csv(traj))?;
        paths.push(path);
    }
    let summary_json = out_dir.join(format!("{stem}_summary.json"));
    write_file(&summary_json, &(serde_json::to_string_pretty(summary)? + "\n"))?;
    let figure_data_csv = out_dir.join(format!("{stem}_figure.csv"));
    write_file(&figure_data_csv, figure)?;
    Ok(OutputBundle {
        trajectory_csv: paths,
        summary_json,
        figure_data_csv,
    })
}

pub fn format_suite(suite: &SuiteResult) -> String {
    let mut out = String::new();
    let b = suite.solution.beta_star.as_slice();
    let _ = writeln!(
        out,
        "{} | beta* = {:?} | Pi* = {:.4} (se {:.4})",
        suite.env, b, suite.solution.pi_star, suite.solution.pi_star_se
    );
    let _ = writeln!(
        out,
        "{:<32} {:>6} {:>12} {:>12} {:>12} {:>12} {:>5} {:>5}",
        "method", "seeds", "avg_obj", "avg_mse", "avg_regret", "term_err", "osc", "div"
    );
    for r in &suite.table {
        let mse = r.median_avg_mse.map(|m| format!("{m:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            out,
            "{:<32} {:>6} {:>12.4} {:>12} {:>12.4} {:>12.6} {:>5} {:>5}",
            r.method.label(),
            r.seeds,
            r.median_avg_objective,
            mse,
            r.median_avg_regret,
            r.median_terminal_error,
            r.oscillating_runs,
            r.diverged_runs
        );
    }
    out
}

fn parse_list<T: std::str::FromStr>(field: &'static str, v: &str) -> std::result::Result<Vec<T>, ConfigError> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| ConfigError::invalid(field, format!("cannot parse `{}`", p.trim())))
        })
        .collect()
}

fn require_env(o: &ConfigOverrides, fixed: EnvKind) -> Result<()> {
    match o.env {
        Some(e) if e != fixed => Err(ConfigError::invalid("env", format!("this command runs on {fixed}, got {e}")).into()),
        _ => Ok(()),
    }
}

fn positive_seeds(count: usize) -> Result<usize> {
    if count == 0 {
        return Err(ConfigError::invalid("seeds", "must be at least 1").into());
    }
    Ok(count)
}

#[derive(Serialize)]
struct RunReport<'a> {
    command: &'a str,
    config: &'a RunConfig,
    beta_star: &'a PolicyParams,
    pi_star: f64,
    pi_star_se: f64,
    summaries: &'a [RunSummary],
    table: &'a [MethodRow],
}

fn suite_report<'a>(command: &'a str, suite: &'a SuiteResult) -> RunReport<'a> {
    RunReport {
        command,
        config: &suite.config,
        beta_star: &suite.solution.beta_star,
        pi_star: suite.solution.pi_star,
        pi_star_se: suite.solution.pi_star_se,
        summaries: &suite.summaries,
        table: &suite.table,
    }
}

/// Executes a parsed command line, returning the bundle and the printed report.
pub fn execute(cli: &Cli) -> Result<(OutputBundle, String)> {
    match &cli.command {
        Command::Run(common) => {
            let o = common.overrides()?;
            let cfg = o.resolve(EnvKind::Classification, Method::Iterative)?;
            let suite = run_suite(&cfg, &[cfg.method], &[cfg.seed])?;
            let stem = format!("run_{}", cfg.env);
            let bundle = write_bundle(
                &common.out_dir,
                &stem,
                &suite.trajectories,
                &suite_report("run", &suite),
                &figure_csv(&suite.trajectories),
            )?;
            Ok((bundle, format_suite(&suite)))
        }
        Command::Reproduce {
            target,
            common,
            seeds,
            include_rrm,
        } => {
            let o = common.overrides()?;
            let (env, name) = match target {
                Target::Table1 => (EnvKind::Classification, "table1"),
                Target::Fig1 => (EnvKind::Classification, "fig1"),
                Target::Table2 => (EnvKind::Pricing, "table2"),
                Target::Fig2 => (EnvKind::Pricing, "fig2"),
            };
            require_env(&o, env)?;
            let cfg = o.resolve(env, Method::Iterative)?;
            let methods: Vec<Method> = Method::ALL
                .iter()
                .copied()
                .filter(|m| *target != Target::Fig2 || *include_rrm || *m != Method::Rrm)
                .collect();
            let suite = run_suite(&cfg, &methods, &seed_list(cfg.seed, positive_seeds(*seeds)?))?;
            let bundle = write_bundle(
                &common.out_dir,
                name,
                &suite.trajectories,
                &suite_report(name, &suite),
                &figure_csv(&suite.trajectories),
            )?;
            Ok((bundle, format_suite(&suite)))
        }
        Command::Check {
            what: CheckKind::Gradients,
            common,
            seeds,
            ns,
            beta,
            h_fd,
        } => {
            let o = common.overrides()?;
            let cfg = o.resolve(EnvKind::Classification, Method::Iterative)?;
            let beta = match beta {
                Some(v) => PolicyParams::new(parse_list("beta", v)?)?,
                None => match cfg.env {
                    EnvKind::Classification => PolicyParams::new(vec![0.0, 0.5])?,
                    EnvKind::Pricing => PolicyParams::new(vec![8.0, 0.1])?,
                },
            };
            let ns: Vec<usize> = parse_list("ns", ns)?;
            let seeds = seed_list(cfg.seed, positive_seeds(seeds.unwrap_or(20))?);
            let check = gradient_check(&cfg, &beta, &ns, &seeds, *h_fd)?;
            let mut figure = String::from("n,seed");
            for j in 0..beta.k() {
                let _ = write!(figure, ",gamma_hat_{j}");
            }
            figure.push_str(",abs_error,rel_error\n");
            for r in &check.rows {
                let _ = write!(figure, "{},{}", r.n, r.seed);
                for g in &r.gamma_hat {
                    let _ = write!(figure, ",{g}");
                }
                let _ = writeln!(figure, ",{},{}", r.abs_error, r.rel_error);
            }
            let bundle = write_bundle(&common.out_dir, "check_gradients", &[], &check, &figure)?;
            let mut text = format!(
                "{} | beta = {:?} | reference gradient {:?} (se {:?})\n{:>10} {:>16} {:>16}\n",
                check.env,
                check.beta.as_slice(),
                check.reference.grad,
                check.reference.se,
                "n",
                "median_abs_err",
                "median_rel_err"
            );
            for l in &check.levels {
                let _ = writeln!(text, "{:>10} {:>16.6} {:>16.4}", l.n, l.median_abs_error, l.median_rel_error);
            }
            Ok((bundle, text))
        }
        Command::Check {
            what: CheckKind::RegretBound,
            common,
            seeds,
            ..
        } => {
            let o = common.overrides()?;
            let cfg = o.resolve(EnvKind::Classification, Method::Iterative)?;
            let seeds = seed_list(cfg.seed, positive_seeds(seeds.unwrap_or(10))?);
            let suite = run_suite(&cfg, &[Method::Iterative], &seeds)?;
            let rows = bound_rows(&suite);
            let mut figure = String::from("seed,weighted_regret,bound,holds\n");
            let mut text = format!("{:>8} {:>16} {:>16} {:>6}\n", "seed", "weighted_regret", "bound", "holds");
            for r in &rows {
                let _ = writeln!(figure, "{},{},{},{}", r.seed, r.weighted_regret, r.bound, r.holds);
                let _ = writeln!(text, "{:>8} {:>16.6} {:>16.6} {:>6}", r.seed, r.weighted_regret, r.bound, r.holds);
            }
            #[derive(Serialize)]
            struct BoundReport<'a> {
                #[serde(flatten)]
                run: RunReport<'a>,
                bound: &'a [BoundRow],
            }
            let report = BoundReport {
                run: suite_report("check regret-bound", &suite),
                bound: &rows,
            };
            let bundle = write_bundle(&common.out_dir, "check_regret_bound", &suite.trajectories, &report, &figure)?;
            Ok((bundle, text))
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run_command<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok((bundle, text)) => {
            // A closed stdout (e.g. piped into `head`) is not an error for the run itself.
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(text.as_bytes());
            for p in &bundle.trajectory_csv {
                let _ = writeln!(out, "wrote {}", p.display());
            }
            let _ = writeln!(out, "wrote {}", bundle.summary_json.display());
            let _ = writeln!(out, "wrote {}", bundle.figure_data_csv.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        1
    } else {
        2
    }
}
