use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use helloc_core::config::{EpsilonRule, EstimatorKind, ModelConfig, RunConfig};
use helloc_core::divergences::hellinger_sq;
use helloc_core::estimation::{build_cover, mle_continuous, mle_discretized, MleConfig, MleMethod, MleResult};
use helloc_core::harness::{emit_csv, emit_svg, fit_slope, run_scaling, ScalingOptions, SlopeAxis};
use helloc_core::io::{read_dataset, write_dataset};
use helloc_core::localization::{full_report, LocalizationConfig};
use helloc_core::model::simulate_dataset;
use helloc_core::verify::{run_suite, SUITES};
use helloc_core::{derive_stream, Error, ModelSpec, Result, TrajectoryDataset};

const DEFAULT_M: usize = 64;

#[derive(Parser)]
#[command(name = "helloc", version, about = "Multi-trajectory MLE, Fisher geometry and Hellinger localization experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "HELLOC_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write them in the line-oriented text format.
    Simulate(SimulateArgs),
    /// Fit the MLE to a trajectory file or to freshly simulated data.
    Fit(FitArgs),
    /// Run a scaling experiment over an (m, T) grid and write CSV and SVG.
    Scaling(ScalingArgs),
    /// Fit, then report the localization predicates around the estimate.
    Localize(LocalizeArgs),
    /// Squared Hellinger distance between the path laws at two parameters.
    Hellinger(HellingerArgs),
    /// Run the invariant suites.
    Verify(VerifyArgs),
}

#[derive(Args)]
struct Common {
    /// YAML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model family when no config is given: two_state, mixture, regression, sin_glm, attention.
    #[arg(long)]
    model: Option<String>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    /// Number of trajectories.
    #[arg(long)]
    m: Option<usize>,
    /// Horizon (overrides the config).
    #[arg(long = "T")]
    horizon: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Continuous,
    Discretized,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: Common,
    /// Trajectory file; simulated from the config when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of trajectories to simulate when no data file is given.
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    /// Cover resolution for the discretized estimator: `auto` or a number.
    #[arg(long)]
    epsilon: Option<String>,
}

#[derive(Args)]
struct ScalingArgs {
    #[command(flatten)]
    common: Common,
    /// Replicates per cell (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Args)]
struct LocalizeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long = "T")]
    horizon: Option<usize>,
}

#[derive(Args)]
struct HellingerArgs {
    #[command(flatten)]
    common: Common,
    /// First parameter, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    theta0: String,
    /// Second parameter, comma-separated.
    #[arg(long, allow_hyphen_values = true)]
    theta1: String,
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Monte Carlo paths when no closed form exists.
    #[arg(long, default_value_t = 100_000)]
    n_mc: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Suite name, or `all`.
    #[arg(default_value = "all")]
    suite: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::NonConvergence(_) | Error::Quadrature(_) | Error::NonFiniteLoglik { .. } => 3,
        Error::Io { .. } | Error::Csv { .. } | Error::Parse { .. } => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Scaling(a) => cmd_scaling(a),
        Command::Localize(a) => cmd_localize(a),
        Command::Hellinger(a) => cmd_hellinger(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match (&common.config, &common.model) {
        (Some(path), None) => RunConfig::load(path)?,
        (None, Some(family)) => RunConfig {
            model: ModelConfig::desk_default(family)?,
            experiment: Default::default(),
            seed: 0,
            out_dir: PathBuf::from("out"),
        },
        (Some(_), Some(_)) => {
            return Err(Error::Config {
                path: "--model".into(),
                msg: "give either --config or --model, not both".into(),
            })
        }
        (None, None) => {
            return Err(Error::Config {
                path: "--config".into(),
                msg: "a config file or --model is required".into(),
            })
        }
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn with_horizon(cfg: &RunConfig, horizon: Option<usize>) -> Result<ModelConfig> {
    match horizon {
        Some(t) if t < 2 => Err(Error::Config {
            path: "--T".into(),
            msg: "horizon must be at least 2".into(),
        }),
        Some(t) => Ok(cfg.model.with_horizon(t)),
        None => Ok(cfg.model.clone()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

fn obtain_data(cfg: &RunConfig, model: &dyn ModelSpec, data: Option<&Path>, m: Option<usize>) -> Result<TrajectoryDataset> {
    match data {
        Some(path) => {
            let d = read_dataset(path)?;
            if d.model_id != model.model_id() || d.horizon != model.horizon() {
                return Err(Error::Config {
                    path: "--data".into(),
                    msg: format!(
                        "dataset is {} with T={}, but the model is {} with T={}",
                        d.model_id,
                        d.horizon,
                        model.model_id(),
                        model.horizon()
                    ),
                });
            }
            for z in &d.trajectories {
                model.check_trajectory(z)?;
            }
            Ok(d)
        }
        None => {
            let m = m.or(cfg.experiment.m).unwrap_or(DEFAULT_M);
            simulate_dataset(model, &cfg.model.theta_star(), m, cfg.seed)
        }
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let model = with_horizon(&cfg, a.horizon)?.build()?;
    let m = a.m.or(cfg.experiment.m).unwrap_or(DEFAULT_M);
    let data = simulate_dataset(model.as_ref(), &cfg.model.theta_star(), m, cfg.seed)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("trajectories.txt");
    write_dataset(&data, &path)?;
    println!("wrote {m} trajectories of length {} to {}", model.trajectory_len(), path.display());
    Ok(0)
}

fn parse_epsilon(s: &str) -> Result<EpsilonRule> {
    if s == "auto" {
        return Ok(EpsilonRule::Auto);
    }
    match s.parse::<f64>() {
        Ok(e) if e > 0.0 && e.is_finite() => Ok(EpsilonRule::Fixed(e)),
        _ => Err(Error::Config {
            path: "--epsilon".into(),
            msg: format!("expected `auto` or a positive number, got {s:?}"),
        }),
    }
}

fn fit_csv(model: &dyn ModelSpec, data: &TrajectoryDataset, fit: &MleResult) -> String {
    let mut out = String::from("model_id,m,T,method,converged,loglik,theta_hat,epsilon,n_starts,iterations,grad_norm\n");
    let _ = writeln!(
        out,
        "{},{},{},{:?},{},{:?},\"{}\",{:?},{},{},{:?}",
        model.model_id(),
        data.m(),
        data.horizon,
        fit.method,
        fit.converged,
        fit.loglik,
        fmt_vec(fit.theta_hat.values()),
        fit.epsilon,
        fit.n_starts,
        fit.iterations,
        fit.grad_norm,
    );
    out
}

fn cmd_fit(a: FitArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let model = with_horizon(&cfg, a.horizon)?.build()?;
    let data = obtain_data(&cfg, model.as_ref(), a.data.as_deref(), a.m)?;
    let estimator = match a.estimator {
        Some(EstimatorArg::Continuous) => EstimatorKind::Continuous,
        Some(EstimatorArg::Discretized) => EstimatorKind::Discretized,
        None => cfg.experiment.estimator,
    };
    let rule = match &a.epsilon {
        Some(s) => parse_epsilon(s)?,
        None => cfg.experiment.epsilon_rule,
    };
    let fit = match estimator {
        EstimatorKind::Continuous => mle_continuous(
            model.as_ref(),
            &data,
            &MleConfig {
                seed: cfg.seed,
                ..MleConfig::default()
            },
        )?,
        EstimatorKind::Discretized => {
            let i_max = model.fisher_upper_bound().ok_or_else(|| Error::Config {
                path: "experiment.estimator".into(),
                msg: format!("{} has no uniform information bound for a cover", model.model_id()),
            })?;
            let eps = rule.epsilon(data.m(), cfg.experiment.delta);
            let cover = build_cover(model.domain(), &i_max, eps)?;
            mle_discretized(model.as_ref(), &data, &cover)?
        }
    };
    println!("model_id = {}", model.model_id());
    println!("theta_hat = {}", fmt_vec(fit.theta_hat.values()));
    println!("loglik = {:?}", fit.loglik);
    println!("method = {:?}", fit.method);
    if fit.method == MleMethod::Discretized {
        println!("epsilon = {:?}", fit.epsilon);
    }
    println!("converged = {}", fit.converged);
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("fit.csv"), &fit_csv(model.as_ref(), &data, &fit))?;
    if fit.converged {
        Ok(0)
    } else {
        eprintln!("warning: estimator flagged non-convergence (projected gradient {:.3e})", fit.grad_norm);
        Ok(3)
    }
}

fn cmd_scaling(a: ScalingArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let grid = cfg.grid();
    let n_reps = a.reps.unwrap_or(cfg.experiment.n_reps);
    let opts = ScalingOptions {
        estimator: cfg.experiment.estimator,
        epsilon_rule: cfg.experiment.epsilon_rule,
        delta: cfg.experiment.delta,
        record_timing: cfg.experiment.record_timing,
        predicate_subsample: cfg.experiment.predicate_subsample.unwrap_or(ScalingOptions::default().predicate_subsample),
        ..ScalingOptions::default()
    };
    let run = run_scaling(&cfg.model, &grid, n_reps, cfg.seed, &opts)?;
    create_dir(&cfg.out_dir)?;
    let csv = cfg.out_dir.join("scaling.csv");
    emit_csv(&run.records, &csv)?;
    emit_svg(&run.records, &cfg.out_dir.join("scaling.svg"))?;
    println!("wrote {} records to {}", run.records.len(), csv.display());
    match fit_slope(&run.records, SlopeAxis::MT) {
        Ok(fit) => println!("slope vs mT = {:.4} (stderr {:.4}, r2 {:.4})", fit.slope, fit.stderr, fit.r2),
        Err(e) => println!("slope vs mT unavailable: {e}"),
    }
    for p in &run.predicates {
        println!(
            "m={} T={}: radius predicate {}/{}, FI-radius predicate {}/{}",
            p.m, p.horizon, p.radius_pass, p.n_checked, p.fi_radius_pass, p.n_checked
        );
    }
    Ok(0)
}

fn cmd_localize(a: LocalizeArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let model = with_horizon(&cfg, a.horizon)?.build()?;
    let data = obtain_data(&cfg, model.as_ref(), a.data.as_deref(), a.m)?;
    let lc = LocalizationConfig {
        seed: cfg.seed,
        mle: MleConfig {
            seed: cfg.seed,
            ..MleConfig::default()
        },
        ..LocalizationConfig::default()
    };
    let report = full_report(model.as_ref(), &data, &cfg.model.theta_star(), &lc)?;
    let text = report.render();
    print!("{text}");
    create_dir(&cfg.out_dir)?;
    write_file(&cfg.out_dir.join("localization.txt"), &text)?;
    Ok(0)
}

fn parse_theta(s: &str, flag: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim().parse::<f64>().map_err(|e| Error::Config {
                path: flag.into(),
                msg: format!("bad coordinate {t:?}: {e}"),
            })
        })
        .collect()
}

fn cmd_hellinger(a: HellingerArgs) -> Result<u8> {
    let cfg = load_config(&a.common)?;
    let theta0 = parse_theta(&a.theta0, "--theta0")?;
    let theta1 = parse_theta(&a.theta1, "--theta1")?;
    let model = with_horizon(&cfg, a.horizon)?.with_theta(&theta0)?.build()?;
    let est = hellinger_sq(model.as_ref(), &theta0, &theta1, a.n_mc, derive_stream(cfg.seed, 0x4E11))?;
    println!("hellinger_sq = {:?}", est.value);
    println!("std_error = {:?}", est.std_error);
    println!("method = {:?}", est.method);
    if est.n_samples > 0 {
        println!("n_samples = {}", est.n_samples);
    }
    Ok(0)
}

fn cmd_verify(a: VerifyArgs) -> Result<u8> {
    if a.suite != "all" && !SUITES.contains(&a.suite.as_str()) {
        return Err(Error::Config {
            path: "suite".into(),
            msg: format!("unknown suite {:?}; expected one of {} or all", a.suite, SUITES.join(", ")),
        });
    }
    let results = run_suite(&a.suite, a.seed)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    for r in &results {
        println!("{} {}.{}: {}", if r.passed { "PASS" } else { "FAIL" }, r.suite, r.name, r.detail);
    }
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { 0 } else { 1 })
}
