use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tensorreg::bounds::{self, BoundInputs, BoundNorm, DualNormKind, BoundReport};
use tensorreg::cv::{cross_validate, CvSpec, LambdaGrid, Metric, SplitMode};
use tensorreg::data::{covariance_features, gen_toy_regression, stack_feature_tensor, Setup, ToyRegressionSpec, DEFAULT_NOISE_STD};
use tensorreg::experiment::{self, ExperimentConfig, Method};
use tensorreg::io::{self, DatasetLayout};
use tensorreg::solvers::{fit, BetaRule, FitReport, NormKind, SolverConfig};
use tensorreg::{Error, Result};

/// Tensor regression with overlapped, latent and scaled latent trace norms.
#[derive(Debug, Parser)]
#[command(name = "tensorreg", version, about)]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration: an experiment config for `experiment`, a solver
    /// config for `fit` and `cv`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads, 0 for one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic train/validation/test split and its true weight tensor.
    Gen(GenArgs),
    /// Fit one model; writes model.tmdl and report.json.
    Fit(FitArgs),
    /// Select λ on a grid; writes cv.csv and the selected model.
    Cv(CvArgs),
    /// Run the synthetic study; writes tidy, aggregate and timing CSVs.
    Experiment(ExperimentArgs),
    /// Evaluate the excess-risk bounds; writes bounds.csv.
    Bounds(BoundsArgs),
    /// Monte Carlo estimate of the expected dual norm; writes dualnorm.csv.
    Dualnorm(DualnormArgs),
    /// Covariance features of C×T signal matrices, stacked into one tensor.
    Features(FeaturesArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long, default_value = "A")]
    setup: Setup,
    #[arg(long, default_value_t = 200)]
    m_train: usize,
    #[arg(long, default_value_t = 200)]
    m_val: usize,
    #[arg(long, default_value_t = 1000)]
    m_test: usize,
    #[arg(long, default_value_t = DEFAULT_NOISE_STD)]
    noise_std: f64,
    /// Store one tensor file per sample instead of one stacked file.
    #[arg(long)]
    per_sample: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BetaRuleArg {
    Fixed,
    LambdaScaled,
}

#[derive(Debug, Args)]
struct SolverArgs {
    /// overlapped, scaled_overlapped, latent, scaled_latent, mode<k> (1-based) or ridge.
    #[arg(long, default_value = "latent")]
    norm: String,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    beta_rule: Option<BetaRuleArg>,
    /// Relative duality-gap tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct FitArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct CvArgs {
    #[arg(long)]
    train: PathBuf,
    /// Validation dataset for holdout selection.
    #[arg(long, conflicts_with = "folds")]
    val: Option<PathBuf>,
    /// Use k-fold selection on the training set.
    #[arg(long)]
    folds: Option<usize>,
    /// Additive grid 0.01, 0.11, …, 99.91 instead of 30 log-spaced points.
    #[arg(long, conflicts_with = "lambdas")]
    full_grid: bool,
    /// Explicit comma-separated λ values.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long, value_delimiter = ',')]
    setups: Option<Vec<Setup>>,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    full_grid: bool,
    /// Also write a gnuplot script.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(long, value_delimiter = ',', default_value = "10,10,10")]
    shape: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3,3,3")]
    ranks: Vec<usize>,
    /// One or more sample counts.
    #[arg(long, value_delimiter = ',', default_value = "100")]
    samples: Vec<usize>,
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    #[arg(long, default_value_t = 1.0)]
    lipschitz: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    #[arg(long, default_value_t = 1.0)]
    c_log: f64,
}

#[derive(Debug, Args)]
struct DualnormArgs {
    #[arg(long, value_delimiter = ',', default_value = "4,10,10")]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 50)]
    samples: usize,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// overlapped, latent or scaled; all three when omitted.
    #[arg(long)]
    which: Option<DualNormKind>,
}

#[derive(Debug, Args)]
struct FeaturesArgs {
    /// Two-way tensor files holding channel × time signals.
    #[arg(long, num_args = 1.., required = true)]
    input: Vec<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size worker pool: {e}")))?;
    }
    let seed = cli.seed;
    match cli.command {
        Command::Gen(a) => {
            reject_config(&cli.config, "gen")?;
            gen(a, seed.unwrap_or(0), &cli.out)
        }
        Command::Fit(a) => fit_cmd(a, seed, cli.config.as_deref(), &cli.out),
        Command::Cv(a) => cv_cmd(a, seed, cli.config.as_deref(), &cli.out),
        Command::Experiment(a) => experiment_cmd(a, seed, cli.config.as_deref(), &cli.out, cli.threads),
        Command::Bounds(a) => {
            reject_config(&cli.config, "bounds")?;
            bounds_cmd(a, &cli.out)
        }
        Command::Dualnorm(a) => {
            reject_config(&cli.config, "dualnorm")?;
            dualnorm_cmd(a, seed.unwrap_or(0), &cli.out)
        }
        Command::Features(a) => {
            reject_config(&cli.config, "features")?;
            features_cmd(a, &cli.out)
        }
    }
}

fn reject_config(config: &Option<PathBuf>, command: &str) -> Result<()> {
    match config {
        Some(_) => Err(Error::Config(format!("`{command}` takes no --config file"))),
        None => Ok(()),
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn parse_norm(name: &str, shape: &[usize]) -> Result<NormKind> {
    let norm = match name {
        "overlapped" => NormKind::overlapped(shape.len()),
        "scaled_overlapped" => NormKind::scaled_overlapped(shape),
        "latent" => NormKind::latent(shape.len()),
        "scaled_latent" | "scaled" => NormKind::scaled_latent(shape),
        "ridge" => NormKind::Ridge,
        _ => match name.strip_prefix("mode").and_then(|k| k.parse::<usize>().ok()) {
            Some(k) if k >= 1 => NormKind::single_mode(k - 1),
            _ => return Err(Error::Config(format!("unknown norm {name:?}"))),
        },
    };
    norm.validate(shape.len())?;
    Ok(norm)
}

fn solver_config(args: &SolverArgs, seed: Option<u64>, config: Option<&Path>) -> Result<SolverConfig> {
    let mut cfg: SolverConfig = match config {
        Some(path) => read_json(path)?,
        None => SolverConfig::default(),
    };
    if let Some(b) = args.beta {
        cfg.beta = b;
    }
    if let Some(rule) = args.beta_rule {
        cfg.beta_rule = match rule {
            BetaRuleArg::Fixed => BetaRule::Fixed,
            BetaRuleArg::LambdaScaled => BetaRule::LambdaScaled,
        };
    }
    if let Some(t) = args.tol {
        cfg.tol = t;
    }
    if let Some(n) = args.max_iter {
        cfg.max_outer_iters = n;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn gen(a: GenArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let mut spec = ToyRegressionSpec::new(a.setup, a.m_train, a.m_val, a.m_test, seed);
    spec.noise_std = a.noise_std;
    let splits = gen_toy_regression(&spec)?;
    let layout = if a.per_sample {
        DatasetLayout::PerSample
    } else {
        DatasetLayout::Stacked
    };
    std::fs::create_dir_all(out)?;
    io::write_dataset(&out.join("train"), &splits.train, layout)?;
    io::write_dataset(&out.join("val"), &splits.val, layout)?;
    io::write_dataset(&out.join("test"), &splits.test, layout)?;
    io::save_tensor(&out.join("truth.tnsr"), &splits.truth)?;
    println!(
        "setup {}: {} / {} / {} samples written to {}",
        a.setup.name(),
        a.m_train,
        a.m_val,
        a.m_test,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn report_status(report: &FitReport) -> ExitCode {
    if report.converged {
        ExitCode::SUCCESS
    } else {
        eprintln!(
            "warning: stopped after {} iterations with relative gap {:e}",
            report.iterations, report.final_relative_gap
        );
        ExitCode::from(3)
    }
}

fn fit_cmd(a: FitArgs, seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let data = io::read_dataset(&a.data)?;
    let shape = data
        .shape()
        .ok_or_else(|| Error::Config("dataset is empty".into()))?
        .to_vec();
    let norm = parse_norm(&a.solver.norm, &shape)?;
    let mut cfg = solver_config(&a.solver, seed, config)?;
    if let Some(l) = a.lambda {
        cfg.lambda = l;
    }
    cfg.validate()?;
    let (model, report) = fit(&data, &norm, &cfg)?;
    std::fs::create_dir_all(out)?;
    io::save_model(&out.join("model.tmdl"), &model)?;
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "{} λ={} iterations={} relative_gap={:e} converged={}",
        a.solver.norm, cfg.lambda, report.iterations, report.final_relative_gap, report.converged
    );
    Ok(report_status(&report))
}

fn cv_cmd(a: CvArgs, seed: Option<u64>, config: Option<&Path>, out: &Path) -> Result<ExitCode> {
    let train = io::read_dataset(&a.train)?;
    let val = a.val.as_deref().map(io::read_dataset).transpose()?;
    let shape = train
        .shape()
        .ok_or_else(|| Error::Config("training set is empty".into()))?
        .to_vec();
    let norm = parse_norm(&a.solver.norm, &shape)?;
    let cfg = solver_config(&a.solver, seed, config)?;
    let lambdas = match (&a.lambdas, a.full_grid) {
        (Some(v), _) => LambdaGrid::Explicit { values: v.clone() }.values()?,
        (None, true) => LambdaGrid::full().values()?,
        (None, false) => LambdaGrid::default().values()?,
    };
    let split = match a.folds {
        Some(folds) => SplitMode::KFold { folds },
        None => SplitMode::Holdout,
    };
    let spec = CvSpec::new(lambdas, Metric::for_task(train.task), split)?;
    let outcome = cross_validate(&train, val.as_ref(), &norm, &spec, &cfg)?;

    std::fs::create_dir_all(out)?;
    let mut csv = String::from("lambda,metric,converged,iterations,fit_seconds,status\n");
    for row in &outcome.table {
        let status = row.error.as_deref().map_or("ok".to_string(), |e| format!("\"error: {}\"", e.replace('"', "\"\"")));
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.lambda, row.metric, row.converged, row.iterations, row.fit_seconds, status
        ));
    }
    std::fs::write(out.join("cv.csv"), csv)?;
    io::save_model(&out.join("model.tmdl"), &outcome.model)?;
    println!("best λ = {} (validation {:?} = {})", outcome.best_lambda, spec.metric, outcome.best_metric);
    Ok(ExitCode::SUCCESS)
}

fn experiment_cmd(a: ExperimentArgs, seed: Option<u64>, config: Option<&Path>, out: &Path, threads: usize) -> Result<ExitCode> {
    let mut cfg: ExperimentConfig = match config {
        Some(path) => read_json(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(v) = a.setups {
        cfg.setups = v;
    }
    if let Some(v) = a.sizes {
        cfg.train_sizes = v;
    }
    if let Some(r) = a.replicates {
        cfg.replicates = r;
    }
    if let Some(m) = a.methods {
        cfg.methods = m;
    }
    if a.full_grid {
        cfg.grid = LambdaGrid::full();
    }
    cfg.gnuplot |= a.gnuplot;
    let result = experiment::run_regression_experiment(&cfg, threads)?;
    experiment::write_outputs(&result, out)?;
    let failures = result.rows.iter().filter(|r| !r.ok()).count();
    println!("{} rows written to {}", result.rows.len(), out.display());
    for agg in &result.aggregate {
        if Some(&agg.m_train) == cfg.train_sizes.iter().max() {
            println!(
                "setup {} m={} {:<14} test MSE {:.4} ± {:.4}",
                agg.setup.name(),
                agg.m_train,
                agg.method.name(),
                agg.mean_test_mse,
                agg.std_test_mse
            );
        }
    }
    if failures > 0 {
        eprintln!("warning: {failures} cells failed; see the status column of tidy.csv");
    }
    Ok(ExitCode::SUCCESS)
}

fn bounds_cmd(a: BoundsArgs, out: &Path) -> Result<ExitCode> {
    let mut csv = format!("{}\n", BoundReport::CSV_HEADER);
    for &m in &a.samples {
        let inputs = BoundInputs {
            shape: a.shape.clone(),
            ranks: a.ranks.clone(),
            samples: m,
            radius: a.radius,
            lipschitz: a.lipschitz,
            delta: a.delta,
            c1: a.c1,
            c2: a.c2,
            c_log: a.c_log,
        };
        for norm in BoundNorm::ALL {
            csv.push_str(&bounds::bound(norm, &inputs)?.csv_row());
            csv.push('\n');
        }
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("bounds.csv"), &csv)?;
    print!("{csv}");
    Ok(ExitCode::SUCCESS)
}

fn dualnorm_cmd(a: DualnormArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let draws = bounds::dual_norm_draws(&a.shape, a.samples, a.trials, seed)?;
    let kinds = match a.which {
        Some(k) => vec![k],
        None => vec![DualNormKind::OverlappedSurrogate, DualNormKind::Latent, DualNormKind::Scaled],
    };
    let mut csv = String::from("kind,mean,stderr,trials,upper_bound\n");
    for kind in kinds {
        let est = bounds::summarize_draws(kind, &a.shape, &draws);
        println!(
            "{:<16} {:.6} ± {:.6}{}",
            kind.name(),
            est.mean,
            est.stderr,
            if est.upper_bound { "  (upper bound)" } else { "" }
        );
        csv.push_str(&format!("{},{},{},{},{}\n", kind.name(), est.mean, est.stderr, est.trials, est.upper_bound));
    }
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("dualnorm.csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}

fn features_cmd(a: FeaturesArgs, out: &Path) -> Result<ExitCode> {
    let mats = a
        .input
        .iter()
        .map(|p| covariance_features(&io::load_matrix(p)?))
        .collect::<Result<Vec<_>>>()?;
    let stacked = stack_feature_tensor(&mats)?;
    std::fs::create_dir_all(out)?;
    let path = out.join("features.tnsr");
    io::save_tensor(&path, &stacked)?;
    println!("{:?} feature tensor written to {}", stacked.shape(), path.display());
    Ok(ExitCode::SUCCESS)
}
