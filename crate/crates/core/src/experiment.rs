//! The synthetic regression study: data generation, λ selection, refit and
//! test evaluation for every method, training size and replicate.
//!
//! Every cell draws its data from seeds derived from the master seed and the
//! cell coordinates, so worker count and scheduling never change results.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{evaluate, holdout, CvOutcome, CvSpec, LambdaGrid, Metric, SplitMode};
use crate::data::{gen_toy_regression_with_truth, toy_truth, Setup, ToyRegressionSpec, DEFAULT_NOISE_STD};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::solvers::{BetaRule, Design, NormKind, SolverConfig};

/// A learning method compared in the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Overlapped,
    Latent,
    ScaledLatent,
    /// Trace norm of one unfolding, zero-based mode.
    SingleMode(usize),
    /// The single-mode method whose validation score is best.
    ModewiseCv,
    Ridge,
}

impl Method {
    pub fn name(&self) -> String {
        match self {
            Method::Overlapped => "overlapped".into(),
            Method::Latent => "latent".into(),
            Method::ScaledLatent => "scaled_latent".into(),
            Method::SingleMode(k) => format!("mode{}", k + 1),
            Method::ModewiseCv => "modewise_cv".into(),
            Method::Ridge => "ridge".into(),
        }
    }

    /// Regularizer for a covariate shape; `None` for mode-wise CV.
    pub fn norm(&self, shape: &[usize]) -> Option<NormKind> {
        Some(match *self {
            Method::Overlapped => NormKind::overlapped(shape.len()),
            Method::Latent => NormKind::latent(shape.len()),
            Method::ScaledLatent => NormKind::scaled_latent(shape),
            Method::SingleMode(k) => NormKind::single_mode(k),
            Method::ModewiseCv => return None,
            Method::Ridge => NormKind::Ridge,
        })
    }

    /// The default method list for a tensor of the given order.
    pub fn all(order: usize) -> Vec<Method> {
        let mut methods = vec![Method::Overlapped, Method::Latent, Method::ScaledLatent];
        methods.extend((0..order).map(Method::SingleMode));
        methods.push(Method::ModewiseCv);
        methods.push(Method::Ridge);
        methods
    }

    pub fn is_tensor_norm(&self) -> bool {
        !matches!(self, Method::Ridge)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "overlapped" => Method::Overlapped,
            "latent" => Method::Latent,
            "scaled_latent" | "scaled" => Method::ScaledLatent,
            "modewise_cv" => Method::ModewiseCv,
            "ridge" => Method::Ridge,
            _ => match s.strip_prefix("mode").and_then(|k| k.parse::<usize>().ok()) {
                Some(k) if k >= 1 => Method::SingleMode(k - 1),
                _ => return Err(Error::Config(format!("unknown method {s:?}"))),
            },
        })
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Configuration of [`run_regression_experiment`], also the JSON schema of
/// `tensorreg experiment --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setups: Vec<Setup>,
    pub train_sizes: Vec<usize>,
    pub m_val: usize,
    pub m_test: usize,
    pub replicates: usize,
    /// Empty means every method for the setup's tensor order.
    pub methods: Vec<Method>,
    pub grid: LambdaGrid,
    pub noise_std: f64,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Also write `plot.gp`, a gnuplot script over `aggregate.csv`.
    pub gnuplot: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setups: Setup::ALL.to_vec(),
            train_sizes: vec![200, 400, 800],
            m_val: 200,
            m_test: 1000,
            replicates: 10,
            methods: Vec::new(),
            grid: LambdaGrid::default(),
            noise_std: DEFAULT_NOISE_STD,
            seed: 0,
            solver: SolverConfig {
                beta: 0.5,
                beta_rule: BetaRule::LambdaScaled,
                ..SolverConfig::default()
            },
            gnuplot: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.setups.is_empty() || self.train_sizes.is_empty() {
            return Err(Error::Config("need at least one setup and one training size".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be positive".into()));
        }
        if self.train_sizes.iter().any(|&m| m < 2) {
            return Err(Error::Config("training sizes must be at least 2".into()));
        }
        for &setup in &self.setups {
            for m in self.methods_for(setup) {
                if let Method::SingleMode(k) = m {
                    if k >= setup.shape().len() {
                        return Err(Error::Config(format!("{m} exceeds the order of setup {}", setup.name())));
                    }
                }
            }
        }
        ToyRegressionSpec {
            setup: self.setups[0],
            m_train: self.train_sizes[0],
            m_val: self.m_val,
            m_test: self.m_test,
            noise_std: self.noise_std,
            seed: self.seed,
        }
        .validate()?;
        self.grid.values()?;
        self.solver.validate()
    }

    pub fn methods_for(&self, setup: Setup) -> Vec<Method> {
        if self.methods.is_empty() {
            Method::all(setup.shape().len())
        } else {
            self.methods.clone()
        }
    }
}

/// One method on one (setup, training size, replicate) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TidyRow {
    pub setup: Setup,
    pub method: Method,
    pub m_train: usize,
    pub replicate: usize,
    /// Selected λ, NaN on failure.
    pub lambda: f64,
    /// Selected mode of mode-wise CV, zero-based.
    pub selected_mode: Option<usize>,
    pub val_mse: f64,
    pub test_mse: f64,
    pub converged: bool,
    /// Outer iterations of the refit at the selected λ.
    pub iterations: usize,
    /// Wall time of the whole λ search.
    pub cv_seconds: f64,
    /// Wall time of the fit at the selected λ.
    pub fit_seconds: f64,
    pub error: Option<String>,
}

impl TidyRow {
    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Mean and sample standard deviation over successful replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub setup: Setup,
    pub method: Method,
    pub m_train: usize,
    pub replicates_ok: usize,
    pub mean_test_mse: f64,
    pub std_test_mse: f64,
    pub mean_val_mse: f64,
    pub mean_fit_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub rows: Vec<TidyRow>,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentResult {
    pub fn cell(&self, setup: Setup, method: Method, m_train: usize) -> Option<&AggregateRow> {
        self.aggregate
            .iter()
            .find(|a| a.setup == setup && a.method == method && a.m_train == m_train)
    }
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    setup_index: usize,
    setup: Setup,
    m_train: usize,
    replicate: usize,
}

/// Runs the full grid on a pool of `threads` workers (0 = rayon's default).
pub fn run_regression_experiment(config: &ExperimentConfig, threads: usize) -> Result<ExperimentResult> {
    config.validate()?;
    let lambdas = config.grid.values()?;
    let cv = CvSpec::new(lambdas, Metric::Mse, SplitMode::Holdout)?;
    let mut cells = Vec::new();
    for (setup_index, &setup) in config.setups.iter().enumerate() {
        for &m_train in &config.train_sizes {
            for replicate in 0..config.replicates {
                cells.push(Cell {
                    setup_index,
                    setup,
                    m_train,
                    replicate,
                });
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    let per_cell: Vec<Vec<TidyRow>> =
        pool.install(|| cells.par_iter().map(|cell| run_cell(config, &cv, cell)).collect());
    let rows: Vec<TidyRow> = per_cell.into_iter().flatten().collect();
    let aggregate = aggregate(config, &rows);
    Ok(ExperimentResult {
        config: config.clone(),
        rows,
        aggregate,
    })
}

fn run_cell(config: &ExperimentConfig, cv: &CvSpec, cell: &Cell) -> Vec<TidyRow> {
    let methods = config.methods_for(cell.setup);
    let fail_all = |e: &Error| {
        methods
            .iter()
            .map(|&method| failed_row(cell, method, 0.0, e))
            .collect()
    };
    let spec = ToyRegressionSpec {
        setup: cell.setup,
        m_train: cell.m_train,
        m_val: config.m_val,
        m_test: config.m_test,
        noise_std: config.noise_std,
        seed: config.seed,
    };
    // the true tensor depends on (setup, replicate) only, so curves over m share it
    let truth_seed = derive_seed(config.seed, &[cell.setup_index as u64, cell.replicate as u64, 0]);
    let data_seed = derive_seed(
        config.seed,
        &[cell.setup_index as u64, cell.replicate as u64, cell.m_train as u64, 1],
    );
    let splits = match toy_truth(cell.setup, truth_seed)
        .and_then(|truth| gen_toy_regression_with_truth(&spec, truth, data_seed))
    {
        Ok(s) => s,
        Err(e) => return fail_all(&e),
    };
    let design = match Design::from_dataset(&splits.train) {
        Ok(d) => d,
        Err(e) => return fail_all(&e),
    };
    let shape = cell.setup.shape();

    let run = |method: Method| -> (std::result::Result<CvOutcome, Error>, f64) {
        let started = Instant::now();
        let norm = method.norm(&shape).expect("concrete method");
        let outcome = holdout(&design, &splits.val, &norm, cv, &config.solver);
        (outcome, started.elapsed().as_secs_f64())
    };
    let to_row = |method: Method, outcome: &std::result::Result<CvOutcome, Error>, seconds: f64, mode| match outcome {
        Ok(o) => match evaluate(&o.model, &splits.test, Metric::Mse) {
            Ok(test_mse) => TidyRow {
                setup: cell.setup,
                method,
                m_train: cell.m_train,
                replicate: cell.replicate,
                lambda: o.best_lambda,
                selected_mode: mode,
                val_mse: o.best_metric,
                test_mse,
                converged: o.report.converged,
                iterations: o.report.iterations,
                cv_seconds: seconds,
                fit_seconds: selected_fit_seconds(o),
                error: None,
            },
            Err(e) => failed_row(cell, method, seconds, &e),
        },
        Err(e) => failed_row(cell, method, seconds, e),
    };

    // single-mode searches are shared between the per-mode rows and mode-wise CV
    let needs_modes = methods.contains(&Method::ModewiseCv);
    let mut mode_outcomes: Vec<Option<(std::result::Result<CvOutcome, Error>, f64)>> =
        (0..shape.len()).map(|_| None).collect();
    for (k, slot) in mode_outcomes.iter_mut().enumerate() {
        if needs_modes || methods.contains(&Method::SingleMode(k)) {
            *slot = Some(run(Method::SingleMode(k)));
        }
    }

    methods
        .iter()
        .map(|&method| match method {
            Method::SingleMode(k) => {
                let (outcome, seconds) = mode_outcomes[k].as_ref().expect("mode searched");
                to_row(method, outcome, *seconds, None)
            }
            Method::ModewiseCv => {
                let total: f64 = mode_outcomes.iter().flatten().map(|(_, s)| s).sum();
                // first mode wins ties, matching a left-to-right scan
                let best = mode_outcomes
                    .iter()
                    .enumerate()
                    .filter_map(|(k, o)| match o {
                        Some((Ok(out), _)) => Some((k, out)),
                        _ => None,
                    })
                    .fold(None::<(usize, &CvOutcome)>, |acc, (k, out)| match acc {
                        Some((_, b)) if b.best_metric <= out.best_metric => acc,
                        _ => Some((k, out)),
                    });
                match best {
                    Some((k, out)) => to_row(method, &Ok(out.clone()), total, Some(k)),
                    None => failed_row(
                        cell,
                        method,
                        total,
                        &Error::Degenerate("every single-mode search failed".into()),
                    ),
                }
            }
            _ => {
                let (outcome, seconds) = run(method);
                to_row(method, &outcome, seconds, None)
            }
        })
        .collect()
}

fn selected_fit_seconds(o: &CvOutcome) -> f64 {
    o.table
        .iter()
        .find(|r| r.lambda == o.best_lambda)
        .map_or(o.report.wall_seconds, |r| r.fit_seconds)
}

fn failed_row(cell: &Cell, method: Method, seconds: f64, e: &Error) -> TidyRow {
    TidyRow {
        setup: cell.setup,
        method,
        m_train: cell.m_train,
        replicate: cell.replicate,
        lambda: f64::NAN,
        selected_mode: None,
        val_mse: f64::NAN,
        test_mse: f64::NAN,
        converged: false,
        iterations: 0,
        cv_seconds: seconds,
        fit_seconds: seconds,
        error: Some(e.to_string()),
    }
}

/// Sample mean and standard deviation (n − 1 denominator, 0 for one value).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

fn aggregate(config: &ExperimentConfig, rows: &[TidyRow]) -> Vec<AggregateRow> {
    let mut out = Vec::new();
    for &setup in &config.setups {
        for method in config.methods_for(setup) {
            for &m_train in &config.train_sizes {
                let ok: Vec<&TidyRow> = rows
                    .iter()
                    .filter(|r| r.setup == setup && r.method == method && r.m_train == m_train && r.ok())
                    .collect();
                let test: Vec<f64> = ok.iter().map(|r| r.test_mse).collect();
                let val: Vec<f64> = ok.iter().map(|r| r.val_mse).collect();
                let secs: Vec<f64> = ok.iter().map(|r| r.fit_seconds).collect();
                let (mean_test_mse, std_test_mse) = mean_std(&test);
                out.push(AggregateRow {
                    setup,
                    method,
                    m_train,
                    replicates_ok: ok.len(),
                    mean_test_mse,
                    std_test_mse,
                    mean_val_mse: mean_std(&val).0,
                    mean_fit_seconds: mean_std(&secs).0,
                });
            }
        }
    }
    out
}

pub const TIDY_HEADER: &str =
    "setup,method,m_train,replicate,lambda,selected_mode,val_mse,test_mse,converged,iterations,status";
pub const AGGREGATE_HEADER: &str = "setup,method,m_train,replicates_ok,mean_test_mse,std_test_mse,mean_val_mse";
pub const TIMING_HEADER: &str = "setup,method,m_train,replicate,cv_seconds,fit_seconds,iterations";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Tidy CSV text; floats use shortest round-trip formatting.
pub fn tidy_csv(rows: &[TidyRow]) -> String {
    let mut s = String::from(TIDY_HEADER);
    s.push('\n');
    for r in rows {
        let mode = r.selected_mode.map(|k| (k + 1).to_string()).unwrap_or_default();
        let status = r.error.as_deref().map_or("ok".to_string(), |e| csv_field(&format!("error: {e}")));
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.setup.name(),
            r.method,
            r.m_train,
            r.replicate,
            r.lambda,
            mode,
            r.val_mse,
            r.test_mse,
            r.converged,
            r.iterations,
            status
        );
    }
    s
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = String::from(AGGREGATE_HEADER);
    s.push('\n');
    for a in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            a.setup.name(),
            a.method,
            a.m_train,
            a.replicates_ok,
            a.mean_test_mse,
            a.std_test_mse,
            a.mean_val_mse
        );
    }
    s
}

pub fn timing_csv(rows: &[TidyRow]) -> String {
    let mut s = String::from(TIMING_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.setup.name(),
            r.method,
            r.m_train,
            r.replicate,
            r.cv_seconds,
            r.fit_seconds,
            r.iterations
        );
    }
    s
}

/// Gnuplot script drawing mean test MSE against training size, one panel per setup.
pub fn gnuplot_script(config: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set terminal pngcairo size {},420", 480 * config.setups.len());
    let _ = writeln!(s, "set output 'mse.png'");
    let _ = writeln!(s, "set logscale y");
    let _ = writeln!(s, "set xlabel 'training samples'");
    let _ = writeln!(s, "set ylabel 'mean test MSE'");
    let _ = writeln!(s, "set key top right");
    let _ = writeln!(s, "set multiplot layout 1,{}", config.setups.len());
    for &setup in &config.setups {
        let _ = writeln!(s, "set title 'setup {}'", setup.name());
        let plots: Vec<String> = config
            .methods_for(setup)
            .iter()
            .map(|m| {
                format!(
                    "'aggregate.csv' skip 1 using (strcol(1) eq '{}' && strcol(2) eq '{}' ? $3 : NaN):5:6 with yerrorlines title '{}'",
                    setup.name(),
                    m,
                    m
                )
            })
            .collect();
        let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    }
    let _ = writeln!(s, "unset multiplot");
    s
}

/// Writes `tidy.csv`, `aggregate.csv`, `timing.csv`, `config.json` and,
/// if configured, `plot.gp` into `dir`.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("tidy.csv"), tidy_csv(&result.rows))?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&result.aggregate))?;
    std::fs::write(dir.join("timing.csv"), timing_csv(&result.rows))?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&result.config)?)?;
    if result.config.gnuplot {
        std::fs::write(dir.join("plot.gp"), gnuplot_script(&result.config))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::all(3) {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("mode2".parse::<Method>().unwrap(), Method::SingleMode(1));
        assert!("mode0".parse::<Method>().is_err());
        assert!("lasso".parse::<Method>().is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]), (7.0, 0.0));
    }

    #[test]
    fn config_json_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"setups": ["C"], "methods": ["latent", "mode1"]}"#).unwrap();
        assert_eq!(cfg.setups, vec![Setup::C]);
        assert_eq!(cfg.replicates, 10);
        assert_eq!(cfg.methods, vec![Method::Latent, Method::SingleMode(0)]);
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn small_run_is_complete() {
        let cfg = ExperimentConfig {
            setups: vec![Setup::C],
            train_sizes: vec![30],
            m_val: 20,
            m_test: 20,
            replicates: 2,
            grid: LambdaGrid::Explicit { values: vec![1.0, 10.0] },
            ..Default::default()
        };
        let result = run_regression_experiment(&cfg, 2).unwrap();
        assert_eq!(result.rows.len(), 2 * Method::all(3).len());
        assert!(result.rows.iter().all(|r| r.ok() && r.test_mse.is_finite()));
        let modewise = result.rows.iter().find(|r| r.method == Method::ModewiseCv).unwrap();
        let best_single = result
            .rows
            .iter()
            .filter(|r| r.replicate == 0 && matches!(r.method, Method::SingleMode(_)))
            .map(|r| r.val_mse)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(modewise.val_mse, best_single);
        assert_eq!(tidy_csv(&result.rows).lines().count(), result.rows.len() + 1);
    }
}
