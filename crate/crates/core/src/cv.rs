//! λ grids and cross-validated model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::TaskKind;
use crate::rng::seeded_rng;
use crate::solvers::{fit_design, Design, FitReport, Model, NormKind, SolverConfig};

/// Candidate regularization constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LambdaGrid {
    /// `points` values evenly spaced in log scale from `min` to `max`.
    Log { min: f64, max: f64, points: usize },
    /// `min, min + step, …` up to and including `max`.
    Additive { min: f64, max: f64, step: f64 },
    Explicit { values: Vec<f64> },
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Log {
            min: 0.01,
            max: 100.0,
            points: 30,
        }
    }
}

impl LambdaGrid {
    /// The full additive grid 0.01, 0.11, …, 99.91.
    pub fn full() -> Self {
        LambdaGrid::Additive {
            min: 0.01,
            max: 100.0,
            step: 0.1,
        }
    }

    pub fn values(&self) -> Result<Vec<f64>> {
        let values = match *self {
            LambdaGrid::Log { min, max, points } => {
                if !(min > 0.0 && max >= min) || points == 0 {
                    return Err(Error::Config("log grid needs 0 < min ≤ max and points ≥ 1".into()));
                }
                if points == 1 {
                    vec![min]
                } else {
                    let (lo, hi) = (min.log10(), max.log10());
                    (0..points)
                        .map(|i| {
                            if i + 1 == points {
                                max
                            } else {
                                10f64.powf(lo + (hi - lo) * i as f64 / (points - 1) as f64)
                            }
                        })
                        .collect()
                }
            }
            LambdaGrid::Additive { min, max, step } => {
                if !(min > 0.0 && max >= min && step > 0.0) {
                    return Err(Error::Config("additive grid needs 0 < min ≤ max and step > 0".into()));
                }
                let count = ((max - min) / step + 1e-9).floor() as usize + 1;
                (0..count).map(|i| min + step * i as f64).collect()
            }
            LambdaGrid::Explicit { ref values } => values.clone(),
        };
        validate_grid(&values)?;
        Ok(values)
    }
}

fn validate_grid(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Config("λ grid is empty".into()));
    }
    if values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::Config("λ grid values must be positive".into()));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("λ grid must be strictly increasing".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Mean of `(y − score)²`.
    Mse,
    /// Fraction of misclassified samples.
    ZeroOne,
}

impl Metric {
    pub fn for_task(task: TaskKind) -> Self {
        match task {
            TaskKind::Regression => Metric::Mse,
            TaskKind::Classification => Metric::ZeroOne,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitMode {
    /// Fit on the training set, score on a separate validation set.
    Holdout,
    /// Average over `folds` folds of the training set.
    KFold { folds: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSpec {
    pub lambdas: Vec<f64>,
    pub metric: Metric,
    pub split: SplitMode,
}

impl CvSpec {
    pub fn new(lambdas: Vec<f64>, metric: Metric, split: SplitMode) -> Result<Self> {
        let spec = Self { lambdas, metric, split };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        validate_grid(&self.lambdas)?;
        if let SplitMode::KFold { folds } = self.split {
            if folds < 2 {
                return Err(Error::Config("k-fold needs at least two folds".into()));
            }
        }
        Ok(())
    }
}

/// Validation score of `model` on `data`.
pub fn evaluate(model: &Model, data: &Dataset, metric: Metric) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot score an empty dataset".into()));
    }
    let mut total = 0.0;
    for (x, &y) in data.covariates.iter().zip(&data.targets) {
        let score = model.weight.inner(x)? + model.bias;
        total += match metric {
            Metric::Mse => (y - score).powi(2),
            Metric::ZeroOne => {
                let label = if score >= 0.0 { 1.0 } else { -1.0 };
                if label == y {
                    0.0
                } else {
                    1.0
                }
            }
        };
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub lambda: f64,
    /// Validation metric, NaN when every fit at this λ failed.
    pub metric: f64,
    pub converged: bool,
    pub iterations: usize,
    pub fit_seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best_lambda: f64,
    pub best_metric: f64,
    pub table: Vec<CvRow>,
    /// Model at the selected λ fitted on the whole training set.
    pub model: Model,
    pub report: FitReport,
}

fn better(candidate: (f64, f64), incumbent: Option<(f64, f64)>) -> bool {
    // (metric, λ): lower metric wins, ties go to the larger λ
    match incumbent {
        None => true,
        Some((m, l)) => candidate.0 < m || (candidate.0 == m && candidate.1 > l),
    }
}

/// Selects λ from `cv.lambdas` by validation score.
///
/// Holdout needs `val`; k-fold splits `train` after a shuffle seeded by
/// `cfg.seed` and refits the winner on all of `train`.
pub fn cross_validate(
    train: &Dataset,
    val: Option<&Dataset>,
    norm: &NormKind,
    cv: &CvSpec,
    cfg: &SolverConfig,
) -> Result<CvOutcome> {
    cv.validate()?;
    let design = Design::from_dataset(train)?;
    match cv.split {
        SplitMode::Holdout => {
            let val = val.ok_or_else(|| Error::Config("holdout validation needs a validation set".into()))?;
            holdout(&design, val, norm, cv, cfg)
        }
        SplitMode::KFold { folds } => kfold(train, &design, folds, norm, cv, cfg),
    }
}

/// Holdout selection on a prebuilt training design.
pub fn holdout(design: &Design, val: &Dataset, norm: &NormKind, cv: &CvSpec, cfg: &SolverConfig) -> Result<CvOutcome> {
    let mut table = Vec::with_capacity(cv.lambdas.len());
    let mut best: Option<(f64, f64, Model, FitReport)> = None;
    for &lambda in &cv.lambdas {
        let started = Instant::now();
        let fitted = fit_design(design, norm, &cfg.with_lambda(lambda))
            .and_then(|(model, report)| Ok((evaluate(&model, val, cv.metric)?, model, report)));
        let fit_seconds = started.elapsed().as_secs_f64();
        match fitted {
            Ok((metric, model, report)) => {
                table.push(CvRow {
                    lambda,
                    metric,
                    converged: report.converged,
                    iterations: report.iterations,
                    fit_seconds,
                    error: None,
                });
                if metric.is_finite() && better((metric, lambda), best.as_ref().map(|b| (b.0, b.1))) {
                    best = Some((metric, lambda, model, report));
                }
            }
            Err(e) => table.push(failed_row(lambda, fit_seconds, &e)),
        }
    }
    let (best_metric, best_lambda, model, report) =
        best.ok_or_else(|| Error::Degenerate("every fit in the λ grid failed".into()))?;
    Ok(CvOutcome {
        best_lambda,
        best_metric,
        table,
        model,
        report,
    })
}

fn failed_row(lambda: f64, fit_seconds: f64, e: &Error) -> CvRow {
    CvRow {
        lambda,
        metric: f64::NAN,
        converged: false,
        iterations: 0,
        fit_seconds,
        error: Some(e.to_string()),
    }
}

fn kfold(
    train: &Dataset,
    design: &Design,
    folds: usize,
    norm: &NormKind,
    cv: &CvSpec,
    cfg: &SolverConfig,
) -> Result<CvOutcome> {
    let m = train.len();
    if folds > m {
        return Err(Error::Config(format!("{folds} folds for {m} samples")));
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.shuffle(&mut seeded_rng(cfg.seed));
    let bounds: Vec<usize> = (0..=folds).map(|f| f * m / folds).collect();
    let mut splits = Vec::with_capacity(folds);
    for f in 0..folds {
        let held: Vec<usize> = order[bounds[f]..bounds[f + 1]].to_vec();
        let kept: Vec<usize> = order[..bounds[f]].iter().chain(&order[bounds[f + 1]..]).copied().collect();
        let fold_design = Design::from_dataset(&train.subset(&kept))?;
        splits.push((fold_design, train.subset(&held)));
    }

    let mut table = Vec::with_capacity(cv.lambdas.len());
    let mut best: Option<(f64, f64)> = None;
    for &lambda in &cv.lambdas {
        let started = Instant::now();
        let c = cfg.with_lambda(lambda);
        let mut scores = Vec::with_capacity(folds);
        let mut converged = true;
        let mut iterations = 0;
        let mut failure = None;
        for (fold_design, held) in &splits {
            match fit_design(fold_design, norm, &c).and_then(|(model, report)| {
                Ok((evaluate(&model, held, cv.metric)?, report))
            }) {
                Ok((score, report)) => {
                    scores.push(score);
                    converged &= report.converged;
                    iterations += report.iterations;
                }
                Err(e) => {
                    failure = Some(e);
                    break;
                }
            }
        }
        let fit_seconds = started.elapsed().as_secs_f64();
        if let Some(e) = failure {
            table.push(failed_row(lambda, fit_seconds, &e));
            continue;
        }
        let metric = scores.iter().sum::<f64>() / folds as f64;
        table.push(CvRow {
            lambda,
            metric,
            converged,
            iterations,
            fit_seconds,
            error: None,
        });
        if metric.is_finite() && better((metric, lambda), best) {
            best = Some((metric, lambda));
        }
    }
    let (best_metric, best_lambda) = best.ok_or_else(|| Error::Degenerate("every fit in the λ grid failed".into()))?;
    let (model, report) = fit_design(design, norm, &cfg.with_lambda(best_lambda))?;
    Ok(CvOutcome {
        best_lambda,
        best_metric,
        table,
        model,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        let log = LambdaGrid::default().values().unwrap();
        assert_eq!(log.len(), 30);
        assert_eq!(log[0], 0.01);
        assert_eq!(log[29], 100.0);
        let full = LambdaGrid::full().values().unwrap();
        assert_eq!(full.len(), 1000);
        assert!((full[999] - 99.91).abs() < 1e-9);
        assert!(LambdaGrid::Explicit { values: vec![1.0, 1.0] }.values().is_err());
        assert!(LambdaGrid::Explicit { values: vec![] }.values().is_err());
    }

    #[test]
    fn ties_prefer_larger_lambda() {
        assert!(better((1.0, 2.0), Some((1.0, 1.0))));
        assert!(!better((1.0, 0.5), Some((1.0, 1.0))));
        assert!(better((0.5, 0.1), Some((1.0, 1.0))));
    }
}
