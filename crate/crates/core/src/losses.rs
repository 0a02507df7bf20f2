//! Losses, their conjugates, and primal/dual objectives.
//!
//! The solvers work with the halved squared loss `½(y − z)²`, whose conjugate
//! pairs with `Σ(α_i y_i − ½α_i²)`. The regularization parameter is defined
//! against that halved loss. [`squared_loss`] itself is the plain `(y − z)²`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::solvers::{Model, NormKind};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Regression,
    Classification,
}

pub fn check_label(y: f64) -> Result<()> {
    if y == 1.0 || y == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidLabel(y))
    }
}

/// `(y − pred)²`
pub fn squared_loss(pred: f64, y: f64) -> f64 {
    (y - pred).powi(2)
}

/// `log(1 + exp(−y·pred))`, stable for large margins.
pub fn logistic_loss(pred: f64, y: f64) -> Result<f64> {
    check_label(y)?;
    Ok(softplus(-y * pred))
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + exp(−x))` without overflow.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x log x` with `0 log 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `D(−α) = Σ(½α_i² − α_i y_i)` for the halved squared loss.
pub fn conjugate_squared(alpha: &[f64], y: &[f64]) -> f64 {
    alpha
        .iter()
        .zip(y)
        .map(|(a, y)| 0.5 * a * a - a * y)
        .sum()
}

/// `D(−α) = Σ a log a + (1 − a) log(1 − a)` with `a = y_i α_i ∈ [0, 1]`.
pub fn conjugate_logistic(alpha: &[f64], y: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (&a, &y) in alpha.iter().zip(y) {
        check_label(y)?;
        let ya = y * a;
        if !(0.0..=1.0).contains(&ya) {
            return Err(Error::Infeasible(format!(
                "y·α = {ya} outside [0, 1]"
            )));
        }
        total += xlogx(ya) + xlogx(1.0 - ya);
    }
    Ok(total)
}

/// Dual value in maximization form, `−D(−α)`.
pub fn dual_objective(alpha: &[f64], y: &[f64], task: TaskKind) -> Result<f64> {
    if alpha.len() != y.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![y.len()],
            found: vec![alpha.len()],
        });
    }
    match task {
        TaskKind::Regression => Ok(-conjugate_squared(alpha, y)),
        TaskKind::Classification => Ok(-conjugate_logistic(alpha, y)?),
    }
}

/// Empirical loss the solvers minimize: halved squared loss or logistic loss.
pub fn empirical_loss(scores: &[f64], y: &[f64], task: TaskKind) -> f64 {
    match task {
        TaskKind::Regression => scores
            .iter()
            .zip(y)
            .map(|(z, y)| 0.5 * squared_loss(*z, *y))
            .sum(),
        TaskKind::Classification => scores.iter().zip(y).map(|(z, y)| softplus(-y * z)).sum(),
    }
}

/// Regularization term of `model` under its own norm and λ.
pub fn regularizer(model: &Model) -> Result<f64> {
    let lambda = model.lambda;
    match &model.norm {
        NormKind::Ridge => Ok(0.5 * lambda * model.weight.inner(&model.weight)?),
        NormKind::Overlapped { modes, weights } => {
            let mut total = 0.0;
            for (&k, &w) in modes.iter().zip(weights) {
                total += lambda * w * linalg::trace_norm(&model.weight.unfold(k)?)?;
            }
            Ok(total)
        }
        NormKind::Latent { modes, weights } => {
            let parts = model.latent_parts.as_ref().ok_or_else(|| {
                Error::Config("latent-type objective needs the latent decomposition".into())
            })?;
            if parts.len() != modes.len() {
                return Err(Error::Config("one latent part per active mode required".into()));
            }
            let mut total = 0.0;
            for ((&k, &w), part) in modes.iter().zip(weights).zip(parts) {
                total += lambda * w * linalg::trace_norm(&part.unfold(k)?)?;
            }
            Ok(total)
        }
    }
}

/// `Σ_i l(X_i, y_i, W, b) + regularizer`.
pub fn primal_objective(
    covariates: &[DenseTensor],
    targets: &[f64],
    task: TaskKind,
    model: &Model,
) -> Result<f64> {
    let mut scores = Vec::with_capacity(covariates.len());
    for x in covariates {
        scores.push(model.weight.inner(x)? + model.bias);
    }
    Ok(empirical_loss(&scores, targets, task) + regularizer(model)?)
}
