//! Learning algorithms: dual ADMM for latent-type norms, primal ADMM for the
//! overlapped norm, closed-form ridge regression, and prediction.

mod design;
mod dual_admm;
mod gap;
mod overlapped;
mod ridge;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{sigmoid, TaskKind};
use crate::norms::scaled_weights;
use crate::tensor::DenseTensor;

pub use design::Design;
pub use dual_admm::{fit_dual_admm, DualAdmm, DualAdmmState, LogisticAlphaProblem};
pub use gap::{duality_gap, GapEvaluation};
pub use overlapped::{fit_overlapped_primal_admm, OverlappedAdmm, WStepSolver};
pub use ridge::fit_ridge;

/// Regularizer of a fit.
///
/// `modes` are zero-based and `weights[i]` multiplies λ on `modes[i]`, so
/// `λ_k = λ · weight_k`. A latent-type norm over all modes with unit weights
/// is the latent trace norm, weights `1/√n_k` give the scaled latent trace
/// norm, and a single mode gives matrix trace-norm learning on that unfolding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormKind {
    Overlapped { modes: Vec<usize>, weights: Vec<f64> },
    Latent { modes: Vec<usize>, weights: Vec<f64> },
    Ridge,
}

impl NormKind {
    pub fn overlapped(order: usize) -> Self {
        NormKind::Overlapped {
            modes: (0..order).collect(),
            weights: vec![1.0; order],
        }
    }

    pub fn scaled_overlapped(shape: &[usize]) -> Self {
        NormKind::Overlapped {
            modes: (0..shape.len()).collect(),
            weights: scaled_weights(shape),
        }
    }

    pub fn latent(order: usize) -> Self {
        NormKind::Latent {
            modes: (0..order).collect(),
            weights: vec![1.0; order],
        }
    }

    pub fn scaled_latent(shape: &[usize]) -> Self {
        NormKind::Latent {
            modes: (0..shape.len()).collect(),
            weights: scaled_weights(shape),
        }
    }

    /// Matrix trace-norm regularization of the mode-k unfolding.
    pub fn single_mode(mode: usize) -> Self {
        NormKind::Latent {
            modes: vec![mode],
            weights: vec![1.0],
        }
    }

    pub fn modes_and_weights(&self) -> Option<(&[usize], &[f64])> {
        match self {
            NormKind::Overlapped { modes, weights } | NormKind::Latent { modes, weights } => {
                Some((modes, weights))
            }
            NormKind::Ridge => None,
        }
    }

    pub fn validate(&self, order: usize) -> Result<()> {
        let Some((modes, weights)) = self.modes_and_weights() else {
            return Ok(());
        };
        if modes.is_empty() || modes.len() != weights.len() {
            return Err(Error::Config("mode set must be non-empty with one weight per mode".into()));
        }
        if modes.iter().any(|&k| k >= order) {
            return Err(Error::Config(format!("mode set {modes:?} exceeds tensor order {order}")));
        }
        let mut sorted = modes.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != modes.len() {
            return Err(Error::Config(format!("repeated mode in {modes:?}")));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("weights must be positive: {weights:?}")));
        }
        Ok(())
    }
}

/// Controls for the damped Newton solver of the logistic α-step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    pub max_iters: usize,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    /// Sufficient-decrease constant of the Armijo test.
    pub armijo: f64,
    /// Fraction of the distance to the box boundary a step may cover.
    pub interior_margin: f64,
    /// Gradient norm at which the inner solve stops.
    pub tol: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iters: 100,
            backtrack: 0.5,
            armijo: 1e-4,
            interior_margin: 0.99,
            tol: 1e-8,
        }
    }
}

/// How the ADMM penalty of a fit is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// Use `beta` as given.
    #[default]
    Fixed,
    /// Tie the penalty to the mean per-mode weight `λ̄ = λ · mean(weight_k)`:
    /// `beta / λ̄` for the dual solver and `λ̄ / beta` for the primal one.
    /// The penalty still stays constant within a fit.
    LambdaScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    /// ADMM penalty, held fixed during a fit.
    pub beta: f64,
    pub beta_rule: BetaRule,
    /// Relative duality-gap tolerance.
    pub tol: f64,
    pub max_outer_iters: usize,
    pub newton: NewtonConfig,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            beta: 1.0,
            beta_rule: BetaRule::Fixed,
            tol: 1e-3,
            max_outer_iters: 2000,
            newton: NewtonConfig::default(),
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self {
            lambda,
            ..self.clone()
        }
    }

    /// Penalty used when fitting `norm` under this configuration.
    pub fn effective_beta(&self, norm: &NormKind) -> f64 {
        let Some((_, weights)) = norm.modes_and_weights() else {
            return self.beta;
        };
        let scale = self.lambda * weights.iter().sum::<f64>() / weights.len() as f64;
        match (self.beta_rule, norm) {
            (BetaRule::LambdaScaled, NormKind::Latent { .. }) if scale > 0.0 => self.beta / scale,
            (BetaRule::LambdaScaled, NormKind::Overlapped { .. }) if scale > 0.0 => scale / self.beta,
            _ => self.beta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tolerance must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_outer_iters == 0 || self.newton.max_iters == 0 {
            return Err(Error::Config("iteration caps must be positive".into()));
        }
        let n = &self.newton;
        if !(n.backtrack > 0.0 && n.backtrack < 1.0)
            || !(n.armijo > 0.0 && n.armijo < 0.5)
            || !(n.interior_margin > 0.0 && n.interior_margin < 1.0)
            || !(n.tol > 0.0)
        {
            return Err(Error::Config("invalid Newton controls".into()));
        }
        Ok(())
    }
}

/// A fitted linear model `⟨W, X⟩ + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub norm: NormKind,
    pub lambda: f64,
    pub task: TaskKind,
    pub weight: DenseTensor,
    /// Latent components, one per active mode of a latent-type norm.
    pub latent_parts: Option<Vec<DenseTensor>>,
    pub bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub primal: f64,
    pub dual: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    pub history: Vec<IterationRecord>,
    /// Spectral norms of the unfoldings of `Σ α_i X_i` on the active modes.
    pub final_v_norms: Vec<f64>,
    pub converged: bool,
    pub final_relative_gap: f64,
    pub wall_seconds: f64,
}

/// Prediction for one covariate tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
    /// `sign(score)` for classification models.
    pub label: Option<f64>,
    /// `1 / (1 + exp(−score))` for classification models.
    pub probability: Option<f64>,
}

pub fn predict(model: &Model, x: &DenseTensor) -> Result<Prediction> {
    let score = model.weight.inner(x)? + model.bias;
    Ok(match model.task {
        TaskKind::Regression => Prediction {
            score,
            label: None,
            probability: None,
        },
        TaskKind::Classification => Prediction {
            score,
            label: Some(if score >= 0.0 { 1.0 } else { -1.0 }),
            probability: Some(sigmoid(score)),
        },
    })
}

/// Fits `norm` on `data`, dispatching to the matching solver.
pub fn fit(data: &Dataset, norm: &NormKind, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
    let design = Design::from_dataset(data)?;
    fit_design(&design, norm, cfg)
}

pub fn fit_design(design: &Design, norm: &NormKind, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
    let beta = cfg.effective_beta(norm);
    match norm {
        NormKind::Latent { .. } => DualAdmm::new(design, norm, beta)?.fit(cfg),
        NormKind::Overlapped { .. } => OverlappedAdmm::new(design, norm, beta)?.fit(cfg),
        NormKind::Ridge => ridge::fit_ridge_design(design, cfg.lambda),
    }
}
