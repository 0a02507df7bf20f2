//! Ridge regression on vectorized covariates with an unpenalized bias.
//!
//! Minimizes `½ Σ (y_i − ⟨W, X_i⟩ − b)² + (λ/2)‖W‖²`. The bias is eliminated
//! by centering, and the remaining system is solved on whichever side
//! (samples or features) is smaller.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::TaskKind;
use crate::tensor::DenseTensor;

use super::{Design, FitReport, IterationRecord, Model, NormKind};

pub fn fit_ridge(data: &Dataset, lambda: f64) -> Result<(Model, FitReport)> {
    fit_ridge_design(&Design::from_dataset(data)?, lambda)
}

pub(crate) fn fit_ridge_design(design: &Design, lambda: f64) -> Result<(Model, FitReport)> {
    if design.task() != TaskKind::Regression {
        return Err(Error::Config("ridge baseline is defined for regression only".into()));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let started = Instant::now();
    let x_mean = design.column_means();
    let y = design.y();
    let y_mean = y.mean();
    let yc = y.add_scalar(-y_mean);

    if lambda == 0.0 && design.centered_on_samples() {
        return Err(Error::Config(
            "unregularized least squares is underdetermined unless samples exceed features".into(),
        ));
    }
    let spectrum = design.centered_spectrum()?;
    let w = if design.centered_on_samples() {
        // w = X̃ᵀ (X̃X̃ᵀ + λI)⁻¹ ỹ
        let coef = spectrum.solve_shifted(1.0, lambda, &yc)?;
        design.apply_t(&coef) - &x_mean * coef.sum()
    } else {
        // w = (X̃ᵀX̃ + λI)⁻¹ X̃ᵀ ỹ, and X̃ᵀỹ = Xᵀỹ since ỹ sums to zero
        spectrum.solve_shifted(1.0, lambda, &design.apply_t(&yc))?
    };
    let bias = y_mean - x_mean.dot(&w);

    let residual = y - design.apply(&w).add_scalar(bias);
    let primal = 0.5 * residual.norm_squared() + 0.5 * lambda * w.norm_squared();
    // dual of the ridge problem at α = residual
    let mut dual = residual.dot(y) - 0.5 * residual.norm_squared();
    if lambda > 0.0 {
        dual -= design.apply_t(&residual).norm_squared() / (2.0 * lambda);
    }
    let relative_gap = if primal > 0.0 { (primal - dual) / primal } else { 0.0 };

    let model = Model {
        norm: NormKind::Ridge,
        lambda,
        task: TaskKind::Regression,
        weight: DenseTensor::new(design.shape().to_vec(), w.as_slice().to_vec())?,
        latent_parts: None,
        bias,
    };
    let report = FitReport {
        iterations: 1,
        history: vec![IterationRecord {
            primal,
            dual,
            relative_gap,
        }],
        final_v_norms: Vec::new(),
        converged: true,
        final_relative_gap: relative_gap,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
