//! Relative duality gap with a feasibility-rescaled dual point.

use crate::error::{Error, Result};
use crate::linalg::{self, Vector};
use crate::losses::{dual_objective, TaskKind};
use crate::tensor::unfold_raw;

use super::Design;

#[derive(Debug, Clone)]
pub struct GapEvaluation {
    pub relative_gap: f64,
    pub primal: f64,
    pub dual: f64,
    /// Dual-feasible point the dual value was evaluated at.
    pub alpha_hat: Vector,
    /// Factor applied to the recentered α to enter the spectral-norm balls.
    pub scale: f64,
    /// Spectral norms of the certificate unfoldings before scaling.
    pub v_norms: Vec<f64>,
}

/// Moves α onto `Σ α_i = 0` (and `0 ≤ y_i α_i ≤ 1` for classification).
///
/// Regression subtracts the mean. Classification clips `y_i α_i` into the box
/// and shrinks the heavier class so both classes carry equal mass.
pub(crate) fn recenter(task: TaskKind, y: &Vector, alpha: &Vector) -> Vector {
    match task {
        TaskKind::Regression => {
            let mean = alpha.mean();
            alpha.map(|a| a - mean)
        }
        TaskKind::Classification => {
            let a: Vec<f64> = alpha
                .iter()
                .zip(y.iter())
                .map(|(al, yi)| (yi * al).clamp(0.0, 1.0))
                .collect();
            let pos: f64 = a.iter().zip(y.iter()).filter(|(_, &yi)| yi > 0.0).map(|(v, _)| v).sum();
            let neg: f64 = a.iter().zip(y.iter()).filter(|(_, &yi)| yi < 0.0).map(|(v, _)| v).sum();
            let (fp, fn_) = if pos > neg {
                (neg / pos, 1.0)
            } else if neg > pos {
                (1.0, pos / neg)
            } else {
                (1.0, 1.0)
            };
            Vector::from_iterator(
                a.len(),
                a.iter().zip(y.iter()).map(|(v, &yi)| {
                    if yi > 0.0 {
                        v * fp
                    } else {
                        -v * fn_
                    }
                }),
            )
        }
    }
}

/// Completes the gap once the certificate norms are known.
///
/// `alpha_c` must already satisfy the sum/box constraints; `norms[i]` is the
/// spectral norm of the i-th certificate unfolding and `radii[i]` its allowed
/// radius.
pub(crate) fn finish(
    task: TaskKind,
    y: &Vector,
    alpha_c: Vector,
    norms: Vec<f64>,
    radii: &[f64],
    primal: f64,
) -> Result<GapEvaluation> {
    let mut scale = 1.0_f64;
    for (&n, &r) in norms.iter().zip(radii) {
        if n > r {
            scale = scale.min(r / n);
        }
    }
    let alpha_hat = alpha_c * scale;
    let dual = dual_objective(alpha_hat.as_slice(), y.as_slice(), task)?;
    if !(primal > 0.0) {
        return Err(Error::Degenerate(format!("primal objective {primal} is not positive")));
    }
    Ok(GapEvaluation {
        relative_gap: (primal - dual) / primal,
        primal,
        dual,
        alpha_hat,
        scale,
        v_norms: norms,
    })
}

/// Relative duality gap `(P − D(α̂)) / P` for a latent-type problem.
///
/// α is recentered onto the bias constraint, then multiplied by
/// `min(1, min_k λ_k / ‖V(α)_(k)‖_op)` with `V(α) = Σ α_i X_i`, which places
/// it inside every spectral-norm ball.
pub fn duality_gap(
    design: &Design,
    alpha: &Vector,
    modes: &[usize],
    lambdas: &[f64],
    primal: f64,
) -> Result<GapEvaluation> {
    if alpha.len() != design.samples() || alpha.iter().any(|a| !a.is_finite()) {
        return Err(Error::Config("α must be finite with one entry per sample".into()));
    }
    let alpha_c = recenter(design.task(), design.y(), alpha);
    let v = design.apply_t(&alpha_c);
    let mut norms = Vec::with_capacity(modes.len());
    for &k in modes {
        norms.push(linalg::spectral_norm(&unfold_raw(v.as_slice(), design.shape(), k))?);
    }
    finish(design.task(), design.y(), alpha_c, norms, lambdas, primal)
}
