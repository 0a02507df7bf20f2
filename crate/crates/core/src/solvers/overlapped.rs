//! Primal ADMM for overlapped trace-norm learning.
//!
//! Each active mode gets a copy `Z_k` of the weight tensor, constrained to
//! equal `W`. In scaled form with penalty β:
//!
//! * W-step: minimize the loss plus `(β/2) Σ_k ‖W − Z_k + U_k‖²` jointly with
//!   the bias (a linear system for the squared loss, Newton-CG for the
//!   logistic loss);
//! * Z-step: `Z_k ← prox_{λ_k/β}(W + U_k)` on the mode-k unfolding;
//! * `U_k ← U_k + W − Z_k`.
//!
//! Stopping uses a relative duality gap. The dual point is the loss gradient
//! at the current scores and its split across modes is built from the scaled
//! multipliers, so every iterate yields a feasible certificate after scaling.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, cg_solve, SymmetricSpectrum, Vector};
use crate::losses::{empirical_loss, sigmoid, softplus, TaskKind};
use crate::tensor::{fold_raw, unfold_raw, DenseTensor};

use super::gap::{self, GapEvaluation};
use super::{Design, FitReport, IterationRecord, Model, NewtonConfig, NormKind, SolverConfig};

/// How the squared-loss W-step is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WStepSolver {
    /// Spectral solve with the design's centered Gram eigendecomposition, on
    /// the smaller of the sample and feature sides.
    #[default]
    Direct,
    /// Matrix-free conjugate gradients, warm-started from the previous W.
    Cg,
}

const CG_TOL: f64 = 1e-12;

pub struct OverlappedAdmm<'a> {
    design: &'a Design,
    modes: Vec<usize>,
    weights: Vec<f64>,
    beta: f64,
    w_step: WStepSolver,
    /// Column means of the design.
    x_mean: Vector,
    /// Spectrum of `J G J` (samples side) or `X̃ᵀX̃` (features side).
    spectrum: Option<&'a SymmetricSpectrum>,
    samples_side: bool,
}

struct AdmmState {
    w: Vector,
    bias: f64,
    z: Vec<Vector>,
    u: Vec<Vector>,
}

impl<'a> OverlappedAdmm<'a> {
    pub fn new(design: &'a Design, norm: &NormKind, beta: f64) -> Result<Self> {
        Self::with_w_step(design, norm, beta, WStepSolver::default())
    }

    pub fn with_w_step(design: &'a Design, norm: &NormKind, beta: f64, w_step: WStepSolver) -> Result<Self> {
        let NormKind::Overlapped { modes, weights } = norm else {
            return Err(Error::Config("primal ADMM needs an overlapped norm".into()));
        };
        norm.validate(design.shape().len())?;
        if !(beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        let spectrum = if design.task() == TaskKind::Regression && w_step == WStepSolver::Direct {
            Some(design.centered_spectrum()?)
        } else {
            None
        };
        Ok(Self {
            design,
            modes: modes.clone(),
            weights: weights.clone(),
            beta,
            w_step,
            x_mean: design.column_means(),
            spectrum,
            samples_side: design.centered_on_samples(),
        })
    }

    pub fn w_step(&self) -> WStepSolver {
        self.w_step
    }

    fn penalty(&self) -> f64 {
        self.modes.len() as f64 * self.beta
    }

    /// `X̃ v` with `X̃` the column-centered design.
    fn centered_apply(&self, v: &Vector) -> Vector {
        self.design.apply(v).add_scalar(-self.x_mean.dot(v))
    }

    /// `X̃ᵀ s`
    fn centered_apply_t(&self, s: &Vector) -> Vector {
        self.design.apply_t(s) - &self.x_mean * s.sum()
    }

    /// Solves `(X̃ᵀX̃ + cI) w = rhs`.
    fn solve_normal(&self, rhs: &Vector, warm: &Vector) -> Result<Vector> {
        let c = self.penalty();
        match self.spectrum {
            // Woodbury: (X̃ᵀX̃ + cI)⁻¹ = (I − X̃ᵀ(cI + X̃X̃ᵀ)⁻¹X̃) / c
            Some(spec) if self.samples_side => {
                let t = spec.solve_shifted(1.0, c, &self.centered_apply(rhs))?;
                Ok((rhs - self.centered_apply_t(&t)) / c)
            }
            Some(spec) => spec.solve_shifted(1.0, c, rhs),
            None => {
                let out = cg_solve(
                    |v, out| {
                        *out = self.centered_apply_t(&self.centered_apply(v)) + v * c;
                    },
                    rhs,
                    Some(warm),
                    CG_TOL,
                    10 * rhs.len().max(10),
                )?;
                if !out.converged {
                    return Err(Error::CgDiverged {
                        residual: out.relative_residual,
                    });
                }
                Ok(out.x)
            }
        }
    }

    fn center_target(&self) -> (Vector, f64) {
        let y = self.design.y();
        let mean = y.mean();
        (y.add_scalar(-mean), mean)
    }

    fn w_step_squared(&self, state: &mut AdmmState, target_mean: f64, xty: &Vector) -> Result<()> {
        let mut anchor = Vector::zeros(state.w.len());
        for (z, u) in state.z.iter().zip(&state.u) {
            anchor += z - u;
        }
        let rhs = xty + anchor * self.beta;
        state.w = self.solve_normal(&rhs, &state.w)?;
        state.bias = target_mean - self.x_mean.dot(&state.w);
        Ok(())
    }

    /// Newton-CG on `Σ softplus(−y_i s_i) + (c/2)‖w − d‖²` over `(w, b)`.
    fn w_step_logistic(&self, state: &mut AdmmState, newton: &NewtonConfig) -> Result<()> {
        let c = self.penalty();
        let n = state.w.len();
        let mut anchor = Vector::zeros(n);
        for (z, u) in state.z.iter().zip(&state.u) {
            anchor += z - u;
        }
        anchor /= self.modes.len() as f64;
        let y = self.design.y();
        let objective = |w: &Vector, b: f64| -> f64 {
            let s = self.design.apply(w).add_scalar(b);
            let loss: f64 = s.iter().zip(y.iter()).map(|(s, y)| softplus(-y * s)).sum();
            loss + 0.5 * c * (w - &anchor).norm_squared()
        };
        let mut w = state.w.clone();
        let mut b = state.bias;
        let mut f = objective(&w, b);
        for _ in 0..newton.max_iters {
            let s = self.design.apply(&w).add_scalar(b);
            let g = Vector::from_fn(s.len(), |i, _| -y[i] * sigmoid(-y[i] * s[i]));
            let curv = s.map(|s| {
                let p = sigmoid(s);
                p * (1.0 - p)
            });
            let grad_w = self.design.apply_t(&g) + (&w - &anchor) * c;
            let grad_b = g.sum();
            let mut grad = grad_w.clone().insert_row(n, grad_b);
            let gnorm = grad.norm();
            if gnorm <= newton.tol {
                break;
            }
            grad.neg_mut();
            let step = cg_solve(
                |v, out| {
                    let vw = v.rows(0, n).into_owned();
                    let t = (self.design.apply(&vw).add_scalar(v[n])).component_mul(&curv);
                    let hw = self.design.apply_t(&t) + vw * c;
                    out.rows_mut(0, n).copy_from(&hw);
                    out[n] = t.sum();
                },
                &grad,
                None,
                CG_TOL,
                10 * (n + 1),
            )?;
            let dir = step.x;
            let slope = -grad.dot(&dir);
            if slope >= 0.0 {
                return Err(Error::NewtonFailure);
            }
            let mut t = 1.0;
            loop {
                let wt = &w + dir.rows(0, n) * t;
                let bt = b + dir[n] * t;
                let ft = objective(&wt, bt);
                if ft <= f + newton.armijo * t * slope {
                    w = wt;
                    b = bt;
                    f = ft;
                    break;
                }
                t *= newton.backtrack;
                if t < 1e-14 {
                    if -slope <= 1e-12 * (1.0 + f.abs()) {
                        state.w = w;
                        state.bias = b;
                        return Ok(());
                    }
                    return Err(Error::NewtonFailure);
                }
            }
        }
        state.w = w;
        state.bias = b;
        Ok(())
    }

    fn prox(&self, arg: &Vector, mode: usize, tau: f64) -> Result<Vector> {
        let shape = self.design.shape();
        let svd = linalg::thin_svd(&unfold_raw(arg.as_slice(), shape, mode))?;
        let (mat, _) = linalg::sv_soft_threshold_svd(&svd, tau);
        let mut out = Vector::zeros(arg.len());
        fold_raw(&mat, shape, mode, out.as_mut_slice());
        Ok(out)
    }

    fn evaluate(&self, state: &AdmmState, lambdas: &[f64]) -> Result<GapEvaluation> {
        let task = self.design.task();
        let y = self.design.y();
        let shape = self.design.shape();
        let scores = self.design.apply(&state.w).add_scalar(state.bias);
        let mut reg = 0.0;
        for (&k, &l) in self.modes.iter().zip(lambdas) {
            reg += l * linalg::trace_norm(&unfold_raw(state.w.as_slice(), shape, k))?;
        }
        let primal = empirical_loss(scores.as_slice(), y.as_slice(), task) + reg;

        // negative loss gradient at the current scores
        let alpha = match task {
            TaskKind::Regression => y - &scores,
            TaskKind::Classification => Vector::from_fn(y.len(), |i, _| y[i] * sigmoid(-y[i] * scores[i])),
        };
        let alpha_c = gap::recenter(task, y, &alpha);
        let total = self.design.apply_t(&alpha_c);
        let count = self.modes.len() as f64;
        let mut spread = total.clone();
        for u in &state.u {
            spread.axpy(-self.beta, u, 1.0);
        }
        spread /= count;
        let mut norms = Vec::with_capacity(self.modes.len());
        for (u, &k) in state.u.iter().zip(&self.modes) {
            let part = u * self.beta + &spread;
            norms.push(linalg::spectral_norm(&unfold_raw(part.as_slice(), shape, k))?);
        }
        if !(primal > 0.0) {
            let dual = crate::losses::dual_objective(alpha_c.as_slice(), y.as_slice(), task)?;
            return Ok(GapEvaluation {
                relative_gap: 0.0,
                primal,
                dual,
                alpha_hat: alpha_c,
                scale: 1.0,
                v_norms: norms,
            });
        }
        gap::finish(task, y, alpha_c, norms, lambdas, primal)
    }

    /// Runs the solver with the β fixed at construction; `cfg.beta` is ignored.
    pub fn fit(&self, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
        cfg.validate()?;
        let started = Instant::now();
        let lambdas: Vec<f64> = self.weights.iter().map(|w| w * cfg.lambda).collect();
        let n = self.design.features();
        let count = self.modes.len();
        let mut state = AdmmState {
            w: Vector::zeros(n),
            bias: 0.0,
            z: vec![Vector::zeros(n); count],
            u: vec![Vector::zeros(n); count],
        };
        let (target, target_mean) = self.center_target();
        let xty = self.design.apply_t(&target);

        let mut history = Vec::new();
        let mut best: Option<(f64, Vector, f64, Vec<f64>)> = None;
        let mut converged = false;
        for _ in 0..cfg.max_outer_iters {
            match self.design.task() {
                TaskKind::Regression => self.w_step_squared(&mut state, target_mean, &xty)?,
                TaskKind::Classification => self.w_step_logistic(&mut state, &cfg.newton)?,
            }
            for (slot, &lambda) in lambdas.iter().enumerate() {
                let arg = &state.w + &state.u[slot];
                state.z[slot] = self.prox(&arg, self.modes[slot], lambda / self.beta)?;
                state.u[slot] = arg - &state.z[slot];
            }
            let eval = self.evaluate(&state, &lambdas)?;
            if !eval.primal.is_finite() || !eval.relative_gap.is_finite() {
                return Err(Error::Degenerate("solver produced non-finite objective".into()));
            }
            history.push(IterationRecord {
                primal: eval.primal,
                dual: eval.dual,
                relative_gap: eval.relative_gap,
            });
            if best.as_ref().is_none_or(|(g, ..)| eval.relative_gap < *g) {
                best = Some((eval.relative_gap, state.w.clone(), state.bias, eval.v_norms.clone()));
            }
            if eval.relative_gap <= cfg.tol {
                converged = true;
                break;
            }
        }
        let (final_gap, w, bias, v_norms) = best.expect("at least one iteration");
        let model = Model {
            norm: NormKind::Overlapped {
                modes: self.modes.clone(),
                weights: self.weights.clone(),
            },
            lambda: cfg.lambda,
            task: self.design.task(),
            weight: DenseTensor::new(self.design.shape().to_vec(), w.as_slice().to_vec())?,
            latent_parts: None,
            bias,
        };
        let report = FitReport {
            iterations: history.len(),
            history,
            final_v_norms: v_norms,
            converged,
            final_relative_gap: final_gap,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        Ok((model, report))
    }
}

/// Fits an overlapped-type norm by primal ADMM.
pub fn fit_overlapped_primal_admm(data: &Dataset, norm: &NormKind, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
    let design = Design::from_dataset(data)?;
    OverlappedAdmm::new(&design, norm, cfg.effective_beta(norm))?.fit(cfg)
}
