//! ADMM on the dual of latent-type trace-norm learning.
//!
//! The dual variables are α (one per sample) and auxiliary tensors `V_k`
//! constrained to equal `Σ α_i X_i` inside spectral-norm balls of radius
//! `λ_k`. The multipliers of those constraints are the latent weight
//! components `W_k`, and the multiplier of `Σ α_i = 0` is the bias.
//!
//! Each outer iteration:
//! 1. α-step: a fixed SPD system for the squared loss, solved through the
//!    design's Gram eigendecomposition plus a rank-one correction, so no
//!    factorization is repeated across λ or β; damped Newton for the
//!    logistic loss;
//! 2. per mode, `W_k ← prox_{βλ_k}(W_k + β Σ α_i X_i)` on the mode-k
//!    unfolding, with `V_k` recovered from the same SVD by clipping;
//! 3. `b ← b + β Σ α_i`.
//!
//! Products with the data are kept in sample space: `X W̄` and `X V̄` are
//! cached in the state and `X Xᵀ` comes from the design's Gram matrix.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, thin_svd, Matrix, SpdFactor, SymmetricSpectrum, Vector};
use crate::losses::{empirical_loss, TaskKind};
use crate::tensor::{fold_raw, unfold_raw, DenseTensor};

use super::gap::{self, GapEvaluation};
use super::{Design, FitReport, IterationRecord, Model, NewtonConfig, NormKind, SolverConfig};

/// Iterate of the dual ADMM.
#[derive(Debug, Clone)]
pub struct DualAdmmState {
    pub alpha: Vector,
    /// Latent weight components `W_k` (flattened), one per active mode.
    pub parts: Vec<Vector>,
    /// Auxiliary dual tensors `V_k` (flattened), one per active mode.
    pub aux: Vec<Vector>,
    pub bias: f64,
    xw: Vector,
    xv: Vector,
}

impl DualAdmmState {
    /// Builds a state and its cached products `X W̄`, `X V̄`.
    pub fn new(design: &Design, alpha: Vector, parts: Vec<Vector>, aux: Vec<Vector>, bias: f64) -> Self {
        let n = design.features();
        let sum = |vs: &[Vector]| vs.iter().fold(Vector::zeros(n), |acc, v| acc + v);
        let xw = design.apply(&sum(&parts));
        let xv = design.apply(&sum(&aux));
        Self {
            alpha,
            parts,
            aux,
            bias,
            xw,
            xv,
        }
    }

    pub fn weight_sum(&self) -> Vector {
        let n = self.parts[0].len();
        self.parts.iter().fold(Vector::zeros(n), |acc, v| acc + v)
    }

    /// `X W̄`, the predictions without bias.
    pub fn scores_without_bias(&self) -> &Vector {
        &self.xw
    }
}

/// The α-subproblem of the logistic dual: the augmented Lagrangian as a
/// function of α with `W_k`, `V_k` and `b` held fixed (constants dropped).
///
/// With `a_i = y_i α_i`,
/// `f(α) = Σ a_i log a_i + (1 − a_i) log(1 − a_i) + αᵀ X W̄
///        + (β/2)(K αᵀ G α − 2 αᵀ X V̄) + b Σα + (β/2)(Σα)²`.
pub struct LogisticAlphaProblem<'a> {
    gram: &'a Matrix,
    y: &'a Vector,
    xw: &'a Vector,
    xv: &'a Vector,
    bias: f64,
    beta: f64,
    count: f64,
}

impl LogisticAlphaProblem<'_> {
    pub fn is_interior(&self, alpha: &Vector) -> bool {
        alpha
            .iter()
            .zip(self.y.iter())
            .all(|(a, y)| {
                let ya = a * y;
                ya > 0.0 && ya < 1.0
            })
    }

    pub fn value(&self, alpha: &Vector) -> f64 {
        if !self.is_interior(alpha) {
            return f64::INFINITY;
        }
        let entropy: f64 = alpha
            .iter()
            .zip(self.y.iter())
            .map(|(a, y)| {
                let ya = a * y;
                ya * ya.ln() + (1.0 - ya) * (1.0 - ya).ln()
            })
            .sum();
        let s = alpha.sum();
        let ga = self.gram * alpha;
        entropy
            + alpha.dot(self.xw)
            + 0.5 * self.beta * (self.count * alpha.dot(&ga) - 2.0 * alpha.dot(self.xv))
            + self.bias * s
            + 0.5 * self.beta * s * s
    }

    /// `y_i log(a_i/(1−a_i)) + ⟨W̄, X_i⟩ + β⟨X_i, K Σ_j α_j X_j − V̄⟩ + b + β Σ α`
    pub fn gradient(&self, alpha: &Vector) -> Vector {
        let s = alpha.sum();
        let ga = self.gram * alpha;
        Vector::from_fn(alpha.len(), |i, _| {
            let y = self.y[i];
            let ya = y * alpha[i];
            y * (ya / (1.0 - ya)).ln()
                + self.xw[i]
                + self.beta * (self.count * ga[i] - self.xv[i])
                + self.bias
                + self.beta * s
        })
    }

    /// `diag(1/(a_i(1−a_i))) + K β G + β 1 1ᵀ`
    pub fn hessian(&self, alpha: &Vector) -> Matrix {
        let m = alpha.len();
        let mut h = self.gram * (self.count * self.beta);
        h.add_scalar_mut(self.beta);
        for i in 0..m {
            let ya = self.y[i] * alpha[i];
            h[(i, i)] += 1.0 / (ya * (1.0 - ya));
        }
        h
    }

    /// Damped Newton from an interior starting point.
    pub fn solve(&self, start: &Vector, cfg: &NewtonConfig) -> Result<Vector> {
        if !self.is_interior(start) {
            return Err(Error::Infeasible("Newton start must satisfy 0 < y_i α_i < 1".into()));
        }
        let mut alpha = start.clone();
        let mut f = self.value(&alpha);
        for _ in 0..cfg.max_iters {
            let g = self.gradient(&alpha);
            if g.norm() <= cfg.tol {
                break;
            }
            let h = self.hessian(&alpha);
            let dir = -SpdFactor::new(h)?.solve_vec(&g);
            let slope = g.dot(&dir);
            if slope >= 0.0 {
                return Err(Error::NewtonFailure);
            }
            // largest step keeping every y_i α_i inside (0, 1)
            let mut t_max = f64::INFINITY;
            for i in 0..alpha.len() {
                let ya = self.y[i] * alpha[i];
                let yd = self.y[i] * dir[i];
                if yd < 0.0 {
                    t_max = t_max.min(ya / -yd);
                } else if yd > 0.0 {
                    t_max = t_max.min((1.0 - ya) / yd);
                }
            }
            let mut t = (cfg.interior_margin * t_max).min(1.0);
            loop {
                let trial = &alpha + &dir * t;
                let ft = self.value(&trial);
                if ft <= f + cfg.armijo * t * slope {
                    alpha = trial;
                    f = ft;
                    break;
                }
                t *= cfg.backtrack;
                if t < 1e-14 {
                    // no measurable decrease left: accept when already at rounding level
                    if -slope <= 1e-12 * (1.0 + f.abs()) {
                        return Ok(alpha);
                    }
                    return Err(Error::NewtonFailure);
                }
            }
        }
        Ok(alpha)
    }
}

/// Dual ADMM solver bound to one design, mode set and penalty β.
pub struct DualAdmm<'a> {
    design: &'a Design,
    modes: Vec<usize>,
    weights: Vec<f64>,
    beta: f64,
    /// Regression α-system data: `(K β G + I)⁻¹ 1` and `1 + β 1ᵀ(K β G + I)⁻¹ 1`.
    regression: Option<(&'a SymmetricSpectrum, Vector, f64)>,
}

/// Outcome of one outer iteration.
struct StepInfo {
    /// Trace norms of the new `W_k` unfoldings.
    traces: Vec<f64>,
    /// `Σ α_i X_i` at the new α.
    v_alpha: Vector,
}

impl<'a> DualAdmm<'a> {
    pub fn new(design: &'a Design, norm: &NormKind, beta: f64) -> Result<Self> {
        let NormKind::Latent { modes, weights } = norm else {
            return Err(Error::Config("dual ADMM needs a latent-type norm".into()));
        };
        norm.validate(design.shape().len())?;
        if !(beta > 0.0) {
            return Err(Error::Config("beta must be positive".into()));
        }
        if design.samples() < 2 {
            return Err(Error::Config("dual ADMM needs at least two samples".into()));
        }
        if design.task() == TaskKind::Classification {
            let pos = design.y().iter().filter(|&&y| y > 0.0).count();
            if pos == 0 || pos == design.samples() {
                return Err(Error::Config("classification needs both labels present".into()));
            }
        }
        let mut solver = Self {
            design,
            modes: modes.clone(),
            weights: weights.clone(),
            beta,
            regression: None,
        };
        if design.task() == TaskKind::Regression {
            let spectrum = design.gram_spectrum()?;
            let ones = Vector::from_element(design.samples(), 1.0);
            let solved = spectrum.solve_shifted(solver.penalty(), 1.0, &ones)?;
            let denom = 1.0 + beta * solved.sum();
            solver.regression = Some((spectrum, solved, denom));
        }
        Ok(solver)
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    fn penalty(&self) -> f64 {
        self.modes.len() as f64 * self.beta
    }

    pub fn modes(&self) -> &[usize] {
        &self.modes
    }

    /// `λ_k = λ · weight_k` for every active mode.
    pub fn lambdas(&self, lambda: f64) -> Vec<f64> {
        self.weights.iter().map(|w| w * lambda).collect()
    }

    /// `K β X Xᵀ + I + β 1 1ᵀ`
    pub fn alpha_matrix(&self) -> Matrix {
        let m = self.design.samples();
        let mut a = self.design.gram() * self.penalty();
        a.add_scalar_mut(self.beta);
        for i in 0..m {
            a[(i, i)] += 1.0;
        }
        a
    }

    /// `y − X vec(W̄) + β X vec(V̄) − b 1`
    pub fn alpha_rhs(&self, state: &DualAdmmState) -> Vector {
        let mut rhs = self.design.y() - &state.xw + &state.xv * self.beta;
        rhs.add_scalar_mut(-state.bias);
        rhs
    }

    pub fn initial_state(&self) -> DualAdmmState {
        let m = self.design.samples();
        let n = self.design.features();
        let alpha = match self.design.task() {
            TaskKind::Regression => Vector::zeros(m),
            TaskKind::Classification => {
                // y_i α_i = ½, then shifted onto Σ α = 0
                let half = self.design.y() * 0.5;
                let mean = half.mean();
                half.map(|a| a - mean)
            }
        };
        let count = self.modes.len();
        DualAdmmState {
            alpha,
            parts: vec![Vector::zeros(n); count],
            aux: vec![Vector::zeros(n); count],
            bias: 0.0,
            xw: Vector::zeros(m),
            xv: Vector::zeros(m),
        }
    }

    pub fn alpha_update_regression(&self, state: &DualAdmmState) -> Result<Vector> {
        let (spectrum, ones_solved, denom) = self
            .regression
            .as_ref()
            .ok_or_else(|| Error::Config("regression α-step on a classification design".into()))?;
        // Sherman–Morrison for the β 1 1ᵀ term
        let base = spectrum.solve_shifted(self.penalty(), 1.0, &self.alpha_rhs(state))?;
        let shift = self.beta * base.sum() / denom;
        Ok(base - ones_solved * shift)
    }

    pub fn logistic_problem<'s>(&'s self, state: &'s DualAdmmState) -> LogisticAlphaProblem<'s> {
        LogisticAlphaProblem {
            gram: self.design.gram(),
            y: self.design.y(),
            xw: &state.xw,
            xv: &state.xv,
            bias: state.bias,
            beta: self.beta,
            count: self.modes.len() as f64,
        }
    }

    pub fn alpha_update_logistic(&self, state: &DualAdmmState, newton: &NewtonConfig) -> Result<Vector> {
        self.logistic_problem(state).solve(&state.alpha, newton)
    }

    pub fn alpha_update(&self, state: &DualAdmmState, newton: &NewtonConfig) -> Result<Vector> {
        match self.design.task() {
            TaskKind::Regression => self.alpha_update_regression(state),
            TaskKind::Classification => self.alpha_update_logistic(state, newton),
        }
    }

    /// Two-step form, projection: `V_k = proj_{λ_k}(W_k/β + Σ α_i X_i)` on mode k.
    pub fn v_update(&self, state: &DualAdmmState, slot: usize, alpha: &Vector, lambda_k: f64) -> Result<Vector> {
        let shape = self.design.shape();
        let mode = self.modes[slot];
        let arg = &state.parts[slot] / self.beta + self.design.apply_t(alpha);
        let clipped = linalg::sv_clip(&unfold_raw(arg.as_slice(), shape, mode), lambda_k)?;
        let mut out = Vector::zeros(arg.len());
        fold_raw(&clipped, shape, mode, out.as_mut_slice());
        Ok(out)
    }

    /// Two-step form, multiplier step: `W_k + β(Σ α_i X_i − V_k)`.
    pub fn w_update_two_step(&self, state: &DualAdmmState, slot: usize, alpha: &Vector, v: &Vector) -> Vector {
        &state.parts[slot] + (self.design.apply_t(alpha) - v) * self.beta
    }

    /// Combined form: `prox_{βλ_k}(W_k + β Σ α_i X_i)` on mode k.
    pub fn w_update_combined(&self, state: &DualAdmmState, slot: usize, alpha: &Vector, lambda_k: f64) -> Result<Vector> {
        let v_alpha = self.design.apply_t(alpha);
        Ok(self.prox_and_clip(&state.parts[slot], &v_alpha, slot, lambda_k)?.0)
    }

    pub fn bias_update(&self, state: &DualAdmmState, alpha: &Vector) -> f64 {
        state.bias + self.beta * alpha.sum()
    }

    /// New `W_k`, `V_k` and the trace norm of the new `W_k` from one SVD.
    fn prox_and_clip(&self, part: &Vector, v_alpha: &Vector, slot: usize, lambda_k: f64) -> Result<(Vector, Vector, f64)> {
        let shape = self.design.shape();
        let mode = self.modes[slot];
        let arg = part + v_alpha * self.beta;
        let svd = thin_svd(&unfold_raw(arg.as_slice(), shape, mode))?;
        let threshold = self.beta * lambda_k;
        let (w_mat, trace) = linalg::sv_soft_threshold_svd(&svd, threshold);
        let v_mat = svd.reconstruct_with(|s| s.min(threshold) / self.beta);
        let mut w = Vector::zeros(arg.len());
        let mut v = Vector::zeros(arg.len());
        fold_raw(&w_mat, shape, mode, w.as_mut_slice());
        fold_raw(&v_mat, shape, mode, v.as_mut_slice());
        Ok((w, v, trace))
    }

    fn step(&self, state: &mut DualAdmmState, lambdas: &[f64], newton: &NewtonConfig) -> Result<StepInfo> {
        let alpha = self.alpha_update(state, newton)?;
        let v_alpha = self.design.apply_t(&alpha);
        let mut traces = Vec::with_capacity(self.modes.len());
        for (slot, &lambda) in lambdas.iter().enumerate() {
            let (w, v, trace) = self.prox_and_clip(&state.parts[slot], &v_alpha, slot, lambda)?;
            state.parts[slot] = w;
            state.aux[slot] = v;
            traces.push(trace);
        }
        state.bias = self.bias_update(state, &alpha);
        state.alpha = alpha;
        state.xw = self.design.apply(&state.weight_sum());
        let n = self.design.features();
        let v_sum = state.aux.iter().fold(Vector::zeros(n), |acc, v| acc + v);
        state.xv = self.design.apply(&v_sum);
        Ok(StepInfo { traces, v_alpha })
    }

    fn evaluate(&self, state: &DualAdmmState, info: &StepInfo, lambdas: &[f64]) -> Result<GapEvaluation> {
        let task = self.design.task();
        let y = self.design.y();
        let scores = state.xw.add_scalar(state.bias);
        let loss = empirical_loss(scores.as_slice(), y.as_slice(), task);
        let reg: f64 = info.traces.iter().zip(lambdas).map(|(t, l)| t * l).sum();
        let primal = loss + reg;

        let alpha_c = gap::recenter(task, y, &state.alpha);
        let v = match task {
            TaskKind::Regression => {
                let shift = state.alpha.mean();
                &info.v_alpha - self.design.column_sums() * shift
            }
            TaskKind::Classification => self.design.apply_t(&alpha_c),
        };
        let shape = self.design.shape();
        let mut norms = Vec::with_capacity(self.modes.len());
        for &k in &self.modes {
            norms.push(linalg::spectral_norm(&unfold_raw(v.as_slice(), shape, k))?);
        }
        if !(primal > 0.0) {
            // exact fit with zero regularization cost: nothing left to close
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

    pub fn fit(&self, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
        self.fit_observed(cfg, |_, _, _| {})
    }

    /// Runs the solver, calling `observer(iteration, state, record)` after every
    /// outer iteration. The penalty β fixed at construction is used; `cfg.beta`
    /// is ignored here.
    pub fn fit_observed(
        &self,
        cfg: &SolverConfig,
        mut observer: impl FnMut(usize, &DualAdmmState, &IterationRecord),
    ) -> Result<(Model, FitReport)> {
        cfg.validate()?;
        let started = Instant::now();
        let lambdas = self.lambdas(cfg.lambda);
        let mut state = self.initial_state();
        let mut history = Vec::new();
        let mut best: Option<(f64, DualAdmmState, Vec<f64>)> = None;
        let mut converged = false;

        for it in 1..=cfg.max_outer_iters {
            let info = self.step(&mut state, &lambdas, &cfg.newton)?;
            let eval = self.evaluate(&state, &info, &lambdas)?;
            let record = IterationRecord {
                primal: eval.primal,
                dual: eval.dual,
                relative_gap: eval.relative_gap,
            };
            history.push(record);
            observer(it, &state, &record);
            if !record.relative_gap.is_finite() || !record.primal.is_finite() {
                return Err(Error::Degenerate("solver produced non-finite objective".into()));
            }
            if best.as_ref().is_none_or(|(g, _, _)| eval.relative_gap < *g) {
                best = Some((eval.relative_gap, state.clone(), eval.v_norms.clone()));
            }
            if eval.relative_gap <= cfg.tol {
                converged = true;
                break;
            }
        }

        let (final_gap, state, v_norms) = best.expect("at least one iteration");
        let shape = self.design.shape();
        let parts: Vec<DenseTensor> = state
            .parts
            .iter()
            .map(|p| DenseTensor::new(shape.to_vec(), p.as_slice().to_vec()))
            .collect::<Result<_>>()?;
        let weight = DenseTensor::new(shape.to_vec(), state.weight_sum().as_slice().to_vec())?;
        let model = Model {
            norm: NormKind::Latent {
                modes: self.modes.clone(),
                weights: self.weights.clone(),
            },
            lambda: cfg.lambda,
            task: self.design.task(),
            weight,
            latent_parts: Some(parts),
            bias: state.bias,
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

/// Fits a latent-type norm by dual ADMM.
pub fn fit_dual_admm(data: &Dataset, norm: &NormKind, cfg: &SolverConfig) -> Result<(Model, FitReport)> {
    let design = Design::from_dataset(data)?;
    DualAdmm::new(&design, norm, cfg.effective_beta(norm))?.fit(cfg)
}
