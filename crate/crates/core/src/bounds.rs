//! Excess-risk bounds for trace-norm regularized tensor learning and a Monte
//! Carlo estimator of the expected dual norm of `M = Σ σ_i X_i`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub shape: Vec<usize>,
    pub ranks: Vec<usize>,
    pub samples: usize,
    /// Frobenius radius of the reference weight tensor.
    pub radius: f64,
    pub lipschitz: f64,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
    /// Constant in front of `√(2 log K)`.
    pub c_log: f64,
}

impl BoundInputs {
    pub fn new(shape: Vec<usize>, ranks: Vec<usize>, samples: usize) -> Self {
        Self {
            shape,
            ranks,
            samples,
            radius: 1.0,
            lipschitz: 1.0,
            delta: 0.1,
            c1: 1.0,
            c2: 1.0,
            c_log: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.is_empty() || self.shape.contains(&0) {
            return Err(Error::Config("shape must have positive dimensions".into()));
        }
        if self.ranks.len() != self.shape.len() || self.ranks.iter().zip(&self.shape).any(|(r, n)| r > n) {
            return Err(Error::Config(format!(
                "ranks {:?} do not fit shape {:?}",
                self.ranks, self.shape
            )));
        }
        if self.samples == 0 {
            return Err(Error::Config("sample count must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        for (name, v) in [
            ("radius", self.radius),
            ("lipschitz", self.lipschitz),
            ("c1", self.c1),
            ("c2", self.c2),
            ("c_log", self.c_log),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn total(&self) -> f64 {
        self.shape.iter().map(|&n| n as f64).product()
    }

    /// `√n_k + √(N/n_k)` for every mode, evaluated as `(n_k + √N)/√n_k` so it
    /// shares its rounding with the scaled quantities below.
    fn balanced_dims(&self) -> Vec<f64> {
        self.scaled_dims()
            .iter()
            .zip(&self.shape)
            .map(|(d, &n)| d / (n as f64).sqrt())
            .collect()
    }

    /// `n_k + √N` for every mode.
    fn scaled_dims(&self) -> Vec<f64> {
        let root = self.total().sqrt();
        self.shape.iter().map(|&n| n as f64 + root).collect()
    }

    fn log_term(&self) -> f64 {
        self.c_log * (2.0 * (self.shape.len() as f64).ln()).sqrt()
    }

    fn confidence(&self) -> f64 {
        self.c2 * confidence_term(self.delta, self.samples)
    }

    fn prefactor(&self) -> f64 {
        self.c1 * self.lipschitz * self.radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundNorm {
    Overlapped,
    Latent,
    ScaledLatent,
    ScaledOverlapped,
}

impl BoundNorm {
    pub const ALL: [BoundNorm; 4] = [
        BoundNorm::Overlapped,
        BoundNorm::Latent,
        BoundNorm::ScaledLatent,
        BoundNorm::ScaledOverlapped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BoundNorm::Overlapped => "overlapped",
            BoundNorm::Latent => "latent",
            BoundNorm::ScaledLatent => "scaled_latent",
            BoundNorm::ScaledOverlapped => "scaled_overlapped",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub norm: BoundNorm,
    pub inputs: BoundInputs,
    pub complexity: f64,
    pub confidence: f64,
    pub value: f64,
    /// Mode attaining the rank-side extremum, if the bound selects one.
    pub rank_mode: Option<usize>,
    /// Mode attaining the dimension-side extremum.
    pub dim_mode: usize,
}

impl BoundReport {
    fn new(norm: BoundNorm, inputs: &BoundInputs, complexity: f64, rank_mode: Option<usize>, dim_mode: usize) -> Self {
        let confidence = inputs.confidence();
        Self {
            norm,
            inputs: inputs.clone(),
            complexity,
            confidence,
            value: complexity + confidence,
            rank_mode,
            dim_mode,
        }
    }

    pub const CSV_HEADER: &'static str =
        "norm,shape,ranks,m,radius,lipschitz,delta,c1,c2,c_log,complexity,confidence,total,rank_mode,dim_mode";

    pub fn csv_row(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("x");
        let i = &self.inputs;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{:e},{:e},{:e},{},{}",
            self.norm.name(),
            join(&i.shape),
            join(&i.ranks),
            i.samples,
            i.radius,
            i.lipschitz,
            i.delta,
            i.c1,
            i.c2,
            i.c_log,
            self.complexity,
            self.confidence,
            self.value,
            self.rank_mode.map(|k| k.to_string()).unwrap_or_default(),
            self.dim_mode
        )
    }
}

/// `√(log(2/δ) / (2m))`
pub fn confidence_term(delta: f64, samples: usize) -> f64 {
    ((2.0 / delta).ln() / (2.0 * samples as f64)).sqrt()
}

fn argmin(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] < v[best] { i } else { best })
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}

/// `c₁ Λ B/√m · (Σ_k √r_k) · min_k(√n_k + √n∖k) + c₂ √(log(2/δ)/(2m))`
pub fn bound_overlapped(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let dims = inputs.balanced_dims();
    let k = argmin(&dims);
    let weighted: f64 = inputs.ranks.iter().map(|&r| (r as f64).sqrt() * dims[k]).sum();
    let complexity = inputs.prefactor() / (inputs.samples as f64).sqrt() * weighted;
    Ok(BoundReport::new(BoundNorm::Overlapped, inputs, complexity, None, k))
}

/// `c₁ Λ B √(min_k r_k / m) · (max_k(√n_k + √n∖k) + C √(2 log K)) + confidence`
pub fn bound_latent(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let dims = inputs.balanced_dims();
    let k_dim = argmax(&dims);
    let ranks: Vec<f64> = inputs.ranks.iter().map(|&r| r as f64).collect();
    let k_rank = argmin(&ranks);
    let complexity =
        inputs.prefactor() * (ranks[k_rank] / inputs.samples as f64).sqrt() * (dims[k_dim] + inputs.log_term());
    Ok(BoundReport::new(BoundNorm::Latent, inputs, complexity, Some(k_rank), k_dim))
}

/// `c₁ Λ B √(min_k(r_k/n_k) / m) · (max_k(n_k + √N) + C √(2 log K)) + confidence`
pub fn bound_scaled_latent(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let dims = inputs.scaled_dims();
    let k_dim = argmax(&dims);
    let ratios: Vec<f64> = inputs
        .ranks
        .iter()
        .zip(&inputs.shape)
        .map(|(&r, &n)| r as f64 / n as f64)
        .collect();
    let k_rank = argmin(&ratios);
    let complexity =
        inputs.prefactor() * (ratios[k_rank] / inputs.samples as f64).sqrt() * (dims[k_dim] + inputs.log_term());
    Ok(BoundReport::new(BoundNorm::ScaledLatent, inputs, complexity, Some(k_rank), k_dim))
}

/// `c₁ Λ B/√m · (Σ_k √(r_k/n_k)) · min_k(n_k + √N) + confidence`
pub fn bound_scaled_overlapped(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let dims = inputs.scaled_dims();
    let k = argmin(&dims);
    // Σ_k √r_k · (min_j(n_j + √N) / √n_k), the same products as the unscaled
    // bound whenever all n_k agree
    let weighted: f64 = inputs
        .ranks
        .iter()
        .zip(&inputs.shape)
        .map(|(&r, &n)| (r as f64).sqrt() * (dims[k] / (n as f64).sqrt()))
        .sum();
    let complexity = inputs.prefactor() / (inputs.samples as f64).sqrt() * weighted;
    Ok(BoundReport::new(BoundNorm::ScaledOverlapped, inputs, complexity, None, k))
}

pub fn bound(norm: BoundNorm, inputs: &BoundInputs) -> Result<BoundReport> {
    match norm {
        BoundNorm::Overlapped => bound_overlapped(inputs),
        BoundNorm::Latent => bound_latent(inputs),
        BoundNorm::ScaledLatent => bound_scaled_latent(inputs),
        BoundNorm::ScaledOverlapped => bound_scaled_overlapped(inputs),
    }
}

/// `(2/m) Λ B₀ E‖M‖* + √(log(2/δ)/(2m))` for a given dual-norm expectation.
pub fn generic_excess_bound(dual_norm_mean: f64, b0: f64, lipschitz: f64, samples: usize, delta: f64) -> Result<f64> {
    if samples == 0 || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config("need m ≥ 1 and δ in (0, 1)".into()));
    }
    if !(dual_norm_mean >= 0.0) || !(b0 >= 0.0) || !(lipschitz >= 0.0) {
        return Err(Error::Config("dual-norm mean, B₀ and Λ must be non-negative".into()));
    }
    let m = samples as f64;
    Ok(2.0 / m * lipschitz * b0 * dual_norm_mean + confidence_term(delta, samples))
}

/// Dual-norm functional of `M` to average.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualNormKind {
    /// `min_k ‖M_(k)‖_op`, an upper bound on the overlapped dual norm.
    OverlappedSurrogate,
    /// `max_k ‖M_(k)‖_op`, the latent dual norm.
    Latent,
    /// `max_k √n_k ‖M_(k)‖_op`, the scaled latent dual norm.
    Scaled,
}

impl DualNormKind {
    pub fn name(self) -> &'static str {
        match self {
            DualNormKind::OverlappedSurrogate => "overlapped_upper",
            DualNormKind::Latent => "latent",
            DualNormKind::Scaled => "scaled",
        }
    }

    /// Whether the estimate bounds the true dual norm from above rather than
    /// computing it.
    pub fn is_upper_bound(self) -> bool {
        self == DualNormKind::OverlappedSurrogate
    }

    fn reduce(self, shape: &[usize], op_norms: &[f64]) -> f64 {
        match self {
            DualNormKind::OverlappedSurrogate => op_norms.iter().copied().fold(f64::INFINITY, f64::min),
            DualNormKind::Latent => op_norms.iter().copied().fold(0.0, f64::max),
            DualNormKind::Scaled => op_norms
                .iter()
                .zip(shape)
                .map(|(s, &n)| s * (n as f64).sqrt())
                .fold(0.0, f64::max),
        }
    }
}

impl std::str::FromStr for DualNormKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlapped" | "overlapped_upper" => Ok(DualNormKind::OverlappedSurrogate),
            "latent" => Ok(DualNormKind::Latent),
            "scaled" | "scaled_latent" => Ok(DualNormKind::Scaled),
            _ => Err(Error::Config(format!("unknown dual norm {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualNormEstimate {
    pub kind: DualNormKind,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub upper_bound: bool,
}

/// Spectral norms of every unfolding of `M = Σ σ_i X_i` for one draw of
/// standard Gaussian `X_i` and Rademacher `σ_i`.
pub fn rademacher_op_norms(shape: &[usize], samples: usize, seed: u64) -> Result<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let mut sum = DenseTensor::zeros(shape)?;
    for _ in 0..samples {
        let x = DenseTensor::gaussian(shape, &mut rng)?;
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        sum.axpy(sign, &x)?;
    }
    (0..shape.len())
        .map(|k| linalg::spectral_norm(&sum.unfold(k)?))
        .collect()
}

/// Per-trial unfolding norms; trial `t` uses seed `derive_seed(seed, [t])` so
/// results do not depend on the thread count.
pub fn dual_norm_draws(shape: &[usize], samples: usize, trials: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if trials == 0 || samples == 0 {
        return Err(Error::Config("trials and sample count must be positive".into()));
    }
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    (0..trials as u64)
        .into_par_iter()
        .map(|t| rademacher_op_norms(shape, samples, derive_seed(seed, &[t])))
        .collect()
}

pub fn summarize_draws(kind: DualNormKind, shape: &[usize], draws: &[Vec<f64>]) -> DualNormEstimate {
    let values: Vec<f64> = draws.iter().map(|d| kind.reduce(shape, d)).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    DualNormEstimate {
        kind,
        mean,
        stderr,
        trials: values.len(),
        upper_bound: kind.is_upper_bound(),
    }
}

/// Monte Carlo mean ± standard error of the requested dual-norm functional.
pub fn estimate_dual_norm_expectation(
    shape: &[usize],
    samples: usize,
    trials: usize,
    kind: DualNormKind,
    seed: u64,
) -> Result<DualNormEstimate> {
    let draws = dual_norm_draws(shape, samples, trials, seed)?;
    Ok(summarize_draws(kind, shape, &draws))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranks_leave_confidence_only() {
        let inputs = BoundInputs::new(vec![10, 10, 10], vec![0, 0, 0], 100);
        for norm in BoundNorm::ALL {
            let r = bound(norm, &inputs).unwrap();
            assert_eq!(r.complexity, 0.0);
            assert_eq!(r.value, r.confidence);
        }
    }

    #[test]
    fn doubling_samples_scales_complexity() {
        let a = BoundInputs::new(vec![4, 10, 10], vec![3, 4, 8], 100);
        let b = BoundInputs { samples: 200, ..a.clone() };
        for norm in BoundNorm::ALL {
            let ratio = bound(norm, &b).unwrap().complexity / bound(norm, &a).unwrap().complexity;
            assert!((ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn scaled_overlapped_coincides_for_equal_dims() {
        for (n, k) in [(10, 3), (7, 4), (3, 2), (13, 1)] {
            for ranks in [vec![1; k], (1..=k).collect::<Vec<_>>()] {
                let inputs = BoundInputs::new(vec![n; k], ranks, 37);
                assert_eq!(
                    bound_overlapped(&inputs).unwrap().complexity,
                    bound_scaled_overlapped(&inputs).unwrap().complexity
                );
            }
        }
    }

    #[test]
    fn mode_selection() {
        let inputs = BoundInputs::new(vec![4, 10, 10], vec![3, 4, 8], 100);
        assert_eq!(bound_scaled_latent(&inputs).unwrap().rank_mode, Some(1));
        assert_eq!(bound_latent(&inputs).unwrap().rank_mode, Some(0));
        let single = BoundInputs::new(vec![7], vec![2], 10);
        assert_eq!(single.log_term(), 0.0);
    }

    #[test]
    fn invalid_inputs() {
        let mut inputs = BoundInputs::new(vec![4, 10], vec![5, 1], 10);
        assert!(bound_latent(&inputs).is_err());
        inputs.ranks = vec![1, 1];
        inputs.delta = 1.0;
        assert!(bound_latent(&inputs).is_err());
    }

    #[test]
    fn single_draw_matches_direct_norms() {
        let shape = [3, 4, 2];
        let draws = dual_norm_draws(&shape, 1, 1, 9).unwrap();
        let direct = rademacher_op_norms(&shape, 1, derive_seed(9, &[0])).unwrap();
        assert_eq!(draws[0], direct);
        let latent = summarize_draws(DualNormKind::Latent, &shape, &draws);
        assert_eq!(latent.mean, direct.iter().copied().fold(0.0, f64::max));
        assert_eq!(latent.stderr, 0.0);
    }

    #[test]
    fn generic_bound_shape() {
        assert_eq!(generic_excess_bound(0.0, 3.0, 1.0, 50, 0.1).unwrap(), confidence_term(0.1, 50));
        let a = generic_excess_bound(2.0, 1.0, 1.0, 50, 0.1).unwrap();
        let b = generic_excess_bound(2.0, 2.0, 1.0, 50, 0.1).unwrap();
        let c = confidence_term(0.1, 50);
        assert!(((b - c) - 2.0 * (a - c)).abs() < 1e-15);
    }

    #[test]
    fn generic_bound_reproduces_latent_theorem_at_c1_two() {
        // plugging the dual-norm tail bound and B₀ = B√r_min into the generic
        // form gives the closed-form latent bound once c₁ absorbs the factor 2
        let mut inputs = BoundInputs::new(vec![4, 10, 10], vec![3, 4, 8], 200);
        inputs.c1 = 2.0;
        let closed = bound_latent(&inputs).unwrap();
        let m = inputs.samples as f64;
        let dims = inputs.balanced_dims();
        let mean = m.sqrt() * (dims[argmax(&dims)] + inputs.log_term());
        let b0 = inputs.radius * 3f64.sqrt();
        let generic = generic_excess_bound(mean, b0, inputs.lipschitz, 200, inputs.delta).unwrap();
        assert!((generic - closed.value).abs() <= 1e-14 * closed.value);
    }
}
