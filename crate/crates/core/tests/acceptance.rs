//! Acceptance suite. Every test prints one `criterion N: PASS|FAIL` line;
//! run with `--nocapture` to see them.

use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{Signed, Zero};
use rand::Rng;

use tensorreg::bounds::{self, BoundInputs, BoundNorm, DualNormKind};
use tensorreg::cv::LambdaGrid;
use tensorreg::data::{sample_regression, Dataset, Setup};
use tensorreg::experiment::{self, ExperimentConfig, Method};
use tensorreg::linalg::{sv_clip, sv_soft_threshold, thin_svd, Matrix, Vector};
use tensorreg::losses::TaskKind;
use tensorreg::norms::{latent_norm_value, overlapped_norm, scaled_weights};
use tensorreg::rng::seeded_rng;
use tensorreg::solvers::{
    Design, DualAdmm, DualAdmmState, NormKind, OverlappedAdmm, SolverConfig,
};
use tensorreg::tensor::{tucker_random, unfold_raw, DenseTensor};

fn report(criterion: u32, ok: bool, elapsed: Duration, limit: Duration, detail: &str) {
    let within = elapsed <= limit;
    let line = format!(
        "criterion {criterion}: {} ({:.1}s of {:.0}s) {detail}\n",
        if ok && within { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    // written to the raw handle so the line shows even when output is captured
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion} failed: {detail}");
    assert!(within, "criterion {criterion} exceeded its runtime budget");
}

fn random_regression(shape: &[usize], m: usize, seed: u64) -> Dataset {
    let mut rng = seeded_rng(seed);
    let truth = DenseTensor::gaussian(shape, &mut rng).unwrap().scaled(0.5);
    sample_regression(&truth, m, 0.1, &mut rng).unwrap()
}

fn max_abs(m: &Matrix) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

#[test]
fn criterion_1_correctness_kernel() {
    let started = Instant::now();
    let mut rng = seeded_rng(101);
    let mut roundtrips = 0;
    let mut ok = true;
    for i in 0..200 {
        let order = 1 + i % 4;
        let shape: Vec<usize> = (0..order).map(|_| rng.random_range(1..=6)).collect();
        let t = DenseTensor::gaussian(&shape, &mut rng).unwrap();
        for k in 0..order {
            let back = DenseTensor::fold(&t.unfold(k).unwrap(), k, &shape).unwrap();
            ok &= back == t;
            roundtrips += 1;
        }
    }

    let mut worst_moreau = 0.0_f64;
    let mut worst_svd = 0.0_f64;
    for _ in 0..200 {
        let (r, c) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let m = Matrix::from_fn(r, c, |_, _| rng.sample(rand_distr::StandardNormal));
        let tau = rng.random_range(0.0..3.0);
        let sum = sv_soft_threshold(&m, tau).unwrap() + sv_clip(&m, tau).unwrap();
        worst_moreau = worst_moreau.max(max_abs(&(sum - &m)));
        worst_svd = worst_svd.max(max_abs(&(thin_svd(&m).unwrap().reconstruct() - &m)));
    }
    ok &= worst_moreau <= 1e-10 && worst_svd <= 1e-10;
    report(
        1,
        ok,
        started.elapsed(),
        Duration::from_secs(30),
        &format!("{roundtrips} exact fold∘unfold roundtrips, Moreau residual {worst_moreau:.2e}, SVD residual {worst_svd:.2e}"),
    );
}

#[test]
fn criterion_2_dual_feasibility_and_weak_duality() {
    let started = Instant::now();
    let shape = [3, 3, 3];
    let mut rng = seeded_rng(202);
    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_gap_violation = f64::NEG_INFINITY;
    let mut worst_final_gap = 0.0_f64;
    let mut all_converged = true;
    let mut iterations = 0;
    for p in 0..20 {
        let data = random_regression(&shape, 20, 2000 + p);
        let design = Design::from_dataset(&data).unwrap();
        let norm = if p % 2 == 0 {
            NormKind::latent(3)
        } else {
            NormKind::scaled_latent(&shape)
        };
        let lambda = 10f64.powf(rng.random_range(-1.0..1.0));
        let cfg = SolverConfig {
            lambda,
            ..SolverConfig::default()
        };
        let solver = DualAdmm::new(&design, &norm, cfg.beta).unwrap();
        let lambdas = solver.lambdas(lambda);
        let modes = solver.modes().to_vec();
        let (_, fit) = solver
            .fit_observed(&cfg, |_, state: &DualAdmmState, record| {
                for (slot, &k) in modes.iter().enumerate() {
                    let v = unfold_raw(state.aux[slot].as_slice(), &shape, k);
                    let op = tensorreg::linalg::spectral_norm(&v).unwrap();
                    worst_excess = worst_excess.max(op - lambdas[slot]);
                }
                worst_gap_violation = worst_gap_violation.max(record.dual - record.primal);
            })
            .unwrap();
        all_converged &= fit.converged;
        worst_final_gap = worst_final_gap.max(fit.final_relative_gap);
        iterations += fit.iterations;
    }
    let ok = worst_excess <= 1e-10 && worst_gap_violation <= 1e-10 && all_converged && worst_final_gap <= 1e-3;
    report(
        2,
        ok,
        started.elapsed(),
        Duration::from_secs(120),
        &format!(
            "max ‖V‖op − λ_k {worst_excess:.2e}, max D − P {worst_gap_violation:.2e}, worst final gap {worst_final_gap:.2e}, {iterations} iterations"
        ),
    );
}

/// Column-major mode-k unfolding written out from the index definition.
fn reference_unfold(data: &[f64], shape: &[usize], mode: usize) -> DMatrix<f64> {
    let rows = shape[mode];
    let cols = data.len() / rows;
    let mut out = DMatrix::zeros(rows, cols);
    let mut idx = vec![0usize; shape.len()];
    for &value in data {
        let mut col = 0;
        let mut stride = 1;
        for (j, &n) in shape.iter().enumerate() {
            if j != mode {
                col += idx[j] * stride;
                stride *= n;
            }
        }
        out[(idx[mode], col)] = value;
        for (j, &n) in shape.iter().enumerate() {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

fn reference_refold(m: &DMatrix<f64>, shape: &[usize], mode: usize) -> Vec<f64> {
    let total: usize = shape.iter().product();
    let mut out = vec![0.0; total];
    let mut idx = vec![0usize; shape.len()];
    for slot in out.iter_mut() {
        let mut col = 0;
        let mut stride = 1;
        for (j, &n) in shape.iter().enumerate() {
            if j != mode {
                col += idx[j] * stride;
                stride *= n;
            }
        }
        *slot = m[(idx[mode], col)];
        for (j, &n) in shape.iter().enumerate() {
            idx[j] += 1;
            if idx[j] < n {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

fn reference_trace_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.sum()
}

/// `½ Σ (y − ⟨Σ_k W_k, X⟩ − b)² + Σ_k λ_k ‖(W_k)_(k)‖_tr`, evaluated directly.
fn reference_objective(
    data: &Dataset,
    parts: &[(usize, f64, Vec<f64>)],
    bias: f64,
) -> f64 {
    let shape = data.shape().unwrap();
    let n: usize = shape.iter().product();
    let mut w = vec![0.0; n];
    for (_, _, p) in parts {
        for (a, b) in w.iter_mut().zip(p) {
            *a += b;
        }
    }
    let mut loss = 0.0;
    for (x, y) in data.covariates.iter().zip(&data.targets) {
        let score: f64 = x.data().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() + bias;
        loss += 0.5 * (y - score).powi(2);
    }
    let reg: f64 = parts
        .iter()
        .map(|(k, lambda, p)| lambda * reference_trace_norm(&reference_unfold(p, shape, *k)))
        .sum();
    loss + reg
}

/// FISTA on the latent-norm primal over `(W_1, …, W_K, b)`.
fn fista_latent(data: &Dataset, lambdas: &[f64], iterations: usize) -> f64 {
    let shape = data.shape().unwrap().to_vec();
    let order = shape.len();
    let n: usize = shape.iter().product();
    let m = data.len();
    let x = DMatrix::from_fn(m, n, |i, j| data.covariates[i].data()[j]);
    let y = DVector::from_vec(data.targets.clone());
    // Lipschitz constant of the smooth part: ‖[X … X 1]‖² = λ_max(K X Xᵀ + 1 1ᵀ)
    let mut outer = &x * x.transpose() * order as f64;
    outer.add_scalar_mut(1.0);
    let lip = outer.symmetric_eigen().eigenvalues.max();
    let step = 1.0 / lip;

    let mut parts = vec![DVector::<f64>::zeros(n); order];
    let mut bias = 0.0;
    let mut prev_parts = parts.clone();
    let mut prev_bias = bias;
    let mut t = 1.0_f64;
    let objective = |parts: &[DVector<f64>], bias: f64| {
        let triples: Vec<(usize, f64, Vec<f64>)> = parts
            .iter()
            .enumerate()
            .map(|(k, p)| (k, lambdas[k], p.as_slice().to_vec()))
            .collect();
        reference_objective(data, &triples, bias)
    };
    let mut best = objective(&parts, bias);
    let mut last = best;
    for _ in 0..iterations {
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        let ext: Vec<DVector<f64>> = parts
            .iter()
            .zip(&prev_parts)
            .map(|(p, q)| p + (p - q) * momentum)
            .collect();
        let ext_bias = bias + (bias - prev_bias) * momentum;
        let w_sum = ext.iter().fold(DVector::zeros(n), |acc, p| acc + p);
        let residual = &x * &w_sum + DVector::from_element(m, ext_bias) - &y;
        let grad_w = x.transpose() * &residual;
        let grad_b = residual.sum();

        prev_parts = parts.clone();
        prev_bias = bias;
        for k in 0..order {
            let arg = &ext[k] - &grad_w * step;
            let mat = reference_unfold(arg.as_slice(), &shape, k);
            let mut svd = mat.svd(true, true);
            for s in svd.singular_values.iter_mut() {
                *s = (*s - step * lambdas[k]).max(0.0);
            }
            let shrunk = svd.recompose().unwrap();
            parts[k] = DVector::from_vec(reference_refold(&shrunk, &shape, k));
        }
        bias = ext_bias - step * grad_b;
        let value = objective(&parts, bias);
        if value > last {
            // adaptive restart
            t = 1.0;
            prev_parts = parts.clone();
            prev_bias = bias;
        } else {
            t = t_next;
        }
        last = value;
        best = best.min(value);
    }
    best
}

#[test]
fn criterion_3_solver_agreement() {
    let started = Instant::now();
    let tight = SolverConfig {
        tol: 1e-6,
        max_outer_iters: 50_000,
        ..SolverConfig::default()
    };
    let mut rng = seeded_rng(303);
    let mut worst_pair = 0.0_f64;
    for i in 0..10 {
        let shape = [3, 4, 5];
        let data = random_regression(&shape, 40, 3000 + i);
        let design = Design::from_dataset(&data).unwrap();
        let mode = (i % 3) as usize;
        let lambda = 10f64.powf(rng.random_range(-0.5..1.0));
        let cfg = tight.with_lambda(lambda);
        let dual_norm = NormKind::single_mode(mode);
        let primal_norm = NormKind::Overlapped {
            modes: vec![mode],
            weights: vec![1.0],
        };
        let (dual_model, _) = DualAdmm::new(&design, &dual_norm, cfg.beta).unwrap().fit(&cfg).unwrap();
        let (primal_model, _) = OverlappedAdmm::new(&design, &primal_norm, cfg.beta)
            .unwrap()
            .fit(&cfg)
            .unwrap();
        let obj = |model: &tensorreg::solvers::Model| {
            reference_objective(&data, &[(mode, lambda, model.weight.data().to_vec())], model.bias)
        };
        let (a, b) = (obj(&dual_model), obj(&primal_model));
        worst_pair = worst_pair.max((a - b).abs() / a.min(b));
    }

    let mut worst_fista = 0.0_f64;
    for i in 0..3 {
        let shape = [3, 3, 3];
        let data = random_regression(&shape, 30, 3100 + i);
        let design = Design::from_dataset(&data).unwrap();
        let norm = if i == 2 {
            NormKind::scaled_latent(&shape)
        } else {
            NormKind::latent(3)
        };
        let lambda = [0.5, 3.0, 2.0][i as usize];
        let cfg = tight.with_lambda(lambda);
        let solver = DualAdmm::new(&design, &norm, cfg.beta).unwrap();
        let lambdas = solver.lambdas(lambda);
        let (model, _) = solver.fit(&cfg).unwrap();
        let parts: Vec<(usize, f64, Vec<f64>)> = model
            .latent_parts
            .as_ref()
            .unwrap()
            .iter()
            .enumerate()
            .map(|(k, p)| (k, lambdas[k], p.data().to_vec()))
            .collect();
        let admm = reference_objective(&data, &parts, model.bias);
        let reference = fista_latent(&data, &lambdas, 20_000);
        worst_fista = worst_fista.max((admm - reference).abs() / reference);
    }
    report(
        3,
        worst_pair <= 1e-3 && worst_fista <= 1e-3,
        started.elapsed(),
        Duration::from_secs(300),
        &format!("single-mode dual vs primal {worst_pair:.2e}, dual ADMM vs FISTA {worst_fista:.2e}"),
    );
}

/// Augmented Lagrangian of the logistic dual in α, written in tensor form.
fn lagrangian(
    data: &Dataset,
    alpha: &[f64],
    parts: &[DenseTensor],
    aux: &[DenseTensor],
    bias: f64,
    beta: f64,
) -> f64 {
    let mut entropy = 0.0;
    for (a, y) in alpha.iter().zip(&data.targets) {
        let p = a * y;
        entropy += p * p.ln() + (1.0 - p) * (1.0 - p).ln();
    }
    let mut m = DenseTensor::zeros(data.shape().unwrap()).unwrap();
    for (a, x) in alpha.iter().zip(&data.covariates) {
        m.axpy(*a, x).unwrap();
    }
    let mut coupling = 0.0;
    for (w, v) in parts.iter().zip(aux) {
        let diff = m.sub(v).unwrap();
        coupling += w.inner(&diff).unwrap() + 0.5 * beta * diff.inner(&diff).unwrap();
    }
    let s: f64 = alpha.iter().sum();
    entropy + coupling + bias * s + 0.5 * beta * s * s
}

#[test]
fn criterion_4_logistic_newton_derivatives() {
    let started = Instant::now();
    let shape = [2, 2, 2];
    let mut rng = seeded_rng(404);
    let mut worst_grad = 0.0_f64;
    let mut worst_hess = 0.0_f64;
    for point in 0..10 {
        let covariates: Vec<DenseTensor> = (0..5).map(|_| DenseTensor::gaussian(&shape, &mut rng).unwrap()).collect();
        let mut targets: Vec<f64> = (0..5).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        targets[0] = 1.0;
        targets[1] = -1.0;
        let data = Dataset::new(covariates, targets, TaskKind::Classification).unwrap();
        let design = Design::from_dataset(&data).unwrap();
        let beta = rng.random_range(0.3..3.0);
        let solver = DualAdmm::new(&design, &NormKind::latent(3), beta).unwrap();

        let parts: Vec<DenseTensor> = (0..3).map(|_| DenseTensor::gaussian(&shape, &mut rng).unwrap()).collect();
        let aux: Vec<DenseTensor> = (0..3).map(|_| DenseTensor::gaussian(&shape, &mut rng).unwrap()).collect();
        let bias = rng.random_range(-1.0..1.0);
        let alpha: Vec<f64> = data
            .targets
            .iter()
            .map(|y| y * rng.random_range(0.05..0.95))
            .collect();
        let to_vec = |ts: &[DenseTensor]| ts.iter().map(|t| Vector::from_column_slice(t.data())).collect();
        let state = DualAdmmState::new(&design, Vector::from_vec(alpha.clone()), to_vec(&parts), to_vec(&aux), bias);
        let problem = solver.logistic_problem(&state);
        let a = Vector::from_vec(alpha.clone());
        assert!(problem.is_interior(&a));
        let gradient = problem.gradient(&a);
        let hessian = problem.hessian(&a);

        let f = |x: &[f64]| lagrangian(&data, x, &parts, &aux, bias, beta);
        let shifted = |moves: &[(usize, f64)]| {
            let mut x = alpha.clone();
            for &(i, d) in moves {
                x[i] += d;
            }
            f(&x)
        };
        let h = 1e-6;
        let fd_grad = Vector::from_fn(5, |i, _| (shifted(&[(i, h)]) - shifted(&[(i, -h)])) / (2.0 * h));
        let hh = 1e-4;
        let fd_hess = Matrix::from_fn(5, 5, |i, j| {
            (shifted(&[(i, hh), (j, hh)]) - shifted(&[(i, hh), (j, -hh)]) - shifted(&[(i, -hh), (j, hh)])
                + shifted(&[(i, -hh), (j, -hh)]))
                / (4.0 * hh * hh)
        });
        let grad_err = (&gradient - &fd_grad).norm() / fd_grad.norm();
        let hess_err = (&hessian - &fd_hess).norm() / fd_hess.norm();
        println!(
            "  point {point}: gradient {:?}, finite difference {:?}, relative errors {grad_err:.2e} / {hess_err:.2e}",
            gradient.as_slice(),
            fd_grad.as_slice()
        );
        worst_grad = worst_grad.max(grad_err);
        worst_hess = worst_hess.max(hess_err);
    }
    report(
        4,
        worst_grad <= 1e-5 && worst_hess <= 1e-4,
        started.elapsed(),
        Duration::from_secs(30),
        &format!("worst gradient error {worst_grad:.2e}, worst Hessian error {worst_hess:.2e}"),
    );
}

#[test]
fn criterion_5_norm_bound_inequalities() {
    let started = Instant::now();
    let cfg = SolverConfig {
        tol: 1e-4,
        max_outer_iters: 5000,
        ..SolverConfig::default()
    };
    let mut worst = [f64::INFINITY; 3];
    for setup in Setup::ALL {
        let spec = setup.tucker();
        let shape = setup.shape();
        let ranks = setup.ranks();
        let fro_factor_overlapped: f64 = ranks.iter().map(|&r| (r as f64).sqrt()).sum();
        let min_rank = *ranks.iter().min().unwrap() as f64;
        let min_ratio = ranks
            .iter()
            .zip(&shape)
            .map(|(&r, &n)| r as f64 / n as f64)
            .fold(f64::INFINITY, f64::min);
        for s in 0..50 {
            let w = tucker_random(&spec, 5000 + s).unwrap();
            let fro = w.frobenius();
            let overlapped = overlapped_norm(&w, &vec![1.0; shape.len()]).unwrap();
            let latent = latent_norm_value(&w, &vec![1.0; shape.len()], &cfg).unwrap().value;
            let scaled = latent_norm_value(&w, &scaled_weights(&shape), &cfg).unwrap().value;
            worst[0] = worst[0].min(fro_factor_overlapped * fro - overlapped);
            worst[1] = worst[1].min(min_rank.sqrt() * fro - latent);
            worst[2] = worst[2].min(min_ratio.sqrt() * fro - scaled);
        }
    }
    report(
        5,
        worst.iter().all(|&s| s >= -1e-6),
        started.elapsed(),
        Duration::from_secs(180),
        &format!(
            "smallest slack: overlapped {:.3e}, latent {:.3e}, scaled latent {:.3e}",
            worst[0], worst[1], worst[2]
        ),
    );
}

#[test]
fn criterion_6_dual_norm_monte_carlo() {
    let started = Instant::now();
    let shape = [4usize, 10, 10];
    let m = 50usize;
    let draws = bounds::dual_norm_draws(&shape, m, 200, 606).unwrap();
    let latent = bounds::summarize_draws(DualNormKind::Latent, &shape, &draws);
    let surrogate = bounds::summarize_draws(DualNormKind::OverlappedSurrogate, &shape, &draws);
    let total: f64 = shape.iter().map(|&n| n as f64).product();
    let dims = shape
        .iter()
        .map(|&n| (n as f64).sqrt() + (total / n as f64).sqrt())
        .fold(0.0, f64::max);
    let mf = m as f64;
    let theory = mf.sqrt() * dims + (2.0 * mf * (shape.len() as f64).ln()).sqrt();
    let pointwise = draws.iter().all(|d| {
        d.iter().copied().fold(0.0, f64::max) >= d.iter().copied().fold(f64::INFINITY, f64::min)
    });
    report(
        6,
        latent.mean <= theory && latent.mean >= surrogate.mean && pointwise,
        started.elapsed(),
        Duration::from_secs(120),
        &format!(
            "latent mean {:.4} ± {:.4} ≤ {theory:.4}; overlapped surrogate mean {:.4}",
            latent.mean, latent.stderr, surrogate.mean
        ),
    );
}

/// Fixed-point arbitrary-precision arithmetic with 80 decimal digits.
mod fixed {
    use super::*;

    pub fn scale() -> BigInt {
        BigInt::from(10u32).pow(80)
    }

    pub fn int(n: u64) -> BigInt {
        BigInt::from(n) * scale()
    }

    /// Exact binary value of `x`, truncated to the fixed-point grid.
    pub fn float(x: f64) -> BigInt {
        assert!(x.is_finite() && x >= 0.0);
        if x == 0.0 {
            return BigInt::zero();
        }
        let bits = x.to_bits();
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let mantissa = if exp == 0 {
            (bits & ((1u64 << 52) - 1)) << 1
        } else {
            (bits & ((1u64 << 52) - 1)) | (1u64 << 52)
        };
        let e = exp - 1075;
        let v = BigInt::from(mantissa) * scale();
        if e >= 0 {
            v << (e as usize)
        } else {
            v >> ((-e) as usize)
        }
    }

    pub fn mul(a: &BigInt, b: &BigInt) -> BigInt {
        a * b / scale()
    }

    pub fn div(a: &BigInt, b: &BigInt) -> BigInt {
        a * scale() / b
    }

    pub fn sqrt(a: &BigInt) -> BigInt {
        (a * scale()).sqrt()
    }

    fn atanh(z: &BigInt) -> BigInt {
        // Σ z^(2n+1) / (2n+1)
        let z2 = mul(z, z);
        let mut power = z.clone();
        let mut sum = BigInt::zero();
        let mut n = 1u64;
        while !power.is_zero() {
            sum += &power / BigInt::from(n);
            power = mul(&power, &z2);
            n += 2;
        }
        sum
    }

    pub fn ln(x: &BigInt) -> BigInt {
        assert!(x.is_positive());
        let one = scale();
        let two = int(2);
        let mut y = x.clone();
        let mut k: i64 = 0;
        while y >= two {
            y = &y / 2;
            k += 1;
        }
        while y < one {
            y = &y * 2;
            k -= 1;
        }
        let ln2 = atanh(&div(&one, &int(3))) * 2;
        let core = atanh(&div(&(&y - &one), &(&y + &one))) * 2;
        core + ln2 * BigInt::from(k)
    }
}

struct OracleInputs {
    shape: Vec<u64>,
    ranks: Vec<u64>,
    m: u64,
    prefactor: BigInt,
    confidence: BigInt,
    log_term: BigInt,
}

impl OracleInputs {
    fn new(inputs: &BoundInputs) -> Self {
        use fixed::*;
        let m = inputs.samples as u64;
        let prefactor = mul(&mul(&float(inputs.c1), &float(inputs.lipschitz)), &float(inputs.radius));
        let conf_inner = div(&ln(&div(&int(2), &float(inputs.delta))), &int(2 * m));
        let confidence = mul(&float(inputs.c2), &sqrt(&conf_inner));
        let log_term = mul(&float(inputs.c_log), &sqrt(&(ln(&int(inputs.shape.len() as u64)) * 2)));
        Self {
            shape: inputs.shape.iter().map(|&n| n as u64).collect(),
            ranks: inputs.ranks.iter().map(|&r| r as u64).collect(),
            m,
            prefactor,
            confidence,
            log_term,
        }
    }

    fn total(&self) -> u64 {
        self.shape.iter().product()
    }

    fn balanced(&self) -> Vec<BigInt> {
        use fixed::*;
        let total = self.total();
        // N / n_k is an integer
        self.shape.iter().map(|&n| sqrt(&int(n)) + sqrt(&int(total / n))).collect()
    }

    fn scaled(&self) -> Vec<BigInt> {
        use fixed::*;
        let root = sqrt(&int(self.total()));
        self.shape.iter().map(|&n| int(n) + &root).collect()
    }

    fn value(&self, norm: BoundNorm) -> BigInt {
        use fixed::*;
        let root_m = sqrt(&int(self.m));
        let min = |v: Vec<BigInt>| v.into_iter().min().unwrap();
        let max = |v: Vec<BigInt>| v.into_iter().max().unwrap();
        let complexity = match norm {
            BoundNorm::Overlapped => {
                let rank_sum: BigInt = self.ranks.iter().map(|&r| sqrt(&int(r))).sum();
                div(&mul(&mul(&self.prefactor, &rank_sum), &min(self.balanced())), &root_m)
            }
            BoundNorm::Latent => {
                let r = *self.ranks.iter().min().unwrap();
                let factor = sqrt(&div(&int(r), &int(self.m)));
                mul(&mul(&self.prefactor, &factor), &(max(self.balanced()) + &self.log_term))
            }
            BoundNorm::ScaledLatent => {
                let ratio = min(self
                    .ranks
                    .iter()
                    .zip(&self.shape)
                    .map(|(&r, &n)| div(&int(r), &int(n)))
                    .collect());
                let factor = sqrt(&div(&ratio, &int(self.m)));
                mul(&mul(&self.prefactor, &factor), &(max(self.scaled()) + &self.log_term))
            }
            BoundNorm::ScaledOverlapped => {
                let rank_sum: BigInt = self
                    .ranks
                    .iter()
                    .zip(&self.shape)
                    .map(|(&r, &n)| sqrt(&div(&int(r), &int(n))))
                    .sum();
                div(&mul(&mul(&self.prefactor, &rank_sum), &min(self.scaled())), &root_m)
            }
        };
        complexity + &self.confidence
    }
}

#[test]
fn criterion_7_bound_calculators() {
    let started = Instant::now();
    let mut rng = seeded_rng(707);
    let mut worst = 0.0_f64;
    let mut equal_dim_cases = 0;
    let mut identity_ok = true;
    let mut monotone = true;
    let tolerance_denominator = BigInt::from(10u64).pow(12);
    for point in 0..100 {
        let order = rng.random_range(1..=4usize);
        let shape: Vec<usize> = if point % 4 == 0 {
            vec![rng.random_range(1..=20); order]
        } else {
            (0..order).map(|_| rng.random_range(1..=20)).collect()
        };
        let ranks: Vec<usize> = shape.iter().map(|&n| rng.random_range(0..=n)).collect();
        let mut inputs = BoundInputs::new(shape.clone(), ranks, rng.random_range(1..=20_000));
        inputs.radius = rng.random_range(0.1..10.0);
        inputs.lipschitz = rng.random_range(0.1..5.0);
        inputs.delta = rng.random_range(0.001..0.5);
        inputs.c1 = rng.random_range(0.5..3.0);
        inputs.c2 = rng.random_range(0.5..3.0);
        inputs.c_log = rng.random_range(0.5..3.0);

        let oracle = OracleInputs::new(&inputs);
        for norm in BoundNorm::ALL {
            let value = bounds::bound(norm, &inputs).unwrap().value;
            let exact = oracle.value(norm);
            let diff = (fixed::float(value) - &exact).abs();
            assert!(
                &diff * &tolerance_denominator <= exact,
                "{norm:?} at {inputs:?}: {value} vs oracle"
            );
            let rel = diff.to_string().parse::<f64>().unwrap() / exact.to_string().parse::<f64>().unwrap();
            worst = worst.max(rel);

            let larger = BoundInputs {
                samples: inputs.samples + 1,
                ..inputs.clone()
            };
            let doubled = BoundInputs {
                samples: inputs.samples * 2,
                ..inputs.clone()
            };
            let v_next = bounds::bound(norm, &larger).unwrap().value;
            let v_double = bounds::bound(norm, &doubled).unwrap().value;
            monotone &= v_next < value && v_double < v_next;
        }
        if shape.iter().all(|&n| n == shape[0]) {
            equal_dim_cases += 1;
            identity_ok &= bounds::bound_scaled_overlapped(&inputs).unwrap().complexity
                == bounds::bound_overlapped(&inputs).unwrap().complexity;
        }
    }
    report(
        7,
        identity_ok && monotone && equal_dim_cases >= 25,
        started.elapsed(),
        Duration::from_secs(120),
        &format!(
            "400 evaluations within {worst:.2e} of the 80-digit oracle; scaled/unscaled overlapped identical on {equal_dim_cases} equal-dimension cases; monotone in m"
        ),
    );
}

fn cell(result: &experiment::ExperimentResult, setup: Setup, method: Method, m: usize) -> &experiment::AggregateRow {
    result.cell(setup, method, m).expect("aggregate cell present")
}

#[test]
fn criterion_8_synthetic_study_orderings() {
    let started = Instant::now();
    let config = ExperimentConfig::default();
    let result = experiment::run_regression_experiment(&config, 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    experiment::write_outputs(&result, dir.path()).unwrap();
    let largest = *config.train_sizes.iter().max().unwrap();

    let mut failures = Vec::new();
    let mut flags = Vec::new();
    // `lower` must have the smaller mean; a reversal within one standard
    // deviation of either method is flagged as a tie.
    let mut check = |setup: Setup, lower: Method, higher: Method, strict: bool| {
        let a = cell(&result, setup, lower, largest);
        let b = cell(&result, setup, higher, largest);
        let holds = if strict {
            a.mean_test_mse < b.mean_test_mse
        } else {
            a.mean_test_mse <= b.mean_test_mse
        };
        let line = format!(
            "setup {} m={largest}: {lower} {:.4} ± {:.4} vs {higher} {:.4} ± {:.4}",
            setup.name(),
            a.mean_test_mse,
            a.std_test_mse,
            b.mean_test_mse,
            b.std_test_mse
        );
        println!("  {line}");
        if !holds {
            if (a.mean_test_mse - b.mean_test_mse).abs() <= a.std_test_mse.max(b.std_test_mse) {
                flags.push(line);
            } else {
                failures.push(line);
            }
        }
    };
    check(Setup::A, Method::Overlapped, Method::ScaledLatent, false);
    check(Setup::C, Method::ScaledLatent, Method::Latent, true);
    check(Setup::C, Method::ScaledLatent, Method::Overlapped, true);
    for setup in Setup::ALL {
        for method in config.methods_for(setup) {
            if method.is_tensor_norm() {
                check(setup, method, Method::Ridge, true);
            }
        }
    }

    // bookkeeping: complete, finite, aggregates consistent with the tidy rows
    let complete = result.rows.iter().all(|r| r.ok() && r.test_mse.is_finite())
        && result.aggregate.iter().all(|a| a.replicates_ok == config.replicates);
    let consistent = result.aggregate.iter().all(|a| {
        let values: Vec<f64> = result
            .rows
            .iter()
            .filter(|r| r.setup == a.setup && r.method == a.method && r.m_train == a.m_train)
            .map(|r| r.test_mse)
            .collect();
        (experiment::mean_std(&values).0 - a.mean_test_mse).abs() <= 1e-12
    });
    for flag in &flags {
        println!("  FLAG (tie within one std): {flag}");
    }
    for failure in &failures {
        println!("  ordering violated: {failure}");
    }
    report(
        8,
        failures.is_empty() && complete && consistent,
        started.elapsed(),
        Duration::from_secs(1800),
        &format!(
            "{} rows, {} flagged ties, {} violations",
            result.rows.len(),
            flags.len(),
            failures.len()
        ),
    );
}

#[test]
fn criterion_9_experiment_determinism() {
    let started = Instant::now();
    let config = ExperimentConfig {
        setups: vec![Setup::A, Setup::C],
        train_sizes: vec![60, 120],
        m_val: 60,
        m_test: 200,
        replicates: 2,
        grid: LambdaGrid::Log {
            min: 0.1,
            max: 100.0,
            points: 6,
        },
        seed: 99,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("experiment.json");
    std::fs::write(&config_path, serde_json::to_string(&config).unwrap()).unwrap();
    let run = |name: &str, threads: &str| {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_tensorreg"))
            .args(["experiment", "--config"])
            .arg(&config_path)
            .args(["--seed", "7", "--threads", threads, "--out"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        out
    };
    let first = run("first", "1");
    let second = run("second", "2");
    let mut identical = true;
    let mut compared = Vec::new();
    for file in ["tidy.csv", "aggregate.csv", "config.json"] {
        let a = std::fs::read(first.join(file)).unwrap();
        let b = std::fs::read(second.join(file)).unwrap();
        identical &= a == b && !a.is_empty();
        compared.push(format!("{file} ({} bytes)", a.len()));
    }
    report(
        9,
        identical,
        started.elapsed(),
        Duration::from_secs(600),
        &format!("byte-identical: {}", compared.join(", ")),
    );
}
