//! Matrix kernels: thin SVD, spectral shrinkage and clipping, SPD solves
//! with a reusable Cholesky factor, and conjugate gradients.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SVD_EPS: f64 = 1e-15;
const SVD_MAX_ITERS: usize = 10_000;

/// `m = U diag(S) Vᵀ` with `r = min(p, q)` columns and `S` non-increasing.
#[derive(Debug, Clone)]
pub struct ThinSvd {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl ThinSvd {
    /// `U diag(f(S)) Vᵀ`
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let mut us = self.u.clone();
        for (j, &s) in self.s.iter().enumerate() {
            let fs = f(s);
            us.column_mut(j).scale_mut(fs);
        }
        us * self.v.transpose()
    }

    pub fn reconstruct(&self) -> Matrix {
        self.reconstruct_with(|s| s)
    }
}

pub fn thin_svd(m: &Matrix) -> Result<ThinSvd> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::SvdFailed);
    }
    let (p, q) = m.shape();
    if p == 0 || q == 0 {
        return Ok(ThinSvd {
            u: Matrix::zeros(p, 0),
            s: Vec::new(),
            v: Matrix::zeros(q, 0),
        });
    }
    let svd = m
        .clone()
        .try_svd(true, true, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::SvdFailed)?;
    let u = svd.u.ok_or(Error::SvdFailed)?;
    let v_t = svd.v_t.ok_or(Error::SvdFailed)?;
    let r = svd.singular_values.len();
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s = order.iter().map(|&i| svd.singular_values[i].max(0.0)).collect();
    let u = Matrix::from_fn(p, r, |i, j| u[(i, order[j])]);
    let v = Matrix::from_fn(q, r, |i, j| v_t[(order[j], i)]);
    Ok(ThinSvd { u, s, v })
}

/// Singular values in non-increasing order.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::SvdFailed);
    }
    if m.is_empty() {
        return Ok(Vec::new());
    }
    let svd = m
        .clone()
        .try_svd(false, false, SVD_EPS, SVD_MAX_ITERS)
        .ok_or(Error::SvdFailed)?;
    let mut s: Vec<f64> = svd.singular_values.iter().map(|x| x.max(0.0)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

pub fn spectral_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.first().copied().unwrap_or(0.0))
}

pub fn trace_norm(m: &Matrix) -> Result<f64> {
    Ok(singular_values(m)?.iter().sum())
}

/// Projection onto the spectral-norm ball of radius `lambda`: `U min(S, λ) Vᵀ`.
pub fn sv_clip(m: &Matrix, lambda: f64) -> Result<Matrix> {
    Ok(sv_clip_svd(&thin_svd(m)?, lambda))
}

pub fn sv_clip_svd(svd: &ThinSvd, lambda: f64) -> Matrix {
    svd.reconstruct_with(|s| s.min(lambda))
}

/// Singular value soft-thresholding `U max(S − τ, 0) Vᵀ`, the prox of `τ‖·‖_tr`.
pub fn sv_soft_threshold(m: &Matrix, tau: f64) -> Result<Matrix> {
    Ok(sv_soft_threshold_svd(&thin_svd(m)?, tau).0)
}

/// Soft-thresholds a precomputed SVD; also returns the trace norm of the result.
pub fn sv_soft_threshold_svd(svd: &ThinSvd, tau: f64) -> (Matrix, f64) {
    let kept: f64 = svd.s.iter().map(|&s| (s - tau).max(0.0)).sum();
    if kept == 0.0 {
        return (Matrix::zeros(svd.u.nrows(), svd.v.nrows()), 0.0);
    }
    // only the leading columns with s > τ contribute
    let r = svd.s.iter().take_while(|&&s| s > tau).count();
    let mut us = svd.u.columns(0, r).into_owned();
    for j in 0..r {
        us.column_mut(j).scale_mut(svd.s[j] - tau);
    }
    (us * svd.v.columns(0, r).transpose(), kept)
}

/// Cholesky factor of a symmetric positive-definite matrix, reusable across solves.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
}

impl SpdFactor {
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() || a.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let chol = Cholesky::new(a).ok_or(Error::NotPositiveDefinite)?;
        Ok(Self { chol })
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    pub fn solve(&self, b: &Matrix) -> Matrix {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &Vector) -> Vector {
        self.chol.solve(b)
    }

    pub fn solve_vec_mut(&self, b: &mut Vector) {
        self.chol.solve_mut(b);
    }
}

/// Eigendecomposition `G = Q diag(d) Qᵀ` of a symmetric positive-semidefinite
/// matrix, used to solve `(a G + c I) x = b` for many `(a, c)` pairs.
#[derive(Debug, Clone)]
pub struct SymmetricSpectrum {
    vectors: Matrix,
    values: Vector,
}

impl SymmetricSpectrum {
    pub fn new(g: &Matrix) -> Result<Self> {
        if !g.is_square() || g.iter().any(|x| !x.is_finite()) {
            return Err(Error::NotPositiveDefinite);
        }
        let eig = nalgebra::SymmetricEigen::try_new(g.clone(), SVD_EPS, SVD_MAX_ITERS)
            .ok_or(Error::SvdFailed)?;
        // rounding can push null eigenvalues slightly negative
        let values = eig.eigenvalues.map(|v| v.max(0.0));
        Ok(Self {
            vectors: eig.eigenvectors,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &Vector {
        &self.values
    }

    /// Solves `(scale · G + shift · I) x = b`. Fails when the shifted matrix is
    /// numerically singular or indefinite.
    pub fn solve_shifted(&self, scale: f64, shift: f64, b: &Vector) -> Result<Vector> {
        let top = self.values.iter().copied().fold(0.0, f64::max);
        let floor = 1e-13 * (scale.abs() * top + shift.abs());
        let mut coef = self.vectors.tr_mul(b);
        for (c, &d) in coef.iter_mut().zip(self.values.iter()) {
            let denom = scale * d + shift;
            if !(denom > floor) {
                return Err(Error::NotPositiveDefinite);
            }
            *c /= denom;
        }
        Ok(&self.vectors * coef)
    }
}

/// Solves `A X = B` for symmetric positive-definite `A`.
pub fn spd_solve(a: &Matrix, b: &Matrix) -> Result<(Matrix, SpdFactor)> {
    let factor = SpdFactor::new(a.clone())?;
    Ok((factor.solve(b), factor))
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vector,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Conjugate gradients for a symmetric positive-definite operator.
///
/// `apply(v, out)` must write `A v` into `out`. Starts from `x0` when given.
pub fn cg_solve(
    apply: impl Fn(&Vector, &mut Vector),
    b: &Vector,
    x0: Option<&Vector>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    let b_norm = b.norm();
    let mut x = x0.cloned().unwrap_or_else(|| Vector::zeros(n));
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: Vector::zeros(n),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut ap = Vector::zeros(n);
    apply(&x, &mut ap);
    let mut r = b - &ap;
    let mut p = r.clone();
    let mut rs = r.norm_squared();
    let mut iterations = 0;
    while iterations < max_iter {
        if rs.sqrt() <= tol * b_norm {
            break;
        }
        apply(&p, &mut ap);
        let pap = p.dot(&ap);
        if !(pap > 0.0) || !pap.is_finite() {
            return Err(Error::CgDiverged {
                residual: rs.sqrt() / b_norm,
            });
        }
        let step = rs / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rs_new = r.norm_squared();
        p *= rs_new / rs;
        p += &r;
        rs = rs_new;
        iterations += 1;
    }
    let relative_residual = rs.sqrt() / b_norm;
    if !relative_residual.is_finite() {
        return Err(Error::CgDiverged {
            residual: relative_residual,
        });
    }
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual,
        converged: relative_residual <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn random(p: usize, q: usize, seed: u64) -> Matrix {
        let mut rng = seeded_rng(seed);
        Matrix::from_fn(p, q, |_, _| rng.sample(StandardNormal))
    }

    fn random_spd(n: usize, seed: u64) -> Matrix {
        let g = random(n, n, seed);
        &g * g.transpose() + Matrix::identity(n, n) * n as f64
    }

    #[test]
    fn svd_of_simple_matrices() {
        let s = thin_svd(&Matrix::identity(3, 3)).unwrap();
        assert_eq!(s.s.len(), 3);
        assert!(s.s.iter().all(|&x| (x - 1.0).abs() < 1e-14));
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 3.0]));
        let s = thin_svd(&d).unwrap();
        assert!((s.s[0] - 3.0).abs() < 1e-14 && (s.s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn svd_reconstructs_random_matrix() {
        for (p, q) in [(5, 7), (7, 5), (1, 4), (6, 6)] {
            let m = random(p, q, (p * 31 + q) as u64);
            let s = thin_svd(&m).unwrap();
            let err = (s.reconstruct() - &m).norm() / m.norm();
            assert!(err < 1e-10, "{err}");
            assert!(s.s.windows(2).all(|w| w[0] >= w[1]));
            let r = s.s.len();
            assert!((s.u.transpose() * &s.u - Matrix::identity(r, r)).norm() < 1e-10);
            assert!((s.v.transpose() * &s.v - Matrix::identity(r, r)).norm() < 1e-10);
        }
    }

    fn power_iteration(m: &Matrix) -> f64 {
        let mtm = m.transpose() * m;
        let mut v = Vector::from_element(m.ncols(), 1.0);
        for _ in 0..5000 {
            let w = &mtm * &v;
            v = &w / w.norm();
        }
        (m * &v).norm()
    }

    #[test]
    fn spectral_norm_cases() {
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        assert!((spectral_norm(&d).unwrap() - 3.0).abs() < 1e-14);
        let m = random(6, 9, 3);
        let oracle = power_iteration(&m);
        assert!((spectral_norm(&m).unwrap() - oracle).abs() < 1e-8 * oracle);
    }

    #[test]
    fn clip_and_shrink_diagonal() {
        let d = Matrix::from_diagonal(&Vector::from_vec(vec![3.0, 1.0]));
        let c = sv_clip(&d, 2.0).unwrap();
        assert!((c - Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 1.0]))).norm() < 1e-14);
        let p = sv_soft_threshold(&d, 2.0).unwrap();
        assert!((p - Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 0.0]))).norm() < 1e-14);
    }

    #[test]
    fn clip_inside_ball_is_identity_and_zero_radius_is_zero() {
        let m = random(4, 6, 11);
        let op = spectral_norm(&m).unwrap();
        assert!((sv_clip(&m, op * 1.5).unwrap() - &m).norm() < 1e-12);
        assert!(sv_clip(&m, 0.0).unwrap().norm() < 1e-14);
        assert!((sv_soft_threshold(&m, 0.0).unwrap() - &m).norm() < 1e-12);
    }

    #[test]
    fn moreau_decomposition() {
        for seed in 0..20 {
            let m = random(5, 8, seed);
            let tau = 0.3 * (seed as f64 + 1.0) / 4.0;
            let sum = sv_soft_threshold(&m, tau).unwrap() + sv_clip(&m, tau).unwrap();
            assert!((sum - &m).norm() <= 1e-10 * m.norm().max(1.0));
        }
    }

    #[test]
    fn shifted_spectral_solve() {
        let x = random(6, 4, 21);
        let g = &x * x.transpose();
        let spec = SymmetricSpectrum::new(&g).unwrap();
        let b = Vector::from_fn(6, |i, _| i as f64 - 2.0);
        for (scale, shift) in [(1.0, 0.5), (3.0, 1e-3), (0.0, 2.0)] {
            let sol = spec.solve_shifted(scale, shift, &b).unwrap();
            let a = &g * scale + Matrix::identity(6, 6) * shift;
            assert!((a * sol - &b).norm() / b.norm() < 1e-10);
        }
        // G has rank 4, so the unshifted system is singular
        assert!(spec.solve_shifted(1.0, 0.0, &b).is_err());
    }

    #[test]
    fn spd_solve_cases() {
        let b = random(3, 2, 1);
        let (x, _) = spd_solve(&Matrix::identity(3, 3), &b).unwrap();
        assert!((x - &b).norm() < 1e-15);
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![2.0, 4.0]));
        let (x, f) = spd_solve(&a, &Matrix::from_column_slice(2, 1, &[2.0, 8.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
        assert_eq!(f.dim(), 2);
        let a = random_spd(20, 5);
        let b = random(20, 3, 6);
        let (x, f) = spd_solve(&a, &b).unwrap();
        assert!((&a * &x - &b).norm() / b.norm() < 1e-10);
        // factor reuse
        let b2 = random(20, 1, 7);
        let x2 = f.solve(&b2);
        assert!((&a * x2 - &b2).norm() / b2.norm() < 1e-10);
    }

    #[test]
    fn spd_rejects_indefinite() {
        let a = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(SpdFactor::new(a), Err(Error::NotPositiveDefinite)));
    }

    #[test]
    fn cg_matches_direct_solves() {
        let b = Vector::from_vec(vec![1.0, -2.0, 3.0]);
        let out = cg_solve(|v, o| o.copy_from(v), &b, None, 1e-12, 10).unwrap();
        assert!((out.x - &b).norm() < 1e-14);

        let diag = Vector::from_vec(vec![1.0, 2.0, 5.0]);
        let out = cg_solve(|v, o| o.copy_from(&v.component_mul(&diag)), &b, None, 1e-12, 10).unwrap();
        assert!((out.x - b.component_div(&diag)).norm() < 1e-12);

        let a = random_spd(30, 9);
        let rhs = random(30, 1, 10).column(0).into_owned();
        let out = cg_solve(|v, o| o.copy_from(&(&a * v)), &rhs, None, 1e-12, 200).unwrap();
        assert!(out.converged);
        let direct = SpdFactor::new(a.clone()).unwrap().solve_vec(&rhs);
        assert!((out.x - direct).norm() / rhs.norm() < 1e-10);
    }

    #[test]
    fn cg_reports_iteration_cap() {
        let a = random_spd(30, 2);
        let rhs = Vector::from_element(30, 1.0);
        let out = cg_solve(|v, o| o.copy_from(&(&a * v)), &rhs, None, 1e-14, 2).unwrap();
        assert!(!out.converged);
        assert_eq!(out.iterations, 2);
    }

    #[test]
    fn cg_detects_indefinite_operator() {
        let rhs = Vector::from_vec(vec![1.0, 1.0]);
        let res = cg_solve(|v, o| o.copy_from(&(-v)), &rhs, None, 1e-12, 10);
        assert!(matches!(res, Err(Error::CgDiverged { .. })));
    }
}
