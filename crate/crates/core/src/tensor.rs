//! Dense K-way tensors.
//!
//! Storage is column-major: the first index varies fastest. The mode-k
//! unfolding places mode-k fibers in columns, enumerated in lexicographic
//! order of the remaining indices with the lowest remaining mode varying
//! fastest (the Kolda–Bader convention). For a linear index
//! `a + left * (i_k + n_k * c)` with `left = n_1 ⋯ n_{k-1}`, the element
//! lands at row `i_k`, column `a + left * c` of the unfolding.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::seeded_rng;

/// Dense K-way array of `f64` with first-index-fastest layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if data.len() != len {
            return Err(Error::DataLength {
                shape,
                len: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let len = check_shape(shape)?;
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f(&idx));
            for (i, n) in idx.iter_mut().zip(shape) {
                *i += 1;
                if *i < *n {
                    break;
                }
                *i = 0;
            }
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Tensor with i.i.d. standard Gaussian entries.
    pub fn gaussian<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Result<Self> {
        let len = check_shape(shape)?;
        let data = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Linear offset of a multi-index.
    pub fn offset(&self, idx: &[usize]) -> usize {
        let mut off = 0;
        let mut stride = 1;
        for (i, n) in idx.iter().zip(&self.shape) {
            off += i * stride;
            stride *= n;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.order() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: self.order(),
            });
        }
        Ok(())
    }

    fn check_same_shape(&self, other: &DenseTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                found: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Mode-k unfolding (`mode` is zero-based), an `n_k × N/n_k` matrix.
    pub fn unfold(&self, mode: usize) -> Result<Matrix> {
        self.check_mode(mode)?;
        Ok(unfold_raw(&self.data, &self.shape, mode))
    }

    /// Inverse of [`DenseTensor::unfold`].
    pub fn fold(m: &Matrix, mode: usize, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if mode >= shape.len() {
            return Err(Error::ModeOutOfRange {
                mode,
                order: shape.len(),
            });
        }
        let (left, nk, right) = split_dims(shape, mode);
        if m.nrows() != nk || m.ncols() != left * right {
            return Err(Error::ShapeMismatch {
                expected: vec![nk, left * right],
                found: vec![m.nrows(), m.ncols()],
            });
        }
        let mut data = vec![0.0; len];
        fold_raw(m, shape, mode, &mut data);
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Sum of element-wise products.
    pub fn inner(&self, other: &DenseTensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn frobenius(&self) -> f64 {
        dot(&self.data, &self.data).sqrt()
    }

    pub fn scaled(&self, c: f64) -> DenseTensor {
        DenseTensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| c * x).collect(),
        }
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &DenseTensor) -> Result<()> {
        self.check_same_shape(other)?;
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += c * o;
        }
        Ok(())
    }

    pub fn add(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(1.0, other)?;
        Ok(out)
    }

    pub fn sub(&self, other: &DenseTensor) -> Result<DenseTensor> {
        let mut out = self.clone();
        out.axpy(-1.0, other)?;
        Ok(out)
    }

    /// Mode-k product `self ×_k m`, where `m` is `J × n_k`.
    pub fn mode_product(&self, m: &Matrix, mode: usize) -> Result<DenseTensor> {
        self.check_mode(mode)?;
        if m.ncols() != self.shape[mode] {
            return Err(Error::ShapeMismatch {
                expected: vec![m.nrows(), self.shape[mode]],
                found: vec![m.nrows(), m.ncols()],
            });
        }
        let unfolded = self.unfold(mode)?;
        let product = m * unfolded;
        let mut shape = self.shape.clone();
        shape[mode] = m.nrows();
        DenseTensor::fold(&product, mode, &shape)
    }
}

/// Mode-k unfolding of raw column-major data with the given shape.
pub fn unfold_raw(data: &[f64], shape: &[usize], mode: usize) -> Matrix {
    let (left, nk, right) = split_dims(shape, mode);
    if left == 1 {
        return Matrix::from_column_slice(nk, right, data);
    }
    let mut out = DMatrix::zeros(nk, left * right);
    for c in 0..right {
        for i in 0..nk {
            let src = left * (i + nk * c);
            for a in 0..left {
                out[(i, a + left * c)] = data[src + a];
            }
        }
    }
    out
}

/// Writes the folding of `m` into `out` (inverse of [`unfold_raw`]).
pub fn fold_raw(m: &Matrix, shape: &[usize], mode: usize, out: &mut [f64]) {
    let (left, nk, right) = split_dims(shape, mode);
    if left == 1 {
        out.copy_from_slice(m.as_slice());
        return;
    }
    for c in 0..right {
        for i in 0..nk {
            let dst = left * (i + nk * c);
            for a in 0..left {
                out[dst + a] = m[(i, a + left * c)];
            }
        }
    }
}

/// `(∏_{j<k} n_j, n_k, ∏_{j>k} n_j)`
pub(crate) fn split_dims(shape: &[usize], mode: usize) -> (usize, usize, usize) {
    let left = shape[..mode].iter().product();
    let right = shape[mode + 1..].iter().product();
    (left, shape[mode], right)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Multilinear rank `(r_1, …, r_K)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilinearRank(pub Vec<usize>);

impl MultilinearRank {
    pub fn ranks(&self) -> &[usize] {
        &self.0
    }

    /// Checks `r_k <= min(n_k, N / n_k)` for every mode.
    pub fn validate_for(&self, shape: &[usize]) -> Result<()> {
        let total: usize = shape.iter().product();
        let ok = self.0.len() == shape.len()
            && self
                .0
                .iter()
                .zip(shape)
                .all(|(&r, &n)| r <= n && r <= total / n);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRanks {
                shape: shape.to_vec(),
                ranks: self.0.clone(),
            })
        }
    }
}

/// Default relative tolerance for numerical rank estimation.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Counts singular values of each unfolding above `tol × σ_max`.
pub fn multilinear_rank(t: &DenseTensor, tol: f64) -> Result<MultilinearRank> {
    let mut ranks = Vec::with_capacity(t.order());
    for k in 0..t.order() {
        let sv = linalg::singular_values(&t.unfold(k)?)?;
        let top = sv.first().copied().unwrap_or(0.0);
        let r = if top > 0.0 {
            sv.iter().filter(|&&s| s > tol * top).count()
        } else {
            0
        };
        ranks.push(r);
    }
    Ok(MultilinearRank(ranks))
}

/// Recipe for a random Tucker tensor `C ×_1 U_1 ⋯ ×_K U_K` with a standard
/// Gaussian core and orthonormal factor columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuckerSpec {
    pub shape: Vec<usize>,
    pub ranks: MultilinearRank,
}

impl TuckerSpec {
    pub fn new(shape: Vec<usize>, ranks: Vec<usize>) -> Self {
        Self {
            shape,
            ranks: MultilinearRank(ranks),
        }
    }

    fn validate(&self) -> Result<()> {
        check_shape(&self.shape)?;
        let r = &self.ranks.0;
        let bad = || Error::InvalidRanks {
            shape: self.shape.clone(),
            ranks: r.clone(),
        };
        if r.len() != self.shape.len() || r.iter().zip(&self.shape).any(|(&r, &n)| r == 0 || r > n) {
            return Err(bad());
        }
        // a Tucker core can only reach rank r_k in mode k if r_k <= ∏_{j≠k} r_j
        let prod: usize = r.iter().product();
        if r.len() > 1 && r.iter().any(|&rk| rk * rk > prod) {
            return Err(bad());
        }
        Ok(())
    }
}

/// Draws a Tucker tensor. Factors are thin-QR orthogonalized Gaussian matrices.
pub fn tucker_random(spec: &TuckerSpec, seed: u64) -> Result<DenseTensor> {
    spec.validate()?;
    let mut rng = seeded_rng(seed);
    let mut t = DenseTensor::gaussian(&spec.ranks.0, &mut rng)?;
    for (k, (&n, &r)) in spec.shape.iter().zip(&spec.ranks.0).enumerate() {
        let g = DMatrix::from_fn(n, r, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        t = t.mode_product(&q, k)?;
    }
    Ok(t)
}
