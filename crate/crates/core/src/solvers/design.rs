use std::sync::OnceLock;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SymmetricSpectrum, Vector};
use crate::losses::{check_label, TaskKind};
use crate::tensor::DenseTensor;

/// Training data in matrix form: row `i` of `x` is `vec(X_i)`.
///
/// The Gram matrix `X Xᵀ` is computed once on first use and shared by every
/// solver built on this design.
#[derive(Debug)]
pub struct Design {
    shape: Vec<usize>,
    task: TaskKind,
    x: Matrix,
    y: Vector,
    gram: OnceLock<Matrix>,
    column_sums: OnceLock<Vector>,
    gram_spectrum: OnceLock<Option<SymmetricSpectrum>>,
    centered_spectrum: OnceLock<Option<SymmetricSpectrum>>,
}

impl Design {
    pub fn new(covariates: &[DenseTensor], targets: &[f64], task: TaskKind) -> Result<Self> {
        let first = covariates
            .first()
            .ok_or_else(|| Error::Config("empty training set".into()))?;
        if covariates.len() != targets.len() {
            return Err(Error::Config(format!(
                "{} covariates but {} targets",
                covariates.len(),
                targets.len()
            )));
        }
        let shape = first.shape().to_vec();
        let m = covariates.len();
        let n = first.len();
        let mut x = Matrix::zeros(m, n);
        for (i, t) in covariates.iter().enumerate() {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            if t.data().iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("non-finite covariate in sample {i}")));
            }
            for (j, v) in t.data().iter().enumerate() {
                x[(i, j)] = *v;
            }
        }
        if targets.iter().any(|y| !y.is_finite()) {
            return Err(Error::Config("non-finite target".into()));
        }
        if task == TaskKind::Classification {
            for &y in targets {
                check_label(y)?;
            }
        }
        Ok(Self {
            shape,
            task,
            x,
            y: Vector::from_column_slice(targets),
            gram: OnceLock::new(),
            column_sums: OnceLock::new(),
            gram_spectrum: OnceLock::new(),
            centered_spectrum: OnceLock::new(),
        })
    }

    pub fn from_dataset(data: &Dataset) -> Result<Self> {
        Self::new(&data.covariates, &data.targets, data.task)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn task(&self) -> TaskKind {
        self.task
    }

    pub fn samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn features(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Vector {
        &self.y
    }

    /// `X Xᵀ`, the matrix of pairwise inner products `⟨X_i, X_j⟩`.
    pub fn gram(&self) -> &Matrix {
        self.gram.get_or_init(|| &self.x * self.x.transpose())
    }

    /// `Xᵀ 1 = Σ_i vec(X_i)`.
    pub fn column_sums(&self) -> &Vector {
        self.column_sums
            .get_or_init(|| self.x.transpose() * Vector::from_element(self.samples(), 1.0))
    }

    /// Column means `x̄ = Xᵀ1 / m`.
    pub fn column_means(&self) -> Vector {
        self.column_sums() / self.samples() as f64
    }

    /// Eigendecomposition of `X Xᵀ`, shared by every dual solve on this design.
    pub fn gram_spectrum(&self) -> Result<&SymmetricSpectrum> {
        self.gram_spectrum
            .get_or_init(|| SymmetricSpectrum::new(self.gram()).ok())
            .as_ref()
            .ok_or(Error::SvdFailed)
    }

    /// Whether centered systems are solved on the sample side (`m ≤ N`).
    pub fn centered_on_samples(&self) -> bool {
        self.samples() <= self.features()
    }

    /// Eigendecomposition of the column-centered design's smaller Gram
    /// matrix: `J X Xᵀ J` with `J = I − 11ᵀ/m` when `m ≤ N`, else `X̃ᵀ X̃`.
    pub fn centered_spectrum(&self) -> Result<&SymmetricSpectrum> {
        self.centered_spectrum
            .get_or_init(|| {
                if self.centered_on_samples() {
                    let g = self.gram();
                    let m = g.nrows();
                    let row_means = Vector::from_fn(m, |i, _| g.row(i).mean());
                    let total = row_means.mean();
                    let c = Matrix::from_fn(m, m, |i, j| g[(i, j)] - row_means[i] - row_means[j] + total);
                    SymmetricSpectrum::new(&c).ok()
                } else {
                    let mean = self.column_means();
                    let mut xc = self.x.clone();
                    for mut row in xc.row_iter_mut() {
                        row -= mean.transpose();
                    }
                    SymmetricSpectrum::new(&xc.tr_mul(&xc)).ok()
                }
            })
            .as_ref()
            .ok_or(Error::SvdFailed)
    }

    /// `X w`
    pub fn apply(&self, w: &Vector) -> Vector {
        &self.x * w
    }

    /// `Xᵀ a`
    pub fn apply_t(&self, a: &Vector) -> Vector {
        self.x.tr_mul(a)
    }
}
