//! Datasets, the synthetic regression generator and covariance features.

use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{check_label, TaskKind};
use crate::rng::{derive_seed, seeded_rng};
use crate::tensor::{tucker_random, DenseTensor, TuckerSpec};

/// Where a dataset came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Generated { spec: ToyRegressionSpec, split: String },
    File { path: PathBuf },
    Unspecified,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub covariates: Vec<DenseTensor>,
    pub targets: Vec<f64>,
    pub task: TaskKind,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(covariates: Vec<DenseTensor>, targets: Vec<f64>, task: TaskKind) -> Result<Self> {
        let data = Self {
            covariates,
            targets,
            task,
            provenance: Provenance::Unspecified,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.len() != self.targets.len() {
            return Err(Error::Config(format!(
                "{} covariates but {} targets",
                self.covariates.len(),
                self.targets.len()
            )));
        }
        if let Some(first) = self.covariates.first() {
            for x in &self.covariates[1..] {
                if x.shape() != first.shape() {
                    return Err(Error::ShapeMismatch {
                        expected: first.shape().to_vec(),
                        found: x.shape().to_vec(),
                    });
                }
            }
        }
        if self.task == TaskKind::Classification {
            for &y in &self.targets {
                check_label(y)?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Common covariate shape, `None` for an empty dataset.
    pub fn shape(&self) -> Option<&[usize]> {
        self.covariates.first().map(|x| x.shape())
    }

    /// Rows selected by `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            covariates: indices.iter().map(|&i| self.covariates[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
            task: self.task,
            provenance: self.provenance.clone(),
        }
    }
}

/// Weight-tensor setups of the synthetic study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Setup {
    A,
    B,
    C,
}

impl Setup {
    pub const ALL: [Setup; 3] = [Setup::A, Setup::B, Setup::C];

    pub fn shape(self) -> Vec<usize> {
        match self {
            Setup::A | Setup::B => vec![10, 10, 10],
            Setup::C => vec![4, 10, 10],
        }
    }

    pub fn ranks(self) -> Vec<usize> {
        match self {
            Setup::A => vec![3, 3, 3],
            Setup::B => vec![3, 5, 8],
            Setup::C => vec![3, 4, 8],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setup::A => "A",
            Setup::B => "B",
            Setup::C => "C",
        }
    }

    pub fn tucker(self) -> TuckerSpec {
        TuckerSpec::new(self.shape(), self.ranks())
    }
}

impl std::str::FromStr for Setup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "A" => Ok(Setup::A),
            "B" => Ok(Setup::B),
            "C" => Ok(Setup::C),
            _ => Err(Error::Config(format!("unknown setup {s:?}; expected A, B or C"))),
        }
    }
}

pub const DEFAULT_NOISE_STD: f64 = 0.316_227_766_016_837_94;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyRegressionSpec {
    pub setup: Setup,
    pub m_train: usize,
    pub m_val: usize,
    pub m_test: usize,
    pub noise_std: f64,
    pub seed: u64,
}

impl ToyRegressionSpec {
    pub fn new(setup: Setup, m_train: usize, m_val: usize, m_test: usize, seed: u64) -> Self {
        Self {
            setup,
            m_train,
            m_val,
            m_test,
            noise_std: DEFAULT_NOISE_STD,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_train == 0 || self.m_val == 0 || self.m_test == 0 {
            return Err(Error::Config("sample counts must be positive".into()));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() {
            return Err(Error::Config("noise_std must be finite and non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToySplits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
    pub truth: DenseTensor,
}

/// Draws `m` samples `y_i = ⟨W, X_i⟩ + noise_std · ν_i` with standard Gaussian
/// covariates and noise.
pub fn sample_regression<R: Rng + ?Sized>(
    truth: &DenseTensor,
    m: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let mut covariates = Vec::with_capacity(m);
    let mut targets = Vec::with_capacity(m);
    for _ in 0..m {
        let x = DenseTensor::gaussian(truth.shape(), rng)?;
        let noise: f64 = rng.sample(StandardNormal);
        targets.push(truth.inner(&x)? + noise_std * noise);
        covariates.push(x);
    }
    Ok(Dataset {
        covariates,
        targets,
        task: TaskKind::Regression,
        provenance: Provenance::Unspecified,
    })
}

/// Weight tensor of a setup, determined by `seed`.
pub fn toy_truth(setup: Setup, seed: u64) -> Result<DenseTensor> {
    tucker_random(&setup.tucker(), seed)
}

/// Train/validation/test draws around a given weight tensor.
pub fn gen_toy_regression_with_truth(spec: &ToyRegressionSpec, truth: DenseTensor, data_seed: u64) -> Result<ToySplits> {
    spec.validate()?;
    if truth.shape() != spec.setup.shape().as_slice() {
        return Err(Error::ShapeMismatch {
            expected: spec.setup.shape(),
            found: truth.shape().to_vec(),
        });
    }
    let mut rng = seeded_rng(data_seed);
    let mut draw = |m: usize, split: &str| -> Result<Dataset> {
        let mut d = sample_regression(&truth, m, spec.noise_std, &mut rng)?;
        d.provenance = Provenance::Generated {
            spec: spec.clone(),
            split: split.to_string(),
        };
        Ok(d)
    };
    let train = draw(spec.m_train, "train")?;
    let val = draw(spec.m_val, "val")?;
    let test = draw(spec.m_test, "test")?;
    Ok(ToySplits { train, val, test, truth })
}

/// Generates a weight tensor and data splits, all derived from `spec.seed`.
pub fn gen_toy_regression(spec: &ToyRegressionSpec) -> Result<ToySplits> {
    let truth = toy_truth(spec.setup, derive_seed(spec.seed, &[0]))?;
    gen_toy_regression_with_truth(spec, truth, derive_seed(spec.seed, &[1]))
}

/// Channel covariance of a `C × T` signal: `Ŝ Ŝᵀ` with
/// `Ŝ = S (I − 11ᵀ/T) / √(T − 1)`.
pub fn covariance_features(signal: &Matrix) -> Result<Matrix> {
    let (c, t) = signal.shape();
    if t < 2 {
        return Err(Error::Config(format!("need at least two time points, got {t}")));
    }
    if c == 0 {
        return Err(Error::Config("need at least one channel".into()));
    }
    let mut centered = signal.clone();
    for mut row in centered.row_iter_mut() {
        let mean = row.mean();
        row.add_scalar_mut(-mean);
    }
    centered /= ((t - 1) as f64).sqrt();
    let out = &centered * centered.transpose();
    Ok(Matrix::from_fn(c, c, |i, j| 0.5 * (out[(i, j)] + out[(j, i)])))
}

/// Stacks `Z` matrices of common shape `C₁ × C₂` into a `Z × C₁ × C₂` tensor.
pub fn stack_feature_tensor(mats: &[Matrix]) -> Result<DenseTensor> {
    let first = mats
        .first()
        .ok_or_else(|| Error::Config("no matrices to stack".into()))?;
    let (p, q) = first.shape();
    for m in mats {
        if m.shape() != (p, q) {
            return Err(Error::ShapeMismatch {
                expected: vec![p, q],
                found: vec![m.nrows(), m.ncols()],
            });
        }
    }
    DenseTensor::from_fn(&[mats.len(), p, q], |idx| mats[idx[0]][(idx[1], idx[2])])
}
