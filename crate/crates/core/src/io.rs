//! Binary tensor files, dataset directories and model containers.
//!
//! A tensor file is `"TNSR"`, a `u32` format version, a `u32` order `K`,
//! `K` dimensions as `u64`, then the elements as little-endian `f64` in
//! first-index-fastest order.
//!
//! A model file is `"TMDL"`, a `u32` version, a `u64` header length, a JSON
//! header, then the weight tensor and any latent parts as tensor records.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Provenance};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::TaskKind;
use crate::solvers::{Model, NormKind};
use crate::tensor::DenseTensor;

const TENSOR_MAGIC: &[u8; 4] = b"TNSR";
const TENSOR_VERSION: u32 = 1;
const MODEL_MAGIC: &[u8; 4] = b"TMDL";
const MODEL_VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 24;

pub const MANIFEST_FILE: &str = "manifest.json";

fn read_array<const L: usize>(r: &mut impl Read) -> Result<[u8; L]> {
    let mut buf = [0u8; L];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("truncated file".into())
    } else {
        Error::Io(e)
    }
}

pub fn write_tensor(w: &mut impl Write, t: &DenseTensor) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&TENSOR_VERSION.to_le_bytes())?;
    w.write_all(&(t.order() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_tensor(r: &mut impl Read) -> Result<DenseTensor> {
    if &read_array::<4>(r)? != TENSOR_MAGIC {
        return Err(Error::Format("bad magic bytes, expected TNSR".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != TENSOR_VERSION {
        return Err(Error::Format(format!("unsupported tensor format version {version}")));
    }
    let order = u32::from_le_bytes(read_array(r)?) as usize;
    if order == 0 || order > 64 {
        return Err(Error::Format(format!("invalid tensor order {order}")));
    }
    let mut shape = Vec::with_capacity(order);
    let mut len: u64 = 1;
    for _ in 0..order {
        let d = u64::from_le_bytes(read_array(r)?);
        if d == 0 {
            return Err(Error::Format("zero dimension".into()));
        }
        len = len
            .checked_mul(d)
            .filter(|&l| l <= (usize::MAX / 8) as u64)
            .ok_or_else(|| Error::Format("tensor too large".into()))?;
        shape.push(d as usize);
    }
    let mut bytes = Vec::new();
    r.by_ref().take(len * 8).read_to_end(&mut bytes)?;
    if bytes.len() as u64 != len * 8 {
        return Err(Error::Format("truncated file".into()));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    DenseTensor::new(shape, data)
}

fn expect_eof(r: &mut impl Read) -> Result<()> {
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after tensor".into()));
    }
    Ok(())
}

pub fn save_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<DenseTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let t = read_tensor(&mut r)?;
    expect_eof(&mut r)?;
    Ok(t)
}

/// Loads a 2-way tensor file as a matrix.
pub fn load_matrix(path: &Path) -> Result<Matrix> {
    let t = load_tensor(path)?;
    match *t.shape() {
        [p, q] => Ok(Matrix::from_column_slice(p, q, t.data())),
        _ => Err(Error::Format(format!("expected a matrix, found shape {:?}", t.shape()))),
    }
}

pub fn save_matrix(path: &Path, m: &Matrix) -> Result<()> {
    save_tensor(path, &DenseTensor::new(vec![m.nrows(), m.ncols()], m.as_slice().to_vec())?)
}

/// On-disk arrangement of dataset covariates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    /// One tensor of shape `[n₁, …, n_K, m]`.
    Stacked,
    /// One tensor file per sample under `samples/`.
    PerSample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub task: TaskKind,
    pub shape: Vec<usize>,
    pub samples: usize,
    pub layout: DatasetLayout,
    pub covariates: String,
    pub targets: String,
    #[serde(default = "unspecified")]
    pub provenance: Provenance,
}

fn unspecified() -> Provenance {
    Provenance::Unspecified
}

fn sample_file(i: usize) -> String {
    format!("samples/{i:06}.tnsr")
}

/// Writes `data` as a directory with a JSON manifest.
pub fn write_dataset(dir: &Path, data: &Dataset, layout: DatasetLayout) -> Result<()> {
    data.validate()?;
    let shape = data
        .shape()
        .ok_or_else(|| Error::Config("cannot write an empty dataset".into()))?
        .to_vec();
    fs::create_dir_all(dir)?;
    let covariates = match layout {
        DatasetLayout::Stacked => {
            let mut stacked_shape = shape.clone();
            stacked_shape.push(data.len());
            let mut flat = Vec::with_capacity(data.len() * data.covariates[0].len());
            for x in &data.covariates {
                flat.extend_from_slice(x.data());
            }
            save_tensor(&dir.join("covariates.tnsr"), &DenseTensor::new(stacked_shape, flat)?)?;
            "covariates.tnsr".to_string()
        }
        DatasetLayout::PerSample => {
            fs::create_dir_all(dir.join("samples"))?;
            for (i, x) in data.covariates.iter().enumerate() {
                save_tensor(&dir.join(sample_file(i)), x)?;
            }
            "samples".to_string()
        }
    };
    save_tensor(&dir.join("targets.tnsr"), &DenseTensor::new(vec![data.len()], data.targets.clone())?)?;
    let manifest = Manifest {
        format_version: 1,
        task: data.task,
        shape,
        samples: data.len(),
        layout,
        covariates,
        targets: "targets.tnsr".into(),
        provenance: data.provenance.clone(),
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

fn inside(dir: &Path, name: &str) -> Result<PathBuf> {
    let rel = Path::new(name);
    if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
        return Err(Error::Format(format!("manifest path {name:?} escapes the dataset directory")));
    }
    Ok(dir.join(rel))
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("malformed manifest: {e}")))?;
    if manifest.format_version != 1 {
        return Err(Error::Format(format!("unsupported dataset version {}", manifest.format_version)));
    }
    if manifest.shape.is_empty() || manifest.shape.contains(&0) {
        return Err(Error::Format("manifest shape must have positive dimensions".into()));
    }
    let targets = load_tensor(&inside(dir, &manifest.targets)?)?;
    if targets.shape() != [manifest.samples] {
        return Err(Error::Format(format!(
            "targets have shape {:?}, expected [{}]",
            targets.shape(),
            manifest.samples
        )));
    }
    let covariates = match manifest.layout {
        DatasetLayout::Stacked => {
            let stacked = load_tensor(&inside(dir, &manifest.covariates)?)?;
            let mut expected = manifest.shape.clone();
            expected.push(manifest.samples);
            if stacked.shape() != expected.as_slice() {
                return Err(Error::Format(format!(
                    "covariates have shape {:?}, expected {expected:?}",
                    stacked.shape()
                )));
            }
            let n: usize = manifest.shape.iter().product();
            stacked
                .data()
                .chunks_exact(n)
                .map(|c| DenseTensor::new(manifest.shape.clone(), c.to_vec()))
                .collect::<Result<Vec<_>>>()?
        }
        DatasetLayout::PerSample => {
            let base = inside(dir, &manifest.covariates)?;
            let mut out = Vec::with_capacity(manifest.samples);
            for i in 0..manifest.samples {
                let x = load_tensor(&base.join(format!("{i:06}.tnsr")))?;
                if x.shape() != manifest.shape.as_slice() {
                    return Err(Error::Format(format!("sample {i} has shape {:?}", x.shape())));
                }
                out.push(x);
            }
            out
        }
    };
    let data = Dataset {
        covariates,
        targets: targets.into_data(),
        task: manifest.task,
        provenance: match manifest.provenance {
            Provenance::Unspecified => Provenance::File { path: dir.to_path_buf() },
            p => p,
        },
    };
    data.validate()?;
    Ok(data)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    norm: NormKind,
    lambda: f64,
    task: TaskKind,
    bias: f64,
    latent_parts: usize,
}

pub fn write_model(w: &mut impl Write, model: &Model) -> Result<()> {
    let parts = model.latent_parts.as_deref().unwrap_or(&[]);
    let header = serde_json::to_vec(&ModelHeader {
        norm: model.norm.clone(),
        lambda: model.lambda,
        task: model.task,
        bias: model.bias,
        latent_parts: parts.len(),
    })?;
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    write_tensor(w, &model.weight)?;
    for p in parts {
        write_tensor(w, p)?;
    }
    Ok(())
}

pub fn read_model(r: &mut impl Read) -> Result<Model> {
    if &read_array::<4>(r)? != MODEL_MAGIC {
        return Err(Error::Format("bad magic bytes, expected TMDL".into()));
    }
    let version = u32::from_le_bytes(read_array(r)?);
    if version != MODEL_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let len = u64::from_le_bytes(read_array(r)?);
    if len > MAX_HEADER {
        return Err(Error::Format("model header too large".into()));
    }
    let mut header = vec![0u8; len as usize];
    r.read_exact(&mut header).map_err(truncated)?;
    let header: ModelHeader =
        serde_json::from_slice(&header).map_err(|e| Error::Format(format!("malformed model header: {e}")))?;
    let weight = read_tensor(r)?;
    let latent_parts = if header.latent_parts > 0 {
        let mut parts = Vec::with_capacity(header.latent_parts);
        for _ in 0..header.latent_parts {
            let p = read_tensor(r)?;
            if p.shape() != weight.shape() {
                return Err(Error::Format("latent part shape differs from weight".into()));
            }
            parts.push(p);
        }
        Some(parts)
    } else {
        None
    };
    Ok(Model {
        norm: header.norm,
        lambda: header.lambda,
        task: header.task,
        weight,
        latent_parts,
        bias: header.bias,
    })
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(&mut w, model)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let m = read_model(&mut r)?;
    expect_eof(&mut r)?;
    Ok(m)
}
