//! Deterministic synthetic datasets and their binary cache format.
//!
//! Cache layout (little endian): `b"NFDS"`, `u32` version, 8-byte spec hash,
//! `u64` rows, `u64` feature count, `u8` target kind (0 classes, 1 values),
//! `u64` target width, then inputs and targets as row-major `f64`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::models::{Batch, Targets};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Regression targets from a random one-hidden-layer tanh network.
    TeacherNet,
    /// Classification of isotropic Gaussian clusters.
    GaussianBlobs,
    /// Two one-hot characters in, the first one out.
    CharCopy,
}

impl FromStr for DatasetKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher_net" => Ok(DatasetKind::TeacherNet),
            "gaussian_blobs" => Ok(DatasetKind::GaussianBlobs),
            "char_copy" => Ok(DatasetKind::CharCopy),
            _ => Err(Error::Config(format!(
                "unknown dataset kind {s:?}, expected teacher_net, gaussian_blobs or char_copy"
            ))),
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::TeacherNet => "teacher_net",
            DatasetKind::GaussianBlobs => "gaussian_blobs",
            DatasetKind::CharCopy => "char_copy",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub size: usize,
    /// Target noise std for `teacher_net`; label-flip probability otherwise.
    pub noise: f64,
    pub seed: u64,
    /// Input width. `char_copy` requires `2 × outputs`.
    pub features: usize,
    /// Output width, or the number of classes.
    pub outputs: usize,
    pub teacher_hidden: usize,
    /// Distance between blob centres (exact when classes <= features).
    pub separation: f64,
}

impl DatasetSpec {
    pub fn new(kind: DatasetKind, size: usize, features: usize, outputs: usize) -> Self {
        Self { kind, size, noise: 0.0, seed: 0, features, outputs, teacher_hidden: 16, separation: 10.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.features == 0 || self.outputs == 0 {
            return Err(Error::Config("dataset size, features and outputs must be positive".into()));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("data.noise must be finite and nonnegative, got {}", self.noise)));
        }
        match self.kind {
            DatasetKind::TeacherNet if self.teacher_hidden == 0 => {
                Err(Error::Config("data.teacher_hidden must be positive".into()))
            }
            DatasetKind::GaussianBlobs | DatasetKind::CharCopy if self.outputs < 2 => {
                Err(Error::Config("classification datasets need at least two classes".into()))
            }
            DatasetKind::GaussianBlobs | DatasetKind::CharCopy if self.noise > 1.0 => {
                Err(Error::Config("label-flip probability must not exceed 1".into()))
            }
            DatasetKind::CharCopy if self.features != 2 * self.outputs => Err(Error::Config(format!(
                "char_copy needs features = 2 x outputs, got {} and {}",
                self.features, self.outputs
            ))),
            DatasetKind::GaussianBlobs if !(self.separation.is_finite() && self.separation >= 0.0) => {
                Err(Error::Config("data.separation must be finite and nonnegative".into()))
            }
            _ => Ok(()),
        }
    }

    /// First 8 bytes of SHA-256 over a canonical rendering of the spec.
    pub fn hash(&self) -> [u8; 8] {
        let canonical = format!(
            "{}|{}|{:e}|{}|{}|{}|{}|{:e}",
            self.kind, self.size, self.noise, self.seed, self.features, self.outputs, self.teacher_hidden, self.separation
        );
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = [0u8; 8];
        out.copy_from_slice(&digest[..8]);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Targets,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn full_batch(&self) -> Batch {
        Batch { inputs: self.inputs.clone(), targets: self.targets.clone() }
    }

    pub fn select(&self, rows: &[usize]) -> Batch {
        let cols = self.inputs.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        rows.iter().for_each(|&r| data.extend_from_slice(self.inputs.row(r)));
        let inputs = Matrix::new(rows.len(), cols, data).expect("rows are nonempty");
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(rows.iter().map(|&r| c[r]).collect()),
            Targets::Values(v) => {
                let mut data = Vec::with_capacity(rows.len() * v.cols());
                rows.iter().for_each(|&r| data.extend_from_slice(v.row(r)));
                Targets::Values(Matrix::new(rows.len(), v.cols(), data).expect("rows are nonempty"))
            }
        };
        Batch { inputs, targets }
    }

    /// One shuffled epoch split into batches; the last may be smaller.
    pub fn epoch<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Batch> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        order.chunks(batch_size.max(1)).map(|rows| self.select(rows)).collect()
    }

    /// Batches in storage order.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        let order: Vec<usize> = (0..self.len()).collect();
        order.chunks(batch_size.max(1)).map(|rows| self.select(rows)).collect()
    }
}

pub fn make_dataset(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, f, k) = (spec.size, spec.features, spec.outputs);
    Ok(match spec.kind {
        DatasetKind::TeacherNet => {
            let hidden = spec.teacher_hidden;
            let w1 = Matrix::random_normal(hidden, f, &mut rng).scaled(1.0 / (f as f64).sqrt());
            let b1: Vec<f64> = (0..hidden).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
            let w2 = Matrix::random_normal(k, hidden, &mut rng).scaled(1.0 / (hidden as f64).sqrt());
            let inputs = Matrix::random_normal(n, f, &mut rng);
            let mut h = inputs.matmul_nt(&w1)?;
            for i in 0..n {
                for (j, b) in b1.iter().enumerate() {
                    h.set(i, j, (h.get(i, j) + b).tanh());
                }
            }
            let mut y = h.matmul_nt(&w2)?;
            if spec.noise > 0.0 {
                y.as_mut_slice().iter_mut().for_each(|x| *x += spec.noise * rng.sample::<f64, _>(StandardNormal));
            }
            Dataset { inputs, targets: Targets::Values(y) }
        }
        DatasetKind::GaussianBlobs => {
            let centres = blob_centres(k, f, spec.separation, &mut rng);
            let mut data = Vec::with_capacity(n * f);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let class = i % k;
                data.extend(centres[class].iter().map(|c| c + rng.sample::<f64, _>(StandardNormal)));
                labels.push(flip_label(class, k, spec.noise, &mut rng));
            }
            Dataset { inputs: Matrix::new(n, f, data)?, targets: Targets::Classes(labels) }
        }
        DatasetKind::CharCopy => {
            let mut inputs = Matrix::zeros(n, f);
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                let first = rng.random_range(0..k);
                let second = rng.random_range(0..k);
                inputs.set(i, first, 1.0);
                inputs.set(i, k + second, 1.0);
                labels.push(flip_label(first, k, spec.noise, &mut rng));
            }
            Dataset { inputs, targets: Targets::Classes(labels) }
        }
    })
}

// Orthonormal directions scaled so every pair of centres is `separation`
// apart; with more classes than features, random directions at radius
// `separation / 2` instead.
fn blob_centres<R: Rng + ?Sized>(k: usize, f: usize, separation: f64, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centres: Vec<Vec<f64>> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut c: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        if k <= f {
            for prev in &centres {
                let proj: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum();
                c.iter_mut().zip(prev).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        c.iter_mut().for_each(|x| *x /= norm);
        centres.push(c);
    }
    let radius = if k <= f { separation / std::f64::consts::SQRT_2 } else { separation / 2.0 };
    centres.iter_mut().for_each(|c| c.iter_mut().for_each(|x| *x *= radius));
    centres
}

fn flip_label<R: Rng + ?Sized>(class: usize, classes: usize, p: f64, rng: &mut R) -> usize {
    if p > 0.0 && rng.random::<f64>() < p {
        (class + rng.random_range(1..classes)) % classes
    } else {
        class
    }
}

/// `make_dataset` split into batches in storage order.
pub fn make_batches(spec: &DatasetSpec, batch_size: usize) -> Result<Vec<Batch>> {
    Ok(make_dataset(spec)?.batches(batch_size))
}

pub const CACHE_MAGIC: &[u8; 4] = b"NFDS";
pub const CACHE_VERSION: u32 = 1;

pub fn to_bytes(spec: &DatasetSpec, data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&spec.hash());
    out.extend_from_slice(&(data.inputs.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(data.inputs.cols() as u64).to_le_bytes());
    let (kind, width, payload): (u8, usize, Vec<f64>) = match &data.targets {
        Targets::Classes(c) => (0, 1, c.iter().map(|&x| x as f64).collect()),
        Targets::Values(v) => (1, v.cols(), v.as_slice().to_vec()),
    };
    out.push(kind);
    out.extend_from_slice(&(width as u64).to_le_bytes());
    for x in data.inputs.as_slice().iter().chain(&payload) {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn from_bytes(spec: &DatasetSpec, bytes: &[u8]) -> Result<Dataset> {
    let corrupt = |what: &str| Error::Io(format!("dataset cache: {what}"));
    let mut cur = bytes;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cur.len() < n {
            return Err(corrupt("truncated"));
        }
        let (head, tail) = cur.split_at(n);
        cur = tail;
        Ok(head)
    };
    if take(4)? != CACHE_MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(corrupt(&format!("unsupported version {version}")));
    }
    if take(8)? != spec.hash() {
        return Err(corrupt("spec hash mismatch"));
    }
    let mut read_u64 = || -> Result<usize> { Ok(u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize) };
    let rows = read_u64()?;
    let cols = read_u64()?;
    let kind = take(1)?[0];
    let width = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
    let mut floats = |count: usize| -> Result<Vec<f64>> {
        let raw = take(count.checked_mul(8).ok_or_else(|| corrupt("size overflow"))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let inputs = Matrix::new(rows, cols, floats(rows * cols)?)?;
    let targets = match kind {
        0 => Targets::Classes(floats(rows)?.into_iter().map(|x| x as usize).collect()),
        1 => Targets::Values(Matrix::new(rows, width, floats(rows * width)?)?),
        _ => return Err(corrupt("unknown target kind")),
    };
    Ok(Dataset { inputs, targets })
}

pub fn write_cache(path: &Path, spec: &DatasetSpec, data: &Dataset) -> Result<()> {
    std::fs::write(path, to_bytes(spec, data))?;
    Ok(())
}

pub fn read_cache(path: &Path, spec: &DatasetSpec) -> Result<Dataset> {
    from_bytes(spec, &std::fs::read(path)?)
}
