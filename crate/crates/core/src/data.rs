//! IDX datasets, mini-batching, truncation and a synthetic stand-in dataset.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Images scaled to `[0, 1]` with one integer label per image.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `count x height x width`.
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, images: Tensor, labels: Vec<usize>) -> Result<Self> {
        if images.shape().len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "images must be count x height x width, got {:?}",
                images.shape()
            )));
        }
        if images.rows() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            name: name.into(),
            images,
            labels,
        })
    }

    /// Loads an image file and a label file in IDX format.
    pub fn from_idx_files(name: &str, images: &Path, labels: &Path) -> Result<Self> {
        let images = read_idx(images)?.into_images()?;
        let labels = read_idx(labels)?.into_labels()?;
        Self::new(name, images, labels.into_iter().map(usize::from).collect())
    }

    /// Loads an unlabeled IDX image file; every label is set to 0.
    pub fn from_idx_images(name: &str, images: &Path) -> Result<Self> {
        let images = read_idx(images)?.into_images()?;
        let n = images.rows();
        Self::new(name, images, vec![0; n])
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn side(&self) -> (usize, usize) {
        (self.images.shape()[1], self.images.shape()[2])
    }

    pub fn classes(&self) -> usize {
        self.labels.iter().max().map_or(0, |m| m + 1)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            images: self.images.gather_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Splits into the first `k` examples and the rest.
    pub fn split_at(&self, k: usize) -> (Dataset, Dataset) {
        let head: Vec<usize> = (0..k.min(self.len())).collect();
        let tail: Vec<usize> = (k.min(self.len())..self.len()).collect();
        (self.subset(&head), self.subset(&tail))
    }

    pub fn label_histogram(&self, classes: usize) -> Vec<usize> {
        let mut hist = vec![0; classes.max(self.classes())];
        for &l in &self.labels {
            hist[l] += 1;
        }
        hist
    }
}

/// Parsed contents of an IDX file.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    Images(Tensor),
    Labels(Vec<u8>),
}

impl IdxData {
    pub fn into_images(self) -> Result<Tensor> {
        match self {
            IdxData::Images(t) => Ok(t),
            IdxData::Labels(_) => Err(Error::Idx {
                offset: 0,
                message: "expected an image file, found labels".into(),
            }),
        }
    }

    pub fn into_labels(self) -> Result<Vec<u8>> {
        match self {
            IdxData::Labels(l) => Ok(l),
            IdxData::Images(_) => Err(Error::Idx {
                offset: 0,
                message: "expected a label file, found images".into(),
            }),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(Error::Idx {
            offset,
            message: format!("truncated header: need 4 bytes, have {}", bytes.len().saturating_sub(offset)),
        })
}

/// Parses an IDX image (magic 2051) or label (magic 2049) file. Pixels are divided by 255.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = read_u32(bytes, 0)?;
    let ndims = match magic {
        IDX_IMAGES_MAGIC => 3,
        IDX_LABELS_MAGIC => 1,
        other => {
            return Err(Error::Idx {
                offset: 0,
                message: format!("unknown magic 0x{other:08x}"),
            })
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(read_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or(Error::Idx {
            offset: 4,
            message: format!("dimensions {dims:?} overflow"),
        })?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::Idx {
            offset: bytes.len(),
            message: format!("truncated payload: need {count} bytes, have {}", payload.len()),
        });
    }
    let payload = &payload[..count];
    if magic == IDX_LABELS_MAGIC {
        return Ok(IdxData::Labels(payload.to_vec()));
    }
    if count == 0 {
        return Err(Error::Idx {
            offset: 4,
            message: "image file with a zero dimension".into(),
        });
    }
    let pixels = payload.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(IdxData::Images(Tensor::new(dims, pixels)?))
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    parse_idx(&std::fs::read(path)?)
}

/// Encodes `count x h x w` images in `[0, 1]` as IDX, rounding pixels to bytes.
pub fn encode_idx_images(images: &Tensor) -> Vec<u8> {
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for &d in images.shape() {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(
        images
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn encode_idx_labels(labels: &[usize]) -> Result<Vec<u8>> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        out.push(u8::try_from(l).map_err(|_| Error::InvalidArgument(format!("label {l} exceeds a byte")))?);
    }
    Ok(out)
}

/// Deterministic subset of exactly `n` examples, kept in original order.
pub fn truncate(dataset: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n > dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot truncate {} examples to {n}",
            dataset.len()
        )));
    }
    if n == dataset.len() {
        return Ok(dataset.clone());
    }
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.shuffle(&mut stream(seed, Purpose::Truncate, 0));
    idx.truncate(n);
    idx.sort_unstable();
    Ok(dataset.subset(&idx))
}

/// Mini-batch layout for one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub seed: u64,
    pub epoch: u64,
}

impl BatchPlan {
    pub fn new(batch_size: usize, seed: u64, epoch: u64) -> Self {
        Self {
            batch_size,
            seed,
            epoch,
        }
    }

    pub fn batches_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size.max(1))
    }
}

/// Shuffled index partition of `0..n` into batches of `plan.batch_size` (last may be short).
pub fn batch_indices(n: usize, plan: &BatchPlan) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut stream(plan.seed, Purpose::Shuffle, plan.epoch));
    idx.chunks(plan.batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Materialised batches for one epoch: `(batch x h x w images, labels)`.
pub fn batches<'a>(
    dataset: &'a Dataset,
    plan: &BatchPlan,
) -> impl Iterator<Item = (Tensor, Vec<usize>)> + 'a {
    batch_indices(dataset.len(), plan).into_iter().map(move |idx| {
        let labels = idx.iter().map(|&i| dataset.labels[i]).collect();
        (dataset.images.gather_rows(&idx), labels)
    })
}

/// Class-conditional blob images.
///
/// Each class owns two Gaussian blobs at positions drawn from `seed`; an example
/// is its class template with jittered blob centres plus clamped pixel noise.
/// Datasets generated with different seeds use different templates.
pub fn synthetic(n: usize, classes: usize, side: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || classes == 0 || side == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dataset needs n, classes and side > 0".into(),
        ));
    }
    let s = side as f64;
    let mut proto_rng = stream(seed, Purpose::Synthetic, u64::MAX);
    let templates: Vec<[(f64, f64); 2]> = (0..classes)
        .map(|_| {
            let mut blob = || {
                (
                    proto_rng.random_range(0.2 * s..0.8 * s),
                    proto_rng.random_range(0.2 * s..0.8 * s),
                )
            };
            [blob(), blob()]
        })
        .collect();
    let width = s / 7.0;
    let jitter = Normal::new(0.0, s / 40.0).expect("valid sigma");
    let pixel_noise = Normal::new(0.0, 0.12).expect("valid sigma");
    let mut rng = stream(seed, Purpose::Synthetic, 0);
    let mut pixels = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let label = rng.random_range(0..classes);
        let centres: Vec<(f64, f64)> = templates[label]
            .iter()
            .map(|&(y, x)| (y + jitter.sample(&mut rng), x + jitter.sample(&mut rng)))
            .collect();
        for py in 0..side {
            for px in 0..side {
                let (fy, fx) = (py as f64 + 0.5, px as f64 + 0.5);
                let ink: f64 = centres
                    .iter()
                    .map(|&(cy, cx)| {
                        let d2 = (fy - cy).powi(2) + (fx - cx).powi(2);
                        (-d2 / (2.0 * width * width)).exp()
                    })
                    .sum();
                let v = 0.8 * ink.min(1.0) + pixel_noise.sample(&mut rng);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
        labels.push(label);
    }
    Dataset::new(
        format!("synthetic-{classes}c-{side}px-s{seed}"),
        Tensor::new(vec![n, side, side], pixels)?,
        labels,
    )
}
