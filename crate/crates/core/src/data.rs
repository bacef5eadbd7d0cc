//! Labeled image datasets: the CIFAR-10 binary format and a synthetic stand-in.
//!
//! A CIFAR-10 record is one label byte followed by 3072 pixel bytes laid out
//! as three 1024-byte planes (R, G, B), each a row-major 32×32 grid. Pixels are
//! scaled to `[0,1]` by `/255` with no further normalization.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::image::Image;
use crate::rng::{stream, Stream};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PLANE: usize = SIDE * SIDE;
pub const RECORD_LEN: usize = 1 + CHANNELS * PLANE;
pub const CLASSES: usize = 10;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub images: Vec<Image>,
    pub labels: Vec<u8>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Keeps the samples at `indices`, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Seeded subsample of `size` samples without replacement, in ascending index order.
    pub fn subsample(&self, size: usize, seed: u64) -> Result<Dataset> {
        Ok(self.select(&subset_indices(self.len(), size, seed)?))
    }

    pub fn extend(&mut self, other: Dataset) {
        self.images.extend(other.images);
        self.labels.extend(other.labels);
    }
}

/// Sorted indices of a seeded sample of `size` out of `n`.
pub fn subset_indices(n: usize, size: usize, seed: u64) -> Result<Vec<usize>> {
    if size > n {
        return Err(config_err(format!("subset of {size} requested from {n} samples")));
    }
    let mut idx = index::sample(&mut stream(seed, Stream::Subset), n, size).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Decodes whole CIFAR-10 records; `origin` names the source in errors.
pub fn parse_cifar10(bytes: &[u8], origin: &Path) -> Result<Dataset> {
    let whole = bytes.len() - bytes.len() % RECORD_LEN;
    if whole != bytes.len() {
        return Err(Error::Truncated {
            path: origin.to_path_buf(),
            offset: whole,
        });
    }
    let mut ds = Dataset::default();
    for (r, rec) in bytes.chunks_exact(RECORD_LEN).enumerate() {
        let label = rec[0];
        if usize::from(label) >= CLASSES {
            return Err(Error::Label {
                label,
                offset: r * RECORD_LEN,
            });
        }
        let planes = &rec[1..];
        let image = Image::from_fn(SIDE, SIDE, CHANNELS, |y, x, c| {
            f64::from(planes[c * PLANE + y * SIDE + x]) / 255.0
        });
        ds.images.push(image);
        ds.labels.push(label);
    }
    Ok(ds)
}

/// Encodes 32×32×3 images as CIFAR-10 records, rounding to the nearest byte.
pub fn encode_cifar10(ds: &Dataset) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(ds.len() * RECORD_LEN);
    for (img, &label) in ds.images.iter().zip(&ds.labels) {
        if img.shape() != [SIDE, SIDE, CHANNELS] {
            return Err(Error::Image(format!("expected 32x32x3, got {:?}", img.shape())));
        }
        out.push(label);
        for c in 0..CHANNELS {
            for y in 0..SIDE {
                for x in 0..SIDE {
                    out.push(to_byte(img.get(y, x, c)));
                }
            }
        }
    }
    Ok(out)
}

/// Clamps to `[0,1]` and rounds to the nearest of 256 levels.
#[inline]
pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn load_cifar10_files(paths: &[PathBuf], subset: Option<usize>, seed: u64) -> Result<Dataset> {
    let mut ds = Dataset::default();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| {
            Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
        })?;
        ds.extend(parse_cifar10(&bytes, path)?);
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    match subset {
        Some(n) => ds.subsample(n, seed),
        None => Ok(ds),
    }
}

/// Loads the standard binary distribution directory (`cifar-10-batches-bin`).
pub fn load_cifar10(dir: &Path, split: Split, subset: Option<usize>, seed: u64) -> Result<Dataset> {
    let files: Vec<PathBuf> = match split {
        Split::Train => TRAIN_FILES.iter().map(|f| dir.join(f)).collect(),
        Split::Test => vec![dir.join(TEST_FILE)],
    };
    load_cifar10_files(&files, subset, seed)
}

/// Class-structured 32×32×3 images for environments without the real dataset.
///
/// Each class pairs a base hue with a spatial pattern; samples vary in
/// exposure, contrast, phase and per-pixel noise. Values pass through the
/// CIFAR byte encoding so they sit on the same 1/255 lattice as real data.
pub fn synthetic(n: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, Stream::Synthetic);
    let mut ds = Dataset::default();
    for i in 0..n {
        let label = (i % CLASSES) as u8;
        let k = f64::from(label);
        let hue = k / CLASSES as f64 * std::f64::consts::TAU;
        let base = [
            0.5 + 0.35 * hue.cos(),
            0.5 + 0.35 * (hue + 2.1).cos(),
            0.5 + 0.35 * (hue + 4.2).cos(),
        ];
        let freq = 1.0 + (label % 5) as f64;
        let vertical = label.is_multiple_of(2);
        let exposure = rng.gen_range(0.7..1.1);
        let amp = rng.gen_range(0.15..0.3);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let noise: Vec<f64> = (0..SIDE * SIDE * CHANNELS).map(|_| rng.gen_range(-0.08..0.08)).collect();
        let image = Image::from_fn(SIDE, SIDE, CHANNELS, |y, x, c| {
            let t = if vertical { y } else { x } as f64 / SIDE as f64;
            let wave = (std::f64::consts::TAU * freq * t + phase).sin();
            let v = exposure * (base[c] + amp * wave) + noise[(y * SIDE + x) * CHANNELS + c];
            f64::from(to_byte(v)) / 255.0
        });
        ds.images.push(image);
        ds.labels.push(label);
    }
    ds
}
