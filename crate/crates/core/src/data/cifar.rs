//! CIFAR-10 binary batches and grayscale images.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE;
pub const CIFAR_RECORD: usize = 1 + 3 * CIFAR_PIXELS;

pub const CIFAR_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR_TEST_FILES: [&str; 1] = ["test_batch.bin"];

/// One CIFAR image: 1024 red, then 1024 green, then 1024 blue bytes, each
/// plane row-major. The label is dropped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub planes: Vec<u8>,
}

impl RgbImage {
    pub fn red(&self) -> &[u8] {
        &self.planes[..CIFAR_PIXELS]
    }

    pub fn green(&self) -> &[u8] {
        &self.planes[CIFAR_PIXELS..2 * CIFAR_PIXELS]
    }

    pub fn blue(&self) -> &[u8] {
        &self.planes[2 * CIFAR_PIXELS..]
    }
}

/// A real-valued single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::shape(
                "GrayImage::new",
                format!(
                    "{width}x{height} image needs {} pixels, got {}",
                    width * height,
                    data.len()
                ),
            ));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: f64) -> Self {
        GrayImage {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        GrayImage { width, height, data }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }
}

/// Parses CIFAR-10 records from an in-memory batch.
pub fn parse_cifar(bytes: &[u8], path: &Path) -> Result<Vec<RgbImage>> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::format(
            "CIFAR-10 batch",
            path,
            format!(
                "size {} is not a multiple of the {CIFAR_RECORD}-byte record length",
                bytes.len()
            ),
        ));
    }
    Ok(bytes
        .chunks_exact(CIFAR_RECORD)
        .map(|rec| RgbImage {
            planes: rec[1..].to_vec(),
        })
        .collect())
}

pub fn load_cifar(path: impl AsRef<Path>) -> Result<Vec<RgbImage>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar(&bytes, path)
}

/// Loads and concatenates the named batch files from `dir`.
pub fn load_cifar_split(dir: impl AsRef<Path>, files: &[&str]) -> Result<Vec<RgbImage>> {
    let mut out = Vec::new();
    for f in files {
        out.extend(load_cifar(dir.as_ref().join(f))?);
    }
    Ok(out)
}

/// Luma with weights 0.299, 0.587, 0.114, kept real-valued.
pub fn to_gray(img: &RgbImage) -> GrayImage {
    let data = img
        .red()
        .iter()
        .zip(img.green())
        .zip(img.blue())
        .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
        .collect();
    GrayImage {
        width: CIFAR_SIDE,
        height: CIFAR_SIDE,
        data,
    }
}

/// Serializes images as a CIFAR-10 batch with label 0.
pub fn encode_cifar(images: &[RgbImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * CIFAR_RECORD);
    for img in images {
        out.push(0);
        out.extend_from_slice(&img.planes);
    }
    out
}
