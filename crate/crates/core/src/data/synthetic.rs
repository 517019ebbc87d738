//! Procedural stand-in for CIFAR-10 when the real batches are unavailable.
//!
//! Images mix multi-octave value noise with a few hard edges and a disc, so
//! they carry texture at every scale the 11x11 patches see. Each image is
//! drawn from its own RNG substream.

use std::fs;
use std::path::{Path, PathBuf};

use super::allocate_counts;
use super::cifar::{encode_cifar, RgbImage, CIFAR_PIXELS, CIFAR_SIDE, CIFAR_TEST_FILES, CIFAR_TRAIN_FILES};
use crate::error::{Error, Result};
use crate::linalg::Rng;

const OCTAVES: [(usize, f64); 4] = [(16, 1.0), (8, 0.75), (4, 0.55), (2, 0.4)];

fn value_noise(rng: &mut Rng, spacing: usize) -> Vec<f64> {
    let g = CIFAR_SIDE / spacing + 2;
    let grid: Vec<f64> = (0..g * g).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let (ox, oy) = (rng.unit(), rng.unit());
    let mut out = Vec::with_capacity(CIFAR_PIXELS);
    for r in 0..CIFAR_SIDE {
        for c in 0..CIFAR_SIDE {
            let fy = r as f64 / spacing as f64 + oy;
            let fx = c as f64 / spacing as f64 + ox;
            let (y0, x0) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
            // smoothstep weights
            let (sy, sx) = (ty * ty * (3.0 - 2.0 * ty), tx * tx * (3.0 - 2.0 * tx));
            let at = |y: usize, x: usize| grid[y.min(g - 1) * g + x.min(g - 1)];
            let top = at(y0, x0) * (1.0 - sx) + at(y0, x0 + 1) * sx;
            let bot = at(y0 + 1, x0) * (1.0 - sx) + at(y0 + 1, x0 + 1) * sx;
            out.push(top * (1.0 - sy) + bot * sy);
        }
    }
    out
}

fn luminance(rng: &mut Rng) -> Vec<f64> {
    let mut img = vec![0.0; CIFAR_PIXELS];
    for (spacing, amp) in OCTAVES {
        for (p, n) in img.iter_mut().zip(value_noise(rng, spacing)) {
            *p += amp * n;
        }
    }
    let edges = 1 + rng.below(3) as usize;
    for _ in 0..edges {
        let theta = rng.uniform(0.0, std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let offset = rng.uniform(-12.0, 12.0);
        let step = rng.uniform(-1.5, 1.5);
        for r in 0..CIFAR_SIDE {
            for col in 0..CIFAR_SIDE {
                let d = c * (col as f64 - 15.5) + s * (r as f64 - 15.5) - offset;
                if d > 0.0 {
                    img[r * CIFAR_SIDE + col] += step;
                }
            }
        }
    }
    let (cx, cy) = (rng.uniform(0.0, 32.0), rng.uniform(0.0, 32.0));
    let radius = rng.uniform(2.0, 8.0);
    let level = rng.uniform(-1.5, 1.5);
    for r in 0..CIFAR_SIDE {
        for col in 0..CIFAR_SIDE {
            if (col as f64 - cx).hypot(r as f64 - cy) < radius {
                img[r * CIFAR_SIDE + col] += level;
            }
        }
    }
    img
}

/// `count` pseudo-natural RGB images, reproducible from `seed`.
pub fn synthetic_images(count: usize, seed: u64) -> Vec<RgbImage> {
    (0..count)
        .map(|i| {
            let mut rng = Rng::substream(seed, i as u64);
            let lum = luminance(&mut rng);
            let mean = rng.uniform(70.0, 185.0);
            let contrast = rng.uniform(18.0, 45.0);
            let tint = [
                rng.uniform(-20.0, 20.0),
                rng.uniform(-20.0, 20.0),
                rng.uniform(-20.0, 20.0),
            ];
            let mut planes = Vec::with_capacity(3 * CIFAR_PIXELS);
            for t in tint {
                planes.extend(
                    lum.iter()
                        .map(|&v| (mean + t + contrast * v).round().clamp(0.0, 255.0) as u8),
                );
            }
            RgbImage { planes }
        })
        .collect()
}

/// Writes `train + test` synthetic images as CIFAR-10 binary batches in
/// `dir`, laid out like the real distribution. Returns the written paths.
pub fn write_synthetic_cifar(dir: impl AsRef<Path>, train: usize, test: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = synthetic_images(train + test, seed);
    let mut counts = allocate_counts(train, CIFAR_TRAIN_FILES.len());
    counts.push(test);
    let mut start = 0;
    let mut paths = Vec::new();
    for (name, n) in CIFAR_TRAIN_FILES.iter().chain(&CIFAR_TEST_FILES).zip(counts) {
        let path = dir.join(name);
        fs::write(&path, encode_cifar(&images[start..start + n])).map_err(|e| Error::io(&path, e))?;
        start += n;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::cifar::to_gray;

    #[test]
    fn deterministic_and_distinct() {
        let a = synthetic_images(3, 7);
        assert_eq!(a, synthetic_images(3, 7));
        assert_ne!(a[0], a[1]);
        assert_ne!(a[0], synthetic_images(1, 8)[0]);
    }

    #[test]
    fn images_have_texture() {
        for img in synthetic_images(20, 1) {
            let g = to_gray(&img);
            let mean = g.data.iter().sum::<f64>() / g.data.len() as f64;
            let var = g.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.data.len() as f64;
            assert!(var.sqrt() > 5.0, "flat image, std {}", var.sqrt());
        }
    }

    #[test]
    fn written_batches_load_back() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_cifar(dir.path(), 7, 2, 4).unwrap();
        let train = crate::data::cifar::load_cifar_split(dir.path(), &CIFAR_TRAIN_FILES).unwrap();
        let test = crate::data::cifar::load_cifar_split(dir.path(), &CIFAR_TEST_FILES).unwrap();
        let all = synthetic_images(9, 4);
        assert_eq!(train, all[..7]);
        assert_eq!(test, all[7..]);
    }
}
