//! Patch pairs cut from two real photographs related by a known homography.

use std::fs;
use std::path::Path;

use super::cifar::GrayImage;
use super::homography::{projective_params, Homography};
use super::warp::{crop_at, normalize_pixels, PATCH_SIDE};
use crate::error::{Error, Result};
use crate::linalg::Rng;

/// Largest allowed gap between a supplied `p'` and `Hp`.
pub const POINT_TOLERANCE: f64 = 1e-6;

/// A sample together with the exact patch-level homography.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchPair {
    pub x: Vec<f32>,
    pub y: Vec<f32>,
    /// Projective parameters read back from `h`.
    pub z: Vec<f32>,
    pub h: Homography,
    /// Patch centres in the source and target images, `(x, y)` = `(col, row)`.
    pub p: (usize, usize),
    pub p_prime: (usize, usize),
}

fn pgm_error(path: &Path, detail: impl Into<String>) -> Error {
    Error::format("PGM image", path, detail)
}

/// Parses a binary (P5) PGM with maxval 255.
pub fn parse_pgm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pgm_error(path, "truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(pgm_error(path, "expected binary P5 magic"));
    }
    let mut num = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| pgm_error(path, format!("bad {what} '{t}'")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(pgm_error(path, format!("maxval {maxval}, expected 255")));
    }
    if width == 0 || height == 0 {
        return Err(pgm_error(path, "empty image"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let end = start + width * height;
    if bytes.len() < end {
        return Err(pgm_error(
            path,
            format!(
                "raster has {} bytes, expected {}",
                bytes.len().saturating_sub(start),
                width * height
            ),
        ));
    }
    GrayImage::new(width, height, bytes[start..end].iter().map(|&b| b as f64).collect())
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes, path)
}

/// Encodes as P5, rounding and clamping to `[0, 255]`.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    out
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// Nine whitespace-separated reals, row-major.
pub fn parse_homography_text(text: &str, path: &Path) -> Result<Homography> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format("homography file", path, format!("bad number '{t}'")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != 9 {
        return Err(Error::format(
            "homography file",
            path,
            format!("expected 9 values, found {}", vals.len()),
        ));
    }
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::format("homography file", path, "non-finite entry"));
    }
    Ok(Homography::from_row_major(vals.try_into().unwrap()))
}

pub fn read_homography(path: impl AsRef<Path>) -> Result<Homography> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_homography_text(&text, path)
}

/// `H' = T' H T^-1`, where `T` moves `p` and `T'` moves `p'` to the origin.
/// `p'` must be the image of `p` under `h`.
pub fn patch_homography(h: &Homography, p: (f64, f64), p_prime: (f64, f64)) -> Result<Homography> {
    let (qx, qy) = h.apply(p.0, p.1)?;
    let gap = (qx - p_prime.0).hypot(qy - p_prime.1);
    if !(gap <= POINT_TOLERANCE) {
        return Err(Error::InvalidArgument(format!(
            "p' = ({}, {}) is {gap:e} away from Hp = ({qx}, {qy})",
            p_prime.0, p_prime.1
        )));
    }
    let t_inv = Homography::translation(p.0, p.1);
    let t_prime = Homography::translation(-p_prime.0, -p_prime.1);
    Ok(Homography(t_prime.0 * h.0 * t_inv.0))
}

/// Splits `total` as evenly as possible over `n` parts, earlier parts taking
/// the remainder.
pub fn allocate_counts(total: usize, n: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

/// Where the patch around pixel `p` of image A lands in image B, if both
/// patches fit. Returns the exact and rounded target centres.
fn target_centre(
    h: &Homography,
    a: &GrayImage,
    b: &GrayImage,
    col: usize,
    row: usize,
) -> Option<((f64, f64), (usize, usize))> {
    let half = PATCH_SIDE / 2;
    if col < half || row < half || col + half >= a.width || row + half >= a.height {
        return None;
    }
    let (x, y) = h.apply(col as f64, row as f64).ok()?;
    if !x.is_finite() || !y.is_finite() {
        return None;
    }
    let (cx, cy) = (x.round(), y.round());
    let lo = half as f64;
    if cx < lo || cy < lo || cx + lo >= b.width as f64 || cy + lo >= b.height as f64 {
        return None;
    }
    Some(((x, y), (cx as usize, cy as usize)))
}

/// Samples `count` patch pairs uniformly over the valid centres of image A.
pub fn sample_patch_pairs(
    a: &GrayImage,
    b: &GrayImage,
    h: &Homography,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    let valid: Vec<(usize, usize)> = (0..a.height)
        .flat_map(|r| (0..a.width).map(move |c| (c, r)))
        .filter(|&(c, r)| target_centre(h, a, b, c, r).is_some())
        .collect();
    if valid.is_empty() {
        return Err(Error::InvalidArgument(
            "no point has both 11x11 patches inside their images".into(),
        ));
    }
    let half = PATCH_SIDE / 2;
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (col, row) = valid[rng.below(valid.len() as u64) as usize];
        let (exact, (tc, tr)) = target_centre(h, a, b, col, row).expect("precomputed valid point");
        let exact_h = patch_homography(h, (col as f64, row as f64), exact)?;
        // re-centre on the integer target pixel
        let hp = Homography::translation(exact.0 - tc as f64, exact.1 - tr as f64).0 * exact_h.0;
        let hp = Homography(hp / hp[(2, 2)]);
        let (z, _) = projective_params(&hp)?;
        out.push(PatchPair {
            x: normalize_pixels(&crop_at(a, row - half, col - half, PATCH_SIDE)?),
            y: normalize_pixels(&crop_at(b, tr - half, tc - half, PATCH_SIDE)?),
            z: z.iter().map(|&v| v as f32).collect(),
            h: hp,
            p: (col, row),
            p_prime: (tc, tr),
        });
    }
    Ok(out)
}

/// Reads two PGM images and a homography file, then samples `count` pairs.
pub fn ingest_patch_pairs(
    image_a: impl AsRef<Path>,
    image_b: impl AsRef<Path>,
    h_file: impl AsRef<Path>,
    count: usize,
    seed: u64,
) -> Result<Vec<PatchPair>> {
    let a = read_pgm(image_a)?;
    let b = read_pgm(image_b)?;
    let h = read_homography(h_file)?;
    h.inverse()?;
    sample_patch_pairs(&a, &b, &h, count, seed)
}
