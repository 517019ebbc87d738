//! Inverse warping, cropping and pixel normalization.

use super::cifar::GrayImage;
use super::homography::Homography;
use crate::error::{Error, Result};

pub const PATCH_SIDE: usize = 11;
pub const PATCH_DIM: usize = PATCH_SIDE * PATCH_SIDE;

/// Bilinear sample at fractional `(row, col)`, clamping to the border.
fn sample_bilinear(img: &GrayImage, row: f64, col: f64) -> f64 {
    let clamp = |v: f64, max: usize| {
        if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, (max - 1) as f64)
        }
    };
    let r = clamp(row, img.height);
    let c = clamp(col, img.width);
    let r0 = r.floor() as usize;
    let c0 = c.floor() as usize;
    let r1 = (r0 + 1).min(img.height - 1);
    let c1 = (c0 + 1).min(img.width - 1);
    let fr = r - r0 as f64;
    let fc = c - c0 as f64;
    let top = img.get(r0, c0) * (1.0 - fc) + img.get(r0, c1) * fc;
    let bottom = img.get(r1, c0) * (1.0 - fc) + img.get(r1, c1) * fc;
    top * (1.0 - fr) + bottom * fr
}

/// Warps `img` by `h` about the image centre: output pixel `p'` takes the
/// source value at `h^-1 p'`, with coordinates `x = col - (W-1)/2`,
/// `y = row - (H-1)/2`.
pub fn warp_image(img: &GrayImage, h: &Homography) -> Result<GrayImage> {
    let inv = h.inverse()?.0;
    let cx = (img.width as f64 - 1.0) / 2.0;
    let cy = (img.height as f64 - 1.0) / 2.0;
    Ok(GrayImage::from_fn(img.width, img.height, |r, c| {
        let x = c as f64 - cx;
        let y = r as f64 - cy;
        let w = inv[(2, 0)] * x + inv[(2, 1)] * y + inv[(2, 2)];
        let sx = (inv[(0, 0)] * x + inv[(0, 1)] * y + inv[(0, 2)]) / w;
        let sy = (inv[(1, 0)] * x + inv[(1, 1)] * y + inv[(1, 2)]) / w;
        sample_bilinear(img, sy + cy, sx + cx)
    }))
}

/// The `size x size` block whose top-left pixel is `(top, left)`.
pub fn crop_at(img: &GrayImage, top: usize, left: usize, size: usize) -> Result<GrayImage> {
    if top + size > img.height || left + size > img.width {
        return Err(Error::InvalidArgument(format!(
            "{size}x{size} crop at ({top}, {left}) exceeds {}x{} image",
            img.width, img.height
        )));
    }
    Ok(GrayImage::from_fn(size, size, |r, c| img.get(top + r, left + c)))
}

/// Offset of a centred crop: `floor((side - size) / 2)`.
pub fn center_offset(side: usize, size: usize) -> usize {
    (side - size) / 2
}

pub fn center_crop(img: &GrayImage, size: usize) -> Result<GrayImage> {
    if size > img.width || size > img.height {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} exceeds {}x{} image",
            img.width, img.height
        )));
    }
    crop_at(
        img,
        center_offset(img.height, size),
        center_offset(img.width, size),
        size,
    )
}

/// Maps gray levels in `[0, 255]` to `[-0.5, 0.5]`.
pub fn normalize_pixels(img: &GrayImage) -> Vec<f32> {
    img.data
        .iter()
        .map(|&v| ((v / 255.0 - 0.5).clamp(-0.5, 0.5)) as f32)
        .collect()
}
