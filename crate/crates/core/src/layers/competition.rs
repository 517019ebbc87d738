//! Competition among relation units: softmin (trainable) and winner-take-all
//! (conceptual, used by the toy demonstration only).

use crate::error::{Error, Result};
use crate::linalg::{Real, Tensor2D};

/// Row-wise `exp(-h_k) / sum_i exp(-h_i)`. Each row is shifted by its
/// minimum before exponentiation.
pub fn softmin_forward_batch<T: Real>(h: &Tensor2D<T>) -> Tensor2D<T> {
    let mut out = h.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let min = row.iter().copied().fold(T::infinity(), T::min);
        let mut total = T::zero();
        for x in row.iter_mut() {
            *x = (min - *x).exp();
            total = total + *x;
        }
        for x in row.iter_mut() {
            *x = *x / total;
        }
    }
    out
}

/// Gradient through softmin given its output `s`:
/// `dE/dh_k = -s_k (g_k - sum_i g_i s_i)`.
pub fn softmin_backward_batch<T: Real>(s: &Tensor2D<T>, grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
    s.check_same_shape("softmin_backward", grad_out)?;
    let mut out = Tensor2D::zeros(s.rows(), s.cols());
    for r in 0..s.rows() {
        let (sr, gr) = (s.row(r), grad_out.row(r));
        let dot: T = sr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((o, &sk), &gk) in out.row_mut(r).iter_mut().zip(sr).zip(gr) {
            *o = -sk * (gk - dot);
        }
    }
    Ok(out)
}

pub fn softmin_forward<T: Real>(h: &[T]) -> Vec<T> {
    softmin_forward_batch(&Tensor2D::row_vector(h)).into_vec()
}

pub fn softmin_backward<T: Real>(s: &[T], grad_out: &[T]) -> Result<Vec<T>> {
    Ok(softmin_backward_batch(&Tensor2D::row_vector(s), &Tensor2D::row_vector(grad_out))?.into_vec())
}

/// One-hot at the minimum; ties go to the lowest index.
pub fn wta<T: Real>(h: &[T]) -> Result<Vec<T>> {
    if h.is_empty() {
        return Err(Error::InvalidArgument("winner-take-all on an empty vector".into()));
    }
    let mut best = 0;
    for (i, &v) in h.iter().enumerate().skip(1) {
        if v < h[best] {
            best = i;
        }
    }
    let mut out = vec![T::zero(); h.len()];
    out[best] = T::one();
    Ok(out)
}
