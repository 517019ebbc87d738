//! Sum-pooling over contiguous groups and l2 normalization.

use crate::error::{Error, Result};
use crate::linalg::{Real, Tensor2D};

/// Guard on the norm below which l2 normalization divides by the guard.
pub const L2_NORM_EPS: f64 = 1e-12;

fn check_group(len: usize, group: usize) -> Result<()> {
    if group == 0 || !len.is_multiple_of(group) {
        return Err(Error::shape(
            "sumpool",
            format!("length {len} is not divisible into groups of {group}"),
        ));
    }
    Ok(())
}

/// Sums groups `[g*k, g*k + g)` of each row.
pub fn sumpool_forward_batch<T: Real>(h: &Tensor2D<T>, group: usize) -> Result<Tensor2D<T>> {
    check_group(h.cols(), group)?;
    let out_cols = h.cols() / group;
    let mut out = Tensor2D::zeros(h.rows(), out_cols);
    for r in 0..h.rows() {
        for (o, chunk) in out.row_mut(r).iter_mut().zip(h.row(r).chunks_exact(group)) {
            *o = chunk.iter().copied().sum();
        }
    }
    Ok(out)
}

/// Broadcasts each pooled gradient to every member of its group.
pub fn sumpool_backward_batch<T: Real>(grad_out: &Tensor2D<T>, group: usize) -> Result<Tensor2D<T>> {
    if group == 0 {
        return Err(Error::shape("sumpool_backward", "group size 0"));
    }
    let mut out = Tensor2D::zeros(grad_out.rows(), grad_out.cols() * group);
    for r in 0..grad_out.rows() {
        for (chunk, &g) in out.row_mut(r).chunks_exact_mut(group).zip(grad_out.row(r)) {
            chunk.fill(g);
        }
    }
    Ok(out)
}

pub fn sumpool_forward<T: Real>(h: &[T], group: usize) -> Result<Vec<T>> {
    Ok(sumpool_forward_batch(&Tensor2D::row_vector(h), group)?.into_vec())
}

pub fn sumpool_backward<T: Real>(grad_out: &[T], group: usize) -> Result<Vec<T>> {
    Ok(sumpool_backward_batch(&Tensor2D::row_vector(grad_out), group)?.into_vec())
}

/// Row-wise `h / max(||h||, eps)`. Also returns the unguarded norm per row.
pub fn l2norm_forward_batch<T: Real>(h: &Tensor2D<T>) -> (Tensor2D<T>, Vec<T>) {
    let eps = T::from_f64(L2_NORM_EPS);
    let mut out = h.clone();
    let mut norms = Vec::with_capacity(h.rows());
    for r in 0..h.rows() {
        let row = out.row_mut(r);
        let n = row.iter().map(|&x| x * x).sum::<T>().sqrt();
        let d = n.max(eps);
        for x in row.iter_mut() {
            *x = *x / d;
        }
        norms.push(n);
    }
    (out, norms)
}

/// Gradient of l2 normalization from its output `y` and input norms. Above the
/// guard: `(g - y (y . g)) / ||h||`; at or below it the map is `h / eps`.
pub fn l2norm_backward_batch<T: Real>(y: &Tensor2D<T>, norms: &[T], grad_out: &Tensor2D<T>) -> Result<Tensor2D<T>> {
    y.check_same_shape("l2norm_backward", grad_out)?;
    let eps = T::from_f64(L2_NORM_EPS);
    let mut out = Tensor2D::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row(r), grad_out.row(r));
        let guarded = norms[r] <= eps;
        let n = norms[r].max(eps);
        let dot: T = if guarded {
            T::zero()
        } else {
            yr.iter().zip(gr).map(|(&a, &b)| a * b).sum()
        };
        for ((o, &yk), &gk) in out.row_mut(r).iter_mut().zip(yr).zip(gr) {
            *o = (gk - yk * dot) / n;
        }
    }
    Ok(out)
}

pub fn l2norm_forward<T: Real>(h: &[T]) -> Vec<T> {
    l2norm_forward_batch(&Tensor2D::row_vector(h)).0.into_vec()
}

pub fn l2norm_backward<T: Real>(h: &[T], grad_out: &[T]) -> Result<Vec<T>> {
    let (y, norms) = l2norm_forward_batch(&Tensor2D::row_vector(h));
    Ok(l2norm_backward_batch(&y, &norms, &Tensor2D::row_vector(grad_out))?.into_vec())
}
