//! Fully connected layers and the parametric ReLU.

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, Real, Tensor2D};

/// Initial PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// `y = x W^T + bias` for each row `x`. `w` is out x in, `bias` is 1 x out.
pub fn linear_forward_batch<T: Real>(w: &Tensor2D<T>, bias: &Tensor2D<T>, x: &Tensor2D<T>) -> Result<Tensor2D<T>> {
    if x.cols() != w.cols() || bias.shape() != (1, w.rows()) {
        return Err(Error::shape(
            "linear_forward",
            format!(
                "weight {}x{}, bias {}x{}, input {}x{}",
                w.rows(),
                w.cols(),
                bias.rows(),
                bias.cols(),
                x.rows(),
                x.cols()
            ),
        ));
    }
    let mut y = Tensor2D::zeros(x.rows(), w.rows());
    for r in 0..y.rows() {
        y.row_mut(r).copy_from_slice(bias.as_slice());
    }
    gemm_into(T::one(), x, false, w, true, T::one(), &mut y);
    Ok(y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub grad_in: Option<Tensor2D<T>>,
    pub grad_w: Tensor2D<T>,
    pub grad_bias: Tensor2D<T>,
}

pub fn linear_backward_batch<T: Real>(
    w: &Tensor2D<T>,
    x: &Tensor2D<T>,
    grad_out: &Tensor2D<T>,
    input_grads: bool,
) -> Result<LinearGrads<T>> {
    if grad_out.shape() != (x.rows(), w.rows()) || x.cols() != w.cols() {
        return Err(Error::shape(
            "linear_backward",
            format!(
                "weight {}x{}, input {}x{}, gradOut {}x{}",
                w.rows(),
                w.cols(),
                x.rows(),
                x.cols(),
                grad_out.rows(),
                grad_out.cols()
            ),
        ));
    }
    let mut grad_w = Tensor2D::zeros(w.rows(), w.cols());
    gemm_into(T::one(), grad_out, true, x, false, T::zero(), &mut grad_w);
    let grad_bias = Tensor2D::row_vector(&grad_out.col_sums());
    let grad_in = input_grads.then(|| {
        let mut g = Tensor2D::zeros(x.rows(), x.cols());
        gemm_into(T::one(), grad_out, false, w, false, T::zero(), &mut g);
        g
    });
    Ok(LinearGrads {
        grad_in,
        grad_w,
        grad_bias,
    })
}

pub fn linear_forward<T: Real>(w: &Tensor2D<T>, bias: &Tensor2D<T>, x: &[T]) -> Result<Vec<T>> {
    Ok(linear_forward_batch(w, bias, &Tensor2D::row_vector(x))?.into_vec())
}

pub fn linear_backward<T: Real>(w: &Tensor2D<T>, x: &[T], grad_out: &[T]) -> Result<LinearGrads<T>> {
    linear_backward_batch(w, &Tensor2D::row_vector(x), &Tensor2D::row_vector(grad_out), true)
}

/// One slope shared by every element of the layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PReluParams<T> {
    pub slope: T,
}

impl<T: Real> Default for PReluParams<T> {
    fn default() -> Self {
        PReluParams {
            slope: T::from_f64(PRELU_INIT_SLOPE),
        }
    }
}

pub fn prelu_forward_batch<T: Real>(slope: T, x: &Tensor2D<T>) -> Tensor2D<T> {
    x.map(|v| if v > T::zero() { v } else { slope * v })
}

/// Returns `(dE/dx, dE/dslope)`.
pub fn prelu_backward_batch<T: Real>(slope: T, x: &Tensor2D<T>, grad_out: &Tensor2D<T>) -> Result<(Tensor2D<T>, T)> {
    x.check_same_shape("prelu_backward", grad_out)?;
    let mut grad_in = grad_out.clone();
    let mut grad_slope = T::zero();
    for (g, &v) in grad_in.as_mut_slice().iter_mut().zip(x.as_slice()) {
        if !(v > T::zero()) {
            grad_slope = grad_slope + *g * v;
            *g = *g * slope;
        }
    }
    Ok((grad_in, grad_slope))
}

pub fn prelu_forward<T: Real>(params: PReluParams<T>, x: &[T]) -> Vec<T> {
    prelu_forward_batch(params.slope, &Tensor2D::row_vector(x)).into_vec()
}

pub fn prelu_backward<T: Real>(params: PReluParams<T>, x: &[T], grad_out: &[T]) -> Result<(Vec<T>, T)> {
    let (g, s) = prelu_backward_batch(params.slope, &Tensor2D::row_vector(x), &Tensor2D::row_vector(grad_out))?;
    Ok((g.into_vec(), s))
}
