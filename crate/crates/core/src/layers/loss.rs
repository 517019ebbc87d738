use crate::error::{Error, Result};
use crate::linalg::{Real, Tensor2D};

/// Mean squared error of one prediction, `(1/d) sum (p - t)^2`, and its
/// gradient `(2/d)(p - t)`.
pub fn mse_loss<T: Real>(pred: &[T], target: &[T]) -> Result<(T, Vec<T>)> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape(
            "mse_loss",
            format!("prediction length {} vs target length {}", pred.len(), target.len()),
        ));
    }
    let d = T::from_f64(pred.len() as f64);
    let two = T::from_f64(2.0);
    let mut loss = T::zero();
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let e = p - t;
            loss = loss + e * e;
            two * e / d
        })
        .collect();
    Ok((loss / d, grad))
}

/// Batch MSE: per-sample losses averaged over the batch. The gradient is of
/// that average, so it carries the `1/batch` factor.
pub fn mse_loss_batch<T: Real>(pred: &Tensor2D<T>, target: &Tensor2D<T>) -> Result<(f64, Tensor2D<T>)> {
    pred.check_same_shape("mse_loss", target)?;
    let n = pred.len() as f64;
    let scale = T::from_f64(2.0 / n);
    let mut loss = 0.0f64;
    let mut grad = pred.clone();
    for (g, &t) in grad.as_mut_slice().iter_mut().zip(target.as_slice()) {
        let e = *g - t;
        loss += e.as_f64() * e.as_f64();
        *g = scale * e;
    }
    Ok((loss / n, grad))
}
