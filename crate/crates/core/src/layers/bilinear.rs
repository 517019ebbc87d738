//! Rank-one bilinear units, `h_k = (u_k . a)(v_k . b)`, and plain
//! concatenation. Both are the baselines the CAU is compared against.

use crate::error::{Error, Result};
use crate::layers::cau::{check_factor_inputs, hadamard, RelationGrads};
use crate::linalg::{gemm_into, Real, Tensor2D};

/// Factor matrices of unconstrained sign, K x n each.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearRankOneParams<T> {
    pub u: Tensor2D<T>,
    pub v: Tensor2D<T>,
}

impl<T: Real> BilinearRankOneParams<T> {
    pub fn new(u: Tensor2D<T>, v: Tensor2D<T>) -> Result<Self> {
        u.check_same_shape("BilinearRankOneParams", &v)?;
        Ok(BilinearRankOneParams { u, v })
    }
}

#[derive(Debug, Clone)]
pub struct BilinearCache<T> {
    pub ua: Tensor2D<T>,
    pub vb: Tensor2D<T>,
}

pub fn bilinear_rankone_forward_batch<T: Real>(
    u: &Tensor2D<T>,
    v: &Tensor2D<T>,
    a: &Tensor2D<T>,
    b: &Tensor2D<T>,
) -> Result<(Tensor2D<T>, BilinearCache<T>)> {
    check_factor_inputs("bilinear_forward_rankone", u, v, a, b)?;
    let (batch, k) = (a.rows(), u.rows());
    let mut ua = Tensor2D::zeros(batch, k);
    let mut vb = Tensor2D::zeros(batch, k);
    gemm_into(T::one(), a, false, u, true, T::zero(), &mut ua);
    gemm_into(T::one(), b, false, v, true, T::zero(), &mut vb);
    let h = hadamard(&ua, &vb);
    Ok((h, BilinearCache { ua, vb }))
}

#[allow(clippy::too_many_arguments)]
pub fn bilinear_rankone_backward_batch<T: Real>(
    u: &Tensor2D<T>,
    v: &Tensor2D<T>,
    a: &Tensor2D<T>,
    b: &Tensor2D<T>,
    cache: &BilinearCache<T>,
    grad_out: &Tensor2D<T>,
    input_grads: bool,
) -> Result<RelationGrads<T>> {
    check_factor_inputs("bilinear_backward_rankone", u, v, a, b)?;
    if grad_out.shape() != cache.ua.shape() {
        return Err(Error::shape(
            "bilinear_backward_rankone",
            format!(
                "gradOut is {}x{}, expected {}x{}",
                grad_out.rows(),
                grad_out.cols(),
                cache.ua.rows(),
                cache.ua.cols()
            ),
        ));
    }
    let g_vb = hadamard(grad_out, &cache.vb);
    let g_ua = hadamard(grad_out, &cache.ua);
    let mut grad_u = Tensor2D::zeros(u.rows(), u.cols());
    let mut grad_v = Tensor2D::zeros(v.rows(), v.cols());
    gemm_into(T::one(), &g_vb, true, a, false, T::zero(), &mut grad_u);
    gemm_into(T::one(), &g_ua, true, b, false, T::zero(), &mut grad_v);
    let (grad_a, grad_b) = if input_grads {
        let mut ga = Tensor2D::zeros(a.rows(), a.cols());
        let mut gb = Tensor2D::zeros(b.rows(), b.cols());
        gemm_into(T::one(), &g_vb, false, u, false, T::zero(), &mut ga);
        gemm_into(T::one(), &g_ua, false, v, false, T::zero(), &mut gb);
        (Some(ga), Some(gb))
    } else {
        (None, None)
    };
    Ok(RelationGrads {
        grad_a,
        grad_b,
        grad_u,
        grad_v,
    })
}

pub fn bilinear_forward_rankone<T: Real>(params: &BilinearRankOneParams<T>, a: &[T], b: &[T]) -> Result<Vec<T>> {
    let (h, _) =
        bilinear_rankone_forward_batch(&params.u, &params.v, &Tensor2D::row_vector(a), &Tensor2D::row_vector(b))?;
    Ok(h.into_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearGrads<T> {
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
    pub grad_u: Tensor2D<T>,
    pub grad_v: Tensor2D<T>,
}

pub fn bilinear_backward_rankone<T: Real>(
    params: &BilinearRankOneParams<T>,
    a: &[T],
    b: &[T],
    grad_out: &[T],
) -> Result<BilinearGrads<T>> {
    let (a, b) = (Tensor2D::row_vector(a), Tensor2D::row_vector(b));
    let (_, cache) = bilinear_rankone_forward_batch(&params.u, &params.v, &a, &b)?;
    let g = bilinear_rankone_backward_batch(
        &params.u,
        &params.v,
        &a,
        &b,
        &cache,
        &Tensor2D::row_vector(grad_out),
        true,
    )?;
    Ok(BilinearGrads {
        grad_a: g.grad_a.unwrap().into_vec(),
        grad_b: g.grad_b.unwrap().into_vec(),
        grad_u: g.grad_u,
        grad_v: g.grad_v,
    })
}

/// `[a b]` row by row.
pub fn concat_forward_batch<T: Real>(a: &Tensor2D<T>, b: &Tensor2D<T>) -> Result<Tensor2D<T>> {
    if a.rows() != b.rows() {
        return Err(Error::shape(
            "concat",
            format!("batch sizes {} and {}", a.rows(), b.rows()),
        ));
    }
    let (na, nb) = (a.cols(), b.cols());
    let mut out = Tensor2D::zeros(a.rows(), na + nb);
    for r in 0..a.rows() {
        let row = out.row_mut(r);
        row[..na].copy_from_slice(a.row(r));
        row[na..].copy_from_slice(b.row(r));
    }
    Ok(out)
}

/// Split a gradient of `[a b]` back into its two halves.
pub fn concat_backward_batch<T: Real>(grad_out: &Tensor2D<T>, left: usize) -> Result<(Tensor2D<T>, Tensor2D<T>)> {
    if left > grad_out.cols() {
        return Err(Error::shape(
            "concat_backward",
            format!("split at {left} of {} columns", grad_out.cols()),
        ));
    }
    let right = grad_out.cols() - left;
    let mut ga = Tensor2D::zeros(grad_out.rows(), left);
    let mut gb = Tensor2D::zeros(grad_out.rows(), right);
    for r in 0..grad_out.rows() {
        let row = grad_out.row(r);
        ga.row_mut(r).copy_from_slice(&row[..left]);
        gb.row_mut(r).copy_from_slice(&row[left..]);
    }
    Ok((ga, gb))
}

pub fn concat_forward<T: Clone>(a: &[T], b: &[T]) -> Vec<T> {
    a.iter().chain(b).cloned().collect()
}

pub fn concat_backward<T: Clone>(grad_out: &[T], left: usize) -> (Vec<T>, Vec<T>) {
    let (ga, gb) = grad_out.split_at(left);
    (ga.to_vec(), gb.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input_gives_zero_output() {
        let p = BilinearRankOneParams::new(Tensor2D::<f64>::filled(3, 4, 0.7), Tensor2D::filled(3, 4, -0.2)).unwrap();
        let h = bilinear_forward_rankone(&p, &[0.0; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
    }

    #[test]
    fn unit_basis_factors_multiply_first_components() {
        let e1 = Tensor2D::<f64>::from_fn(1, 3, |_, c| if c == 0 { 1.0 } else { 0.0 });
        let p = BilinearRankOneParams::new(e1.clone(), e1).unwrap();
        let h = bilinear_forward_rankone(&p, &[2.0, 5.0, -1.0], &[3.0, 9.0, 4.0]).unwrap();
        assert_eq!(h, vec![6.0]);
    }

    #[test]
    fn concat_shapes_and_split() {
        assert_eq!(concat_forward(&[1], &[2]), vec![1, 2]);
        let a = Tensor2D::<f32>::zeros(2, 121);
        let b = Tensor2D::<f32>::filled(2, 121, 1.0);
        let h = concat_forward_batch(&a, &b).unwrap();
        assert_eq!(h.shape(), (2, 242));
        let (ga, gb) = concat_backward_batch(&h, 121).unwrap();
        assert_eq!((ga, gb), (a, b));
        let (l, r) = concat_backward(&[1.0, 2.0, 3.0], 1);
        assert_eq!((l, r), (vec![1.0], vec![2.0, 3.0]));
    }
}
