//! Contrast association units.
//!
//! Unit `k` computes `h_k = 1/2 * sum_ij W_ijk (a_i - b_j)^2` with `W_k >= 0`.
//! The full-rank form keeps every `W_k` explicitly and is used as an oracle;
//! the trained networks use the rank-one factorization `W_k = u_k v_k^T`:
//!
//! ```text
//! h = 1/2 [ (V 1) o U(a^2) + (U 1) o V(b^2) ] - (U a) o (V b)
//! ```
//!
//! Batched functions take one sample per row of `a` and `b`.

use crate::error::{Error, Result};
use crate::linalg::{gemm_into, Real, Tensor2D};

fn check_non_negative<T: Real>(what: &str, t: &Tensor2D<T>) -> Result<()> {
    if let Some((i, v)) = t.as_slice().iter().enumerate().find(|(_, v)| !(**v >= T::zero())) {
        return Err(Error::Contract(format!(
            "{what} must be non-negative, element {i} is {v}"
        )));
    }
    Ok(())
}

fn check_pair_lengths<T>(a: &[T], b: &[T], n: usize) -> Result<()> {
    if a.len() != n || b.len() != n {
        return Err(Error::shape(
            "cau",
            format!("inputs have lengths {} and {}, expected {n}", a.len(), b.len()),
        ));
    }
    Ok(())
}

/// A stack of K non-negative n x n weight matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct CauFullRankParams<T> {
    weights: Vec<Tensor2D<T>>,
}

impl<T: Real> CauFullRankParams<T> {
    pub fn new(weights: Vec<Tensor2D<T>>) -> Result<Self> {
        let n = weights.first().map_or(0, |w| w.rows());
        for (k, w) in weights.iter().enumerate() {
            if w.shape() != (n, n) {
                return Err(Error::shape(
                    "CauFullRankParams",
                    format!("W_{k} is {}x{}, expected {n}x{n}", w.rows(), w.cols()),
                ));
            }
            check_non_negative(&format!("W_{k}"), w)?;
        }
        Ok(CauFullRankParams { weights })
    }

    pub fn weights(&self) -> &[Tensor2D<T>] {
        &self.weights
    }

    pub fn units(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.rows())
    }
}

/// Non-negative factors: row `k` of `u` and `v` gives `W_k = u_k v_k^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct CauRankOneParams<T> {
    pub u: Tensor2D<T>,
    pub v: Tensor2D<T>,
}

impl<T: Real> CauRankOneParams<T> {
    pub fn new(u: Tensor2D<T>, v: Tensor2D<T>) -> Result<Self> {
        u.check_same_shape("CauRankOneParams", &v)?;
        check_non_negative("U", &u)?;
        check_non_negative("V", &v)?;
        Ok(CauRankOneParams { u, v })
    }

    /// The equivalent full-rank stack `W_k = u_k v_k^T`.
    pub fn materialize(&self) -> CauFullRankParams<T> {
        let n = self.u.cols();
        let weights = (0..self.u.rows())
            .map(|k| {
                let (uk, vk) = (self.u.row(k), self.v.row(k));
                Tensor2D::from_fn(n, n, |i, j| uk[i] * vk[j])
            })
            .collect();
        CauFullRankParams { weights }
    }
}

/// `h_k = 1/2 sum_ij W_ijk (a_i - b_j)^2` evaluated term by term.
pub fn cau_forward_full<T: Real>(params: &CauFullRankParams<T>, a: &[T], b: &[T]) -> Result<Vec<T>> {
    let n = params.input_dim();
    check_pair_lengths(a, b, n)?;
    let half = T::from_f64(0.5);
    params
        .weights
        .iter()
        .enumerate()
        .map(|(k, w)| {
            check_non_negative(&format!("W_{k}"), w)?;
            let mut acc = T::zero();
            for i in 0..n {
                let row = w.row(i);
                for j in 0..n {
                    let d = a[i] - b[j];
                    acc = acc + row[j] * d * d;
                }
            }
            Ok(half * acc)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullRankGrads<T> {
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
    pub grad_w: Vec<Tensor2D<T>>,
}

/// Gradients of the full-rank unit:
/// `dh_k/da = (W_k 1) o a - W_k b`, `dh_k/db = (W_k^T 1) o b - W_k^T a`,
/// `dh_k/dW_k = 1/2 [a^2 1^T + 1 (b^2)^T] - a b^T`.
pub fn cau_backward_full<T: Real>(
    params: &CauFullRankParams<T>,
    a: &[T],
    b: &[T],
    grad_out: &[T],
) -> Result<FullRankGrads<T>> {
    let n = params.input_dim();
    check_pair_lengths(a, b, n)?;
    if grad_out.len() != params.units() {
        return Err(Error::shape(
            "cau_backward_full",
            format!("gradOut has {} entries for {} units", grad_out.len(), params.units()),
        ));
    }
    let half = T::from_f64(0.5);
    let mut grad_a = vec![T::zero(); n];
    let mut grad_b = vec![T::zero(); n];
    let mut grad_w = Vec::with_capacity(params.units());
    for (w, &g) in params.weights.iter().zip(grad_out) {
        for i in 0..n {
            let row = w.row(i);
            let mut row_sum = T::zero();
            let mut wb = T::zero();
            for j in 0..n {
                row_sum = row_sum + row[j];
                wb = wb + row[j] * b[j];
                // column pieces for grad_b
                grad_b[j] = grad_b[j] + g * row[j] * (b[j] - a[i]);
            }
            grad_a[i] = grad_a[i] + g * (row_sum * a[i] - wb);
        }
        grad_w.push(Tensor2D::from_fn(n, n, |i, j| {
            g * (half * (a[i] * a[i] + b[j] * b[j]) - a[i] * b[j])
        }));
    }
    Ok(FullRankGrads { grad_a, grad_b, grad_w })
}

/// Intermediate products kept from the rank-one forward pass.
#[derive(Debug, Clone)]
pub struct RankOneCache<T> {
    /// `A U^T`, batch x K.
    pub ua: Tensor2D<T>,
    /// `B V^T`.
    pub vb: Tensor2D<T>,
    /// `A^2 U^T`.
    pub ua2: Tensor2D<T>,
    /// `B^2 V^T`.
    pub vb2: Tensor2D<T>,
    /// `U 1`, one entry per unit.
    pub su: Vec<T>,
    /// `V 1`.
    pub sv: Vec<T>,
}

/// Gradients of a two-input relation layer with factor matrices `U`, `V`.
/// Input gradients are only produced on request.
#[derive(Debug, Clone)]
pub struct RelationGrads<T> {
    pub grad_a: Option<Tensor2D<T>>,
    pub grad_b: Option<Tensor2D<T>>,
    pub grad_u: Tensor2D<T>,
    pub grad_v: Tensor2D<T>,
}

pub(crate) fn check_factor_inputs<T: Real>(
    op: &'static str,
    u: &Tensor2D<T>,
    v: &Tensor2D<T>,
    a: &Tensor2D<T>,
    b: &Tensor2D<T>,
) -> Result<()> {
    u.check_same_shape(op, v)?;
    a.check_same_shape(op, b)?;
    if a.cols() != u.cols() {
        return Err(Error::shape(
            op,
            format!("inputs have {} features, factors expect {}", a.cols(), u.cols()),
        ));
    }
    Ok(())
}

/// Batched rank-one CAU forward pass.
pub fn cau_rankone_forward_batch<T: Real>(
    u: &Tensor2D<T>,
    v: &Tensor2D<T>,
    a: &Tensor2D<T>,
    b: &Tensor2D<T>,
) -> Result<(Tensor2D<T>, RankOneCache<T>)> {
    check_factor_inputs("cau_forward_rankone", u, v, a, b)?;
    let (batch, k) = (a.rows(), u.rows());
    let a2 = a.square();
    let b2 = b.square();
    let mut ua = Tensor2D::zeros(batch, k);
    let mut vb = Tensor2D::zeros(batch, k);
    let mut ua2 = Tensor2D::zeros(batch, k);
    let mut vb2 = Tensor2D::zeros(batch, k);
    gemm_into(T::one(), a, false, u, true, T::zero(), &mut ua);
    gemm_into(T::one(), b, false, v, true, T::zero(), &mut vb);
    gemm_into(T::one(), &a2, false, u, true, T::zero(), &mut ua2);
    gemm_into(T::one(), &b2, false, v, true, T::zero(), &mut vb2);
    let su = u.row_sums();
    let sv = v.row_sums();
    let half = T::from_f64(0.5);
    let mut h = Tensor2D::zeros(batch, k);
    for r in 0..batch {
        let (hr, uar, vbr, ua2r, vb2r) = (h.row_mut(r), ua.row(r), vb.row(r), ua2.row(r), vb2.row(r));
        for j in 0..k {
            hr[j] = half * (sv[j] * ua2r[j] + su[j] * vb2r[j]) - uar[j] * vbr[j];
        }
    }
    Ok((
        h,
        RankOneCache {
            ua,
            vb,
            ua2,
            vb2,
            su,
            sv,
        },
    ))
}

/// Batched rank-one CAU backward pass. `grad_out` is `dE/dh`, batch x K;
/// parameter gradients are summed over the batch.
#[allow(clippy::too_many_arguments)]
pub fn cau_rankone_backward_batch<T: Real>(
    u: &Tensor2D<T>,
    v: &Tensor2D<T>,
    a: &Tensor2D<T>,
    b: &Tensor2D<T>,
    cache: &RankOneCache<T>,
    grad_out: &Tensor2D<T>,
    input_grads: bool,
) -> Result<RelationGrads<T>> {
    check_factor_inputs("cau_backward_rankone", u, v, a, b)?;
    let (batch, k) = (a.rows(), u.rows());
    if grad_out.shape() != (batch, k) {
        return Err(Error::shape(
            "cau_backward_rankone",
            format!(
                "gradOut is {}x{}, expected {batch}x{k}",
                grad_out.rows(),
                grad_out.cols()
            ),
        ));
    }
    let half = T::from_f64(0.5);

    // G o (V1), G o (U1), G o Vb, G o Ua
    let mut g_sv = grad_out.clone();
    g_sv.mul_rows_by(&cache.sv);
    let mut g_su = grad_out.clone();
    g_su.mul_rows_by(&cache.su);
    let g_vb = hadamard(grad_out, &cache.vb);
    let g_ua = hadamard(grad_out, &cache.ua);

    let a2 = a.square();
    let b2 = b.square();

    // dE/du_k = sum_batch g_k { 1/2 [ (v_k.1) a^2 + (v_k.b^2) 1 ] - (v_k.b) a }
    let mut grad_u = Tensor2D::zeros(k, u.cols());
    gemm_into(half, &g_sv, true, &a2, false, T::zero(), &mut grad_u);
    gemm_into(-T::one(), &g_vb, true, a, false, T::one(), &mut grad_u);
    let row_const_u = hadamard(grad_out, &cache.vb2).col_sums();
    add_row_constants(&mut grad_u, &row_const_u, half);

    let mut grad_v = Tensor2D::zeros(k, v.cols());
    gemm_into(half, &g_su, true, &b2, false, T::zero(), &mut grad_v);
    gemm_into(-T::one(), &g_ua, true, b, false, T::one(), &mut grad_v);
    let row_const_v = hadamard(grad_out, &cache.ua2).col_sums();
    add_row_constants(&mut grad_v, &row_const_v, half);

    let (grad_a, grad_b) = if input_grads {
        // dE/da = a o ((G o V1) U) - (G o Vb) U
        let mut ga = Tensor2D::zeros(batch, a.cols());
        gemm_into(T::one(), &g_sv, false, u, false, T::zero(), &mut ga);
        for (x, &av) in ga.as_mut_slice().iter_mut().zip(a.as_slice()) {
            *x = *x * av;
        }
        gemm_into(-T::one(), &g_vb, false, u, false, T::one(), &mut ga);

        let mut gb = Tensor2D::zeros(batch, b.cols());
        gemm_into(T::one(), &g_su, false, v, false, T::zero(), &mut gb);
        for (x, &bv) in gb.as_mut_slice().iter_mut().zip(b.as_slice()) {
            *x = *x * bv;
        }
        gemm_into(-T::one(), &g_ua, false, v, false, T::one(), &mut gb);
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

pub(crate) fn hadamard<T: Real>(x: &Tensor2D<T>, y: &Tensor2D<T>) -> Tensor2D<T> {
    debug_assert_eq!(x.shape(), y.shape());
    let mut out = x.clone();
    for (o, &b) in out.as_mut_slice().iter_mut().zip(y.as_slice()) {
        *o = *o * b;
    }
    out
}

fn add_row_constants<T: Real>(m: &mut Tensor2D<T>, consts: &[T], scale: T) {
    for (r, &c) in consts.iter().enumerate() {
        let add = scale * c;
        for x in m.row_mut(r) {
            *x = *x + add;
        }
    }
}

/// Rank-one CAU on a single pair of vectors.
pub fn cau_forward_rankone<T: Real>(params: &CauRankOneParams<T>, a: &[T], b: &[T]) -> Result<Vec<T>> {
    check_pair_lengths(a, b, params.u.cols())?;
    let (h, _) = cau_rankone_forward_batch(&params.u, &params.v, &Tensor2D::row_vector(a), &Tensor2D::row_vector(b))?;
    Ok(h.into_vec())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankOneGrads<T> {
    pub grad_a: Vec<T>,
    pub grad_b: Vec<T>,
    pub grad_u: Tensor2D<T>,
    pub grad_v: Tensor2D<T>,
}

pub fn cau_backward_rankone<T: Real>(
    params: &CauRankOneParams<T>,
    a: &[T],
    b: &[T],
    grad_out: &[T],
) -> Result<RankOneGrads<T>> {
    check_pair_lengths(a, b, params.u.cols())?;
    let (a, b) = (Tensor2D::row_vector(a), Tensor2D::row_vector(b));
    let (_, cache) = cau_rankone_forward_batch(&params.u, &params.v, &a, &b)?;
    let g = Tensor2D::row_vector(grad_out);
    let grads = cau_rankone_backward_batch(&params.u, &params.v, &a, &b, &cache, &g, true)?;
    Ok(RankOneGrads {
        grad_a: grads.grad_a.unwrap().into_vec(),
        grad_b: grads.grad_b.unwrap().into_vec(),
        grad_u: grads.grad_u,
        grad_v: grads.grad_v,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rng_uniform, Rng};

    fn identity_stack(k: usize, n: usize) -> CauFullRankParams<f64> {
        CauFullRankParams::new(vec![Tensor2D::identity(n); k]).unwrap()
    }

    fn random_rankone(rng: &mut Rng, k: usize, n: usize) -> CauRankOneParams<f64> {
        CauRankOneParams::new(
            rng_uniform(rng, 0.0, 1.0, k, n).unwrap(),
            rng_uniform(rng, 0.0, 1.0, k, n).unwrap(),
        )
        .unwrap()
    }

    fn rand_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect()
    }

    #[test]
    fn full_rank_hand_values() {
        let p = identity_stack(2, 5);
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(cau_forward_full(&p, &a, &a).unwrap(), vec![0.0, 0.0]);
        let b = [2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(cau_forward_full(&p, &a, &b).unwrap(), vec![2.5, 2.5]);
    }

    #[test]
    fn full_rank_rejects_negative_weight() {
        assert!(matches!(
            CauFullRankParams::new(vec![Tensor2D::<f64>::filled(2, 2, -1.0)]),
            Err(Error::Contract(_))
        ));
        assert!(CauRankOneParams::new(Tensor2D::<f64>::filled(1, 2, 1.0), Tensor2D::filled(1, 2, -0.1)).is_err());
    }

    #[test]
    fn full_rank_shift_invariance() {
        let mut rng = Rng::new(1);
        let p = random_rankone(&mut rng, 4, 6).materialize();
        let a = rand_vec(&mut rng, 6);
        let b = rand_vec(&mut rng, 6);
        let c = 0.37;
        let sa: Vec<f64> = a.iter().map(|x| x + c).collect();
        let sb: Vec<f64> = b.iter().map(|x| x + c).collect();
        let h0 = cau_forward_full(&p, &a, &b).unwrap();
        let h1 = cau_forward_full(&p, &sa, &sb).unwrap();
        for (x, y) in h0.iter().zip(&h1) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn rankone_ones_on_equal_inputs_is_zero() {
        let p = CauRankOneParams::new(Tensor2D::filled(1, 4, 1.0), Tensor2D::filled(1, 4, 1.0)).unwrap();
        // W = 1 1^T compares every pair (a_i, a_j), so only a constant
        // vector matches itself completely.
        let a = [0.3f64; 4];
        let h = cau_forward_rankone(&p, &a, &a).unwrap();
        assert!(h[0].abs() < 1e-15);
        let single = CauRankOneParams::new(Tensor2D::filled(1, 1, 1.0), Tensor2D::filled(1, 1, 1.0)).unwrap();
        assert_eq!(cau_forward_rankone(&single, &[0.7f64], &[0.7]).unwrap(), vec![0.0]);
        let varied = [0.3f64, -0.2, 0.1, 0.4];
        assert!(cau_forward_rankone(&p, &varied, &varied).unwrap()[0] > 0.0);
    }

    #[test]
    fn rankone_matches_materialized_full_rank() {
        let mut rng = Rng::new(2);
        let p = random_rankone(&mut rng, 7, 5);
        let full = p.materialize();
        let a = rand_vec(&mut rng, 5);
        let b = rand_vec(&mut rng, 5);
        let h1 = cau_forward_rankone(&p, &a, &b).unwrap();
        let h2 = cau_forward_full(&full, &a, &b).unwrap();
        for (x, y) in h1.iter().zip(&h2) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = Rng::new(3);
        let p = random_rankone(&mut rng, 3, 5);
        let a = rand_vec(&mut rng, 5);
        let b = rand_vec(&mut rng, 5);
        let g = cau_backward_rankone(&p, &a, &b, &[0.0; 3]).unwrap();
        assert!(g.grad_a.iter().chain(&g.grad_b).all(|&x| x == 0.0));
        assert_eq!(g.grad_u.max_abs(), 0.0);
        assert_eq!(g.grad_v.max_abs(), 0.0);

        let gf = cau_backward_full(&p.materialize(), &a, &b, &[0.0; 3]).unwrap();
        assert!(gf.grad_a.iter().chain(&gf.grad_b).all(|&x| x == 0.0));
        assert!(gf.grad_w.iter().all(|w| w.max_abs() == 0.0));
    }

    #[test]
    fn swap_symmetry_when_inputs_and_factors_coincide() {
        // a = b and U = V make every W_k symmetric, so swapping (a, b) leaves
        // h unchanged: dE/da = dE/db element-wise. Shift invariance then
        // forces both to sum to zero.
        let mut rng = Rng::new(4);
        let u: Tensor2D<f64> = rng_uniform(&mut rng, 0.0, 1.0, 3, 5).unwrap();
        let p = CauRankOneParams::new(u.clone(), u).unwrap();
        let a = rand_vec(&mut rng, 5);
        let g = cau_backward_rankone(&p, &a, &a, &[0.3, -1.2, 0.8]).unwrap();
        for (x, y) in g.grad_a.iter().zip(&g.grad_b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(g.grad_a.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn full_rank_symmetric_weight_gradient_at_equal_inputs() {
        // For a = b and symmetric W: dh/da = (W 1) o a - W a.
        let mut rng = Rng::new(5);
        let m: Tensor2D<f64> = rng_uniform(&mut rng, 0.0, 1.0, 4, 4).unwrap();
        let w = Tensor2D::from_fn(4, 4, |i, j| m.get(i, j) + m.get(j, i));
        let p = CauFullRankParams::new(vec![w.clone()]).unwrap();
        let a = rand_vec(&mut rng, 4);
        let g = cau_backward_full(&p, &a, &a, &[1.0]).unwrap();
        for i in 0..4 {
            let row_sum: f64 = w.row(i).iter().sum();
            let wa: f64 = (0..4).map(|j| w.get(i, j) * a[j]).sum();
            assert!((g.grad_a[i] - (row_sum * a[i] - wa)).abs() < 1e-12);
        }
    }

    #[test]
    fn batched_rows_are_independent() {
        let mut rng = Rng::new(6);
        let p = random_rankone(&mut rng, 4, 3);
        let a: Tensor2D<f64> = rng_uniform(&mut rng, -1.0, 1.0, 3, 3).unwrap();
        let b: Tensor2D<f64> = rng_uniform(&mut rng, -1.0, 1.0, 3, 3).unwrap();
        let (h, _) = cau_rankone_forward_batch(&p.u, &p.v, &a, &b).unwrap();
        for r in 0..3 {
            let single = cau_forward_rankone(&p, a.row(r), b.row(r)).unwrap();
            for (x, y) in h.row(r).iter().zip(&single) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let p = CauRankOneParams::new(Tensor2D::<f64>::filled(2, 3, 1.0), Tensor2D::filled(2, 3, 1.0)).unwrap();
        assert!(cau_forward_rankone(&p, &[1.0, 2.0], &[1.0, 2.0]).is_err());
        assert!(cau_backward_rankone(&p, &[0.0; 3], &[0.0; 3], &[1.0]).is_err());
    }
}
