//! Dense row-major matrices and a seedable random number generator.
//!
//! Everything numeric in the crate is carried by [`Tensor2D`]. A vector is a
//! tensor with one row; a mini-batch is a tensor with one row per sample.
//! Matrix products go through `matrixmultiply`, which is single-threaded and
//! therefore bitwise reproducible.

use std::fmt;

use num_traits::Float;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Scalar type usable by every layer: `f32` for training, `f64` for
/// gradient checking.
pub trait Real: Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static {
    /// Byte width, also used as the dtype tag in checkpoint files.
    const BYTES: usize;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` on raw strided storage.
    #[allow(clippy::too_many_arguments)]
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
    );

    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
}

impl Real for f32 {
    const BYTES: usize = 4;

    fn from_f64(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: &[f32],
        rsa: isize,
        csa: isize,
        b: &[f32],
        rsb: isize,
        csb: isize,
        beta: f32,
        c: &mut [f32],
    ) {
        debug_assert!(c.len() >= m * n);
        // SAFETY: callers index within the slices according to the strides.
        unsafe {
            matrixmultiply::sgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
}

impl Real for f64 {
    const BYTES: usize = 8;

    fn from_f64(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: &[f64],
        rsa: isize,
        csa: isize,
        b: &[f64],
        rsb: isize,
        csb: isize,
        beta: f64,
        c: &mut [f64],
    ) {
        debug_assert!(c.len() >= m * n);
        // SAFETY: see the f32 impl.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                alpha,
                a.as_ptr(),
                rsa,
                csa,
                b.as_ptr(),
                rsb,
                csb,
                beta,
                c.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
}

/// Dense row-major matrix.
#[derive(Clone, PartialEq)]
pub struct Tensor2D<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor2D<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor2D({}x{}) ", self.rows, self.cols)?;
        f.debug_list().entries(self.data.chunks(self.cols.max(1))).finish()
    }
}

impl<T: Real> Tensor2D<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Tensor2D::new",
                format!("{rows}x{cols} needs {} values, got {}", rows * cols, data.len()),
            ));
        }
        Ok(Tensor2D { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Tensor2D {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Tensor2D { rows, cols, data }
    }

    /// A single-row tensor holding `v`.
    pub fn row_vector(v: &[T]) -> Self {
        Tensor2D {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::shape(
                    "Tensor2D::from_rows",
                    format!("row {i} has {} columns, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Tensor2D {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn map_inplace(&mut self, f: impl Fn(T) -> T) {
        for v in &mut self.data {
            *v = f(*v);
        }
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn square(&self) -> Self {
        self.map(|v| v * v)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Sum of each row, as a column of length `rows`.
    pub fn row_sums(&self) -> Vec<T> {
        self.data
            .chunks(self.cols.max(1))
            .take(self.rows)
            .map(|r| r.iter().copied().sum())
            .collect()
    }

    /// Sum over rows, giving one value per column.
    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for r in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(r)) {
                *o = *o + v;
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.check_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Multiply each row element-wise by `v` (length `cols`).
    pub fn mul_rows_by(&mut self, v: &[T]) {
        debug_assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for (a, &s) in self.row_mut(r).iter_mut().zip(v) {
                *a = *a * s;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor2D<U> {
        Tensor2D {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub(crate) fn check_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols),
            ));
        }
        Ok(())
    }
}

/// Matrix product `op(a) * op(b)` where `op` optionally transposes.
pub fn gemm<T: Real>(a: &Tensor2D<T>, b: &Tensor2D<T>, transpose_a: bool, transpose_b: bool) -> Result<Tensor2D<T>> {
    let (m, ka) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let (kb, n) = if transpose_b {
        (b.cols, b.rows)
    } else {
        (b.rows, b.cols)
    };
    if ka != kb {
        return Err(Error::shape(
            "gemm",
            format!(
                "{}{}x{} * {}{}x{}: inner dimensions {ka} and {kb} differ",
                if transpose_a { "T " } else { "" },
                a.rows,
                a.cols,
                if transpose_b { "T " } else { "" },
                b.rows,
                b.cols
            ),
        ));
    }
    let mut c = Tensor2D::zeros(m, n);
    gemm_into(T::one(), a, transpose_a, b, transpose_b, T::zero(), &mut c);
    Ok(c)
}

/// `c = alpha * op(a) * op(b) + beta * c`. Shapes are the caller's
/// responsibility; they are asserted.
pub fn gemm_into<T: Real>(
    alpha: T,
    a: &Tensor2D<T>,
    transpose_a: bool,
    b: &Tensor2D<T>,
    transpose_b: bool,
    beta: T,
    c: &mut Tensor2D<T>,
) {
    let (m, k) = if transpose_a {
        (a.cols, a.rows)
    } else {
        (a.rows, a.cols)
    };
    let n = if transpose_b { b.rows } else { b.cols };
    assert_eq!((c.rows, c.cols), (m, n), "gemm_into: output shape");
    assert_eq!(
        if transpose_b { b.cols } else { b.rows },
        k,
        "gemm_into: inner dimension"
    );
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.map_inplace(|v| v * beta);
        return;
    }
    let (rsa, csa) = if transpose_a {
        (1, a.cols as isize)
    } else {
        (a.cols as isize, 1)
    };
    let (rsb, csb) = if transpose_b {
        (1, b.cols as isize)
    } else {
        (b.cols as isize, 1)
    };
    T::gemm_raw(m, k, n, alpha, &a.data, rsa, csa, &b.data, rsb, csb, beta, &mut c.data);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Element-wise binary operation on equally shaped tensors. Division by an
/// exact zero is an error.
pub fn elementwise<T: Real>(a: &Tensor2D<T>, b: &Tensor2D<T>, op: ElemOp) -> Result<Tensor2D<T>> {
    a.check_same_shape("elementwise", b)?;
    let mut data = Vec::with_capacity(a.len());
    for (i, (&x, &y)) in a.data.iter().zip(&b.data).enumerate() {
        let v = match op {
            ElemOp::Add => x + y,
            ElemOp::Sub => x - y,
            ElemOp::Mul => x * y,
            ElemOp::Div => {
                if y == T::zero() {
                    return Err(Error::DivisionByZero { index: i });
                }
                x / y
            }
            ElemOp::Pow => x.powf(y),
        };
        data.push(v);
    }
    Ok(Tensor2D {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Element-wise `a / (b + eps)`, the guarded division used with
/// epsilon-shifted operands.
pub fn divide_guarded<T: Real>(a: &Tensor2D<T>, b: &Tensor2D<T>, eps: T) -> Result<Tensor2D<T>> {
    a.check_same_shape("divide_guarded", b)?;
    if !(eps > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "guard epsilon must be positive, got {eps}"
        )));
    }
    Ok(Tensor2D {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| x / (y + eps)).collect(),
    })
}

/// While alive, subnormal floats are flushed to zero on x86-64. No-op on
/// other targets.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    #[allow(deprecated)]
    pub fn enable() -> Self {
        #[cfg(target_arch = "x86_64")]
        {
            use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
            // SAFETY: FTZ (bit 15) and DAZ (bit 6) only change how subnormals are
            // rounded; SSE2 is part of the x86-64 baseline.
            let saved = unsafe { _mm_getcsr() };
            unsafe { _mm_setcsr(saved | 0x8040) };
            FlushDenormals { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushDenormals {}
    }
}

impl Drop for FlushDenormals {
    #[allow(deprecated)]
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the control word read in `enable`.
        unsafe {
            std::arch::x86_64::_mm_setcsr(self.saved)
        };
    }
}

/// Serializable position of an [`Rng`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

/// Seedable generator: ChaCha with 8 rounds, seeded through
/// `SeedableRng::seed_from_u64` (PCG32 expansion of the 64-bit seed).
/// Independent substreams use ChaCha's 64-bit stream id.
#[derive(Debug, Clone)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Generator for substream `stream` of `seed`; distinct streams are
    /// statistically independent.
    pub fn substream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Rng { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Rng { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in [0, 1) with 53 random bits.
    pub fn unit(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        loop {
            let v = lo + (hi - lo) * self.unit();
            if v < hi {
                return v;
            }
        }
    }

    /// Uniform integer in [0, n) by rejection, free of modulo bias.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0);
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.inner.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.unit();
        let u2 = self.unit();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Tensor of i.i.d. draws from U[lo, hi).
pub fn rng_uniform<T: Real>(rng: &mut Rng, lo: f64, hi: f64, rows: usize, cols: usize) -> Result<Tensor2D<T>> {
    if !(lo < hi) {
        return Err(Error::InvalidArgument(format!(
            "uniform range needs lo < hi, got [{lo}, {hi})"
        )));
    }
    let hi_t = T::from_f64(hi);
    let mut data = Vec::with_capacity(rows * cols);
    while data.len() < rows * cols {
        let v = T::from_f64(rng.uniform(lo, hi));
        // Rounding to f32 can land exactly on `hi`.
        if v < hi_t {
            data.push(v);
        }
    }
    Ok(Tensor2D { rows, cols, data })
}

#[cfg(test)]
mod tests {
    use super::Rng;
    use super::*;
    use proptest::prelude::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor2D<f64> {
        Tensor2D::new(rows, cols, v.to_vec()).unwrap()
    }

    fn naive_matmul(a: &Tensor2D<f64>, b: &Tensor2D<f64>) -> Tensor2D<f64> {
        Tensor2D::from_fn(a.rows(), b.cols(), |i, j| {
            (0..a.cols()).map(|k| a.get(i, k) * b.get(k, j)).sum()
        })
    }

    #[test]
    fn gemm_identity_and_hand_product() {
        let m = t(3, 2, &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(gemm(&Tensor2D::identity(3), &m, false, false).unwrap(), m);

        let a = t(2, 2, &[1., 2., 3., 4.]);
        let b = t(2, 1, &[1., 1.]);
        assert_eq!(gemm(&a, &b, false, false).unwrap().as_slice(), &[3., 7.]);

        let z = Tensor2D::<f64>::zeros(2, 3);
        assert_eq!(gemm(&z, &m, false, false).unwrap(), Tensor2D::zeros(2, 2));
    }

    #[test]
    fn gemm_rejects_mismatch_with_dims_in_message() {
        let a = Tensor2D::<f64>::zeros(2, 3);
        let b = Tensor2D::<f64>::zeros(2, 3);
        let err = gemm(&a, &b, false, false).unwrap_err().to_string();
        assert!(err.contains("2x3"), "{err}");
        assert!(gemm(&a, &b, false, true).is_ok());
    }

    #[test]
    fn elementwise_cases() {
        let a = t(1, 2, &[2., 3.]);
        let ones = Tensor2D::filled(1, 2, 1.0);
        assert_eq!(elementwise(&a, &ones, ElemOp::Mul).unwrap(), a);
        let two = Tensor2D::filled(1, 2, 2.0);
        assert_eq!(elementwise(&a, &two, ElemOp::Pow).unwrap().as_slice(), &[4., 9.]);
        assert_eq!(elementwise(&a, &a, ElemOp::Sub).unwrap(), Tensor2D::zeros(1, 2));
        let z = Tensor2D::zeros(1, 2);
        assert!(matches!(
            elementwise(&a, &z, ElemOp::Div),
            Err(Error::DivisionByZero { index: 0 })
        ));
        assert!(elementwise(&a, &Tensor2D::zeros(2, 1), ElemOp::Add).is_err());
        let g = divide_guarded(&a, &z, 1e-20).unwrap();
        assert!(g.all_finite());
    }

    #[test]
    fn uniform_range_determinism_and_mean() {
        let mut r = Rng::new(7);
        let x: Tensor2D<f64> = rng_uniform(&mut r, 0.0, 1.0, 100, 100).unwrap();
        assert!(x.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));

        let a: Tensor2D<f32> = rng_uniform(&mut Rng::new(3), -1.0, 1.0, 4, 4).unwrap();
        let b: Tensor2D<f32> = rng_uniform(&mut Rng::new(3), -1.0, 1.0, 4, 4).unwrap();
        assert_eq!(a, b);

        let big: Tensor2D<f64> = rng_uniform(&mut Rng::new(11), 0.0, 1.0, 1000, 1000).unwrap();
        let mean = big.sum() / 1e6;
        assert!((mean - 0.5).abs() < 0.002, "mean {mean}");

        assert!(rng_uniform::<f64>(&mut r, 1.0, 1.0, 1, 1).is_err());
    }

    #[test]
    fn rng_state_round_trip() {
        let mut r = Rng::substream(5, 9);
        r.next_u64();
        let saved = r.state();
        let expected: Vec<u64> = (0..5).map(|_| r.next_u64()).collect();
        let mut restored = Rng::from_state(saved);
        let got: Vec<u64> = (0..5).map(|_| restored.next_u64()).collect();
        assert_eq!(expected, got);
        assert_ne!(Rng::substream(5, 1).next_u64(), Rng::substream(5, 2).next_u64());
    }

    proptest! {
        #[test]
        fn gemm_is_associative(seed in any::<u64>()) {
            let mut r = Rng::new(seed);
            let a: Tensor2D<f64> = rng_uniform(&mut r, -1.0, 1.0, 5, 5).unwrap();
            let b: Tensor2D<f64> = rng_uniform(&mut r, -1.0, 1.0, 5, 5).unwrap();
            let c: Tensor2D<f64> = rng_uniform(&mut r, -1.0, 1.0, 5, 5).unwrap();
            let left = gemm(&gemm(&a, &b, false, false).unwrap(), &c, false, false).unwrap();
            let right = gemm(&a, &gemm(&b, &c, false, false).unwrap(), false, false).unwrap();
            let scale = left.max_abs().max(1.0);
            for (x, y) in left.as_slice().iter().zip(right.as_slice()) {
                prop_assert!((x - y).abs() / scale < 1e-10);
            }
        }

        #[test]
        fn transpose_flags_match_explicit_transpose(seed in any::<u64>(), m in 1usize..7, k in 1usize..7, n in 1usize..7) {
            let mut r = Rng::new(seed);
            let a: Tensor2D<f64> = rng_uniform(&mut r, -1.0, 1.0, k, m).unwrap();
            let b: Tensor2D<f64> = rng_uniform(&mut r, -1.0, 1.0, n, k).unwrap();
            let flagged = gemm(&a, &b, true, true).unwrap();
            let explicit = naive_matmul(&a.transpose(), &b.transpose());
            for (x, y) in flagged.as_slice().iter().zip(explicit.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
