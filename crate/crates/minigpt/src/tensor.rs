//! Dense row-major tensors and the scalar types they may hold.

use std::fmt::Debug;

use crate::error::{Error, Result};

/// Floating-point element type of a [`Tensor`].
///
/// Training runs in `f32`; gradient checks rerun the same code in `f64`.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialOrd
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
{
    const ZERO: Self;
    const ONE: Self;
    const NEG_INFINITY: Self;

    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn tanh(self) -> Self;
    fn is_finite(self) -> bool;

    /// `c = alpha * a * b + beta * c` with explicit row/column strides.
    ///
    /// # Safety
    /// Strides and extents must keep every access inside the slices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

macro_rules! impl_scalar {
    ($t:ty, $gemm:path, $exp:path, $tanh:path) => {
        impl Scalar for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            const NEG_INFINITY: Self = <$t>::NEG_INFINITY;

            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                $exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn tanh(self) -> Self {
                $tanh(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }

            unsafe fn gemm_raw(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: *const Self,
                rsa: isize,
                csa: isize,
                b: *const Self,
                rsb: isize,
                csb: isize,
                beta: Self,
                c: *mut Self,
                rsc: isize,
                csc: isize,
            ) {
                $gemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm, exp_f32, tanh_f32);
impl_scalar!(f64, matrixmultiply::dgemm, f64::exp, f64::tanh);

/// Branch-free `exp` for f32 that the compiler can vectorize, unlike the libm
/// call. Reduces `x = n ln2 + r` with `|r| <= ln2 / 2` and evaluates a degree-7
/// Taylor polynomial, whose truncation error (< 6e-9) is below half an ulp.
/// Inputs under -87 give 0 rather than a subnormal.
#[inline]
pub fn exp_f32(x: f32) -> f32 {
    const LN2_HI: f32 = 0.693_145_75;
    const LN2_LO: f32 = 1.428_606_8e-6;
    // adding 1.5 * 2^23 rounds to the nearest integer in the low mantissa bits
    const ROUND: f32 = 12_582_912.0;
    let xc = x.clamp(-87.0, 88.72);
    let shifted = xc * std::f32::consts::LOG2_E + ROUND;
    let n = shifted - ROUND;
    let r = (xc - n * LN2_HI) - n * LN2_LO;
    let p = 1.0
        + r * (1.0
            + r * (1.0 / 2.0
                + r * (1.0 / 6.0 + r * (1.0 / 24.0 + r * (1.0 / 120.0 + r * (1.0 / 720.0 + r * (1.0 / 5040.0)))))));
    // the integer sits in the low mantissa bits, so no float-to-int cast is needed
    let n = shifted.to_bits() as i32 - ROUND.to_bits() as i32;
    // two factors so n = 128 does not overflow the exponent field
    let (h, l) = (n >> 1, n - (n >> 1));
    let y = p * f32::from_bits(((h + 127) as u32) << 23) * f32::from_bits(((l + 127) as u32) << 23);
    let y = if x > 88.72 { f32::INFINITY } else { y };
    // results below the normal range flush to zero; NaN fails both tests
    if x < -87.0 {
        0.0
    } else {
        y
    }
}

/// `tanh` through [`exp_f32`]; absolute error stays near one f32 ulp of 1.
#[inline]
pub fn tanh_f32(x: f32) -> f32 {
    let e = exp_f32(-2.0 * x.abs());
    ((1.0 - e) / (1.0 + e)).copysign(x)
}

/// Layout of one matrix operand inside a flat buffer.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatView {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub transposed: bool,
}

impl MatView {
    pub fn new(offset: usize, rows: usize, cols: usize) -> Self {
        MatView { offset, rows, cols, transposed: false }
    }

    /// The same storage read as its transpose.
    pub fn t(self) -> Self {
        MatView { rows: self.cols, cols: self.rows, transposed: !self.transposed, ..self }
    }

    fn strides(&self) -> (isize, isize) {
        // storage is row-major in the untransposed orientation
        if self.transposed {
            (1, self.rows as isize)
        } else {
            (self.cols as isize, 1)
        }
    }

    fn extent(&self) -> usize {
        self.offset + self.rows * self.cols
    }
}

/// `c[view] = a[view] * b[view] + beta * c[view]`, with `c` row-major.
pub(crate) fn gemm<S: Scalar>(a: &[S], av: MatView, b: &[S], bv: MatView, beta: S, c: &mut [S], c_offset: usize) {
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    assert_eq!(k, bv.rows, "gemm inner dimension");
    assert!(av.extent() <= a.len() && bv.extent() <= b.len());
    assert!(c_offset + m * n <= c.len());
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = av.strides();
    let (rsb, csb) = bv.strides();
    // SAFETY: the extents checked above bound every index the kernel touches.
    unsafe {
        S::gemm_raw(
            m,
            k,
            n,
            S::ONE,
            a.as_ptr().add(av.offset),
            rsa,
            csa,
            b.as_ptr().add(bv.offset),
            rsb,
            csb,
            beta,
            c.as_mut_ptr().add(c_offset),
            n as isize,
            1,
        );
    }
}

/// An n-dimensional array stored flat in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: &[usize], data: Vec<S>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero-sized dimension in shape {shape:?}")));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::ShapeMismatch { op: "tensor", lhs: shape.to_vec(), rhs: vec![data.len()] });
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, S::ZERO)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, S::ONE)
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| S::from_f64(x)).collect())
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Converts every element to another precision.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| T::from_f64(x.to_f64())).collect() }
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<S>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// Integer token ids with a shape, e.g. a `(B, T)` batch.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdTensor {
    shape: Vec<usize>,
    ids: Vec<usize>,
}

impl IdTensor {
    pub fn new(shape: &[usize], ids: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != ids.len() {
            return Err(Error::ShapeMismatch { op: "id tensor", lhs: shape.to_vec(), rhs: vec![ids.len()] });
        }
        Ok(IdTensor { shape: shape.to_vec(), ids })
    }

    /// A single `(1, T)` row.
    pub fn row(ids: Vec<usize>) -> Self {
        IdTensor { shape: vec![1, ids.len()], ids }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_exp_tracks_f64() {
        let mut worst = 0.0f64;
        for i in -870_000..=887_000 {
            let x = i as f32 * 1e-4;
            let want = (x as f64).exp();
            let rel = ((exp_f32(x) as f64) - want).abs() / want;
            worst = worst.max(rel);
        }
        assert!(worst < 2.5e-7, "worst relative error {worst}");
        assert_eq!(exp_f32(f32::NEG_INFINITY), 0.0);
        assert_eq!(exp_f32(0.0), 1.0);
        assert_eq!(exp_f32(100.0), f32::INFINITY);
        assert!(exp_f32(f32::NAN).is_nan());
    }

    #[test]
    fn fast_tanh_tracks_f64() {
        for i in -20_000..=20_000 {
            let x = i as f32 * 1e-3;
            let err = ((tanh_f32(x) as f64) - (x as f64).tanh()).abs();
            assert!(err < 2.5e-7, "tanh({x}) off by {err}");
        }
        assert_eq!(tanh_f32(f32::INFINITY), 1.0);
        assert_eq!(tanh_f32(-0.0), 0.0);
        assert!(tanh_f32(f32::NAN).is_nan());
    }

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::<f32>::new(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(matches!(Tensor::<f32>::new(&[2, 3], vec![0.0; 5]), Err(Error::ShapeMismatch { .. })));
        assert!(Tensor::<f32>::new(&[0, 3], vec![]).is_err());
    }

    #[test]
    fn gemm_with_transposed_views() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(&a, MatView::new(0, 2, 2), &b, MatView::new(0, 2, 2), 0.0, &mut c, 0);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        // aᵀ b
        gemm(&a, MatView::new(0, 2, 2).t(), &b, MatView::new(0, 2, 2), 0.0, &mut c, 0);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        // a bᵀ, accumulated on top of the previous result
        gemm(&a, MatView::new(0, 2, 2), &b, MatView::new(0, 2, 2).t(), 1.0, &mut c, 0);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }
}
