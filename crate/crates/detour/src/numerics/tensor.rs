//! Dense row-major tensors over f32 (training) or f64 (analysis).

use crate::error::{DetourError, Result};

/// Scalar element type for tensors. Training runs in f32, analysis and
/// gradient checking in f64; everything downstream is generic over this.
pub trait Scalar:
    Copy
    + Default
    + PartialOrd
    + std::fmt::Debug
    + std::fmt::Display
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
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn is_finite(self) -> bool;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn tanh(self) -> Self;
    fn powf(self, e: Self) -> Self;
    fn max_val(self, other: Self) -> Self;
    fn abs(self) -> Self;
    /// Exponential for bulk activation math. Exact for f64; for f32 a
    /// polynomial approximation (rel err ~1e-7) that the compiler can
    /// vectorize, since scalar libm calls dominate softmax otherwise.
    fn exp_fast(self) -> Self {
        self.exp()
    }
    fn tanh_fast(self) -> Self {
        self.tanh()
    }
}

/// Cephes-style expf: branch-free range reduction plus a degree-5
/// polynomial, rel err ~1e-7 on the finite range.
#[inline(always)]
fn exp_fast_f32(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.clamp(-87.0, 88.0);
    let n = (x * LOG2E).round();
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_2e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_6e-1;
    let p = p * r + 5.000_000_3e-1;
    let p = p * r * r + r + 1.0;
    let bits = ((n as i32 + 127) << 23) as u32;
    p * f32::from_bits(bits)
}

macro_rules! impl_scalar {
    ($t:ty $(, $extra:item)*) => {
        impl Scalar for $t {
            $($extra)*
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            #[inline(always)]
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            #[inline(always)]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline(always)]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline(always)]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline(always)]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline(always)]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline(always)]
            fn tanh(self) -> Self {
                <$t>::tanh(self)
            }
            #[inline(always)]
            fn powf(self, e: Self) -> Self {
                <$t>::powf(self, e)
            }
            #[inline(always)]
            fn max_val(self, other: Self) -> Self {
                <$t>::max(self, other)
            }
            #[inline(always)]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
        }
    };
}

impl_scalar!(
    f32,
    fn exp_fast(self) -> Self {
        exp_fast_f32(self)
    },
    fn tanh_fast(self) -> Self {
        // tanh(x) = 1 - 2 / (e^{2x} + 1), saturating past |x| = 9
        let x = self.clamp(-9.0, 9.0);
        let e = exp_fast_f32(2.0 * x);
        (e - 1.0) / (e + 1.0)
    }
);
impl_scalar!(f64);

/// Dense row-major tensor. Invariant: `product(shape) == data.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Scalar> {
    shape: Vec<usize>,
    data: Vec<E>,
}

impl<E: Scalar> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::ZERO; n],
        }
    }

    pub fn filled(shape: &[usize], value: E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(DetourError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    /// Number of rows when viewed as 2-D (`[rows, cols]`).
    pub fn rows(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "rows() on non-2D tensor");
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        assert_eq!(self.shape.len(), 2, "cols() on non-2D tensor");
        self.shape[1]
    }

    #[inline(always)]
    pub fn row(&self, r: usize) -> &[E] {
        let c = self.shape[self.shape.len() - 1];
        &self.data[r * c..(r + 1) * c]
    }

    #[inline(always)]
    pub fn row_mut(&mut self, r: usize) -> &mut [E] {
        let c = self.shape[self.shape.len() - 1];
        &mut self.data[r * c..(r + 1) * c]
    }

    #[inline(always)]
    pub fn at(&self, r: usize, c: usize) -> E {
        self.data[r * self.shape[1] + c]
    }

    #[inline(always)]
    pub fn set(&mut self, r: usize, c: usize, v: E) {
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    /// Fails if any element is NaN or infinite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(DetourError::NonFinite(what.to_string()))
        }
    }

    pub fn fill(&mut self, v: E) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn scale(&mut self, s: E) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<E>) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn map<F: Scalar>(&self, f: impl Fn(E) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        self.map(|v| v.to_f64())
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        self.map(|v| v.to_f64() as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_shape() {
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn check_finite_flags_nan() {
        let mut t = Tensor::<f32>::zeros(&[4]);
        assert!(t.check_finite("t").is_ok());
        t.data_mut()[2] = f32::NAN;
        assert!(t.check_finite("t").is_err());
    }

    #[test]
    fn row_accessors() {
        let t = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.row(1), &[4.0, 5.0, 6.0]);
        assert_eq!(t.at(0, 2), 3.0);
    }

    #[test]
    fn fast_exp_tracks_libm_for_f32() {
        let mut worst = 0.0f64;
        let mut x = -30.0f32;
        while x < 30.0 {
            let fast = x.exp_fast() as f64;
            let exact = (x as f64).exp();
            let rel = ((fast - exact) / exact).abs();
            worst = worst.max(rel);
            x += 0.00137;
        }
        assert!(worst < 2e-6, "worst rel err {}", worst);
        // f64 stays exact
        assert_eq!(1.37f64.exp_fast(), 1.37f64.exp());
    }

    #[test]
    fn fast_tanh_tracks_libm_for_f32() {
        let mut worst = 0.0f32;
        let mut x = -12.0f32;
        while x < 12.0 {
            let diff = (x.tanh_fast() - x.tanh()).abs();
            worst = worst.max(diff);
            x += 0.0071;
        }
        assert!(worst < 2e-6, "worst abs err {}", worst);
        assert_eq!(0.5f64.tanh_fast(), 0.5f64.tanh());
    }
}
