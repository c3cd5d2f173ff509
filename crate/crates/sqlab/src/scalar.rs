//! Floating-point abstraction shared by every module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};

/// Scalar type the geometry and measurement code is generic over.
///
/// Implemented for `f32` and `f64`.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Converts an `f64` literal. Panics only for non-representable input.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("finite scalar")
    }

    /// Relative slack used by containment predicates.
    #[inline]
    fn slack() -> Self {
        Self::epsilon() * Self::lit(64.0)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// `2^e` for a signed exponent.
#[inline]
pub fn pow2<T: Real>(e: i32) -> T {
    T::lit(2.0).powi(e)
}

/// Largest power of two `<= x` for `x > 0`.
pub fn dyadic_floor<T: Real>(x: T) -> T {
    let mut e = x.log2().floor().to_i32().unwrap_or(0);
    if pow2::<T>(e) > x {
        e -= 1;
    }
    if pow2::<T>(e + 1) <= x {
        e += 1;
    }
    pow2(e)
}

#[inline]
pub fn dot<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> T {
    let mut s = T::zero();
    for i in 0..N {
        s += a[i] * b[i];
    }
    s
}

#[inline]
pub fn norm<T: Real, const N: usize>(a: &[T; N]) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn sub<T: Real, const N: usize>(a: &[T; N], b: &[T; N]) -> [T; N] {
    let mut out = *a;
    for i in 0..N {
        out[i] = a[i] - b[i];
    }
    out
}

#[inline]
pub fn axpy<T: Real, const N: usize>(acc: &mut [T; N], s: T, v: &[T; N]) {
    for i in 0..N {
        acc[i] += s * v[i];
    }
}

#[inline]
pub fn scale<T: Real, const N: usize>(s: T, v: &[T; N]) -> [T; N] {
    let mut out = *v;
    for x in out.iter_mut() {
        *x = *x * s;
    }
    out
}

#[inline]
pub fn cast<T: Real, const N: usize>(v: &[T; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..N {
        out[i] = v[i].as_f64();
    }
    out
}

#[inline]
pub fn uncast<T: Real, const N: usize>(v: &[f64; N]) -> [T; N] {
    let mut out = [T::zero(); N];
    for i in 0..N {
        out[i] = T::lit(v[i]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_floor_exact_powers() {
        assert_eq!(dyadic_floor(0.25_f64), 0.25);
        assert_eq!(dyadic_floor(0.3_f64), 0.25);
        assert_eq!(dyadic_floor(0.4999_f32), 0.25);
        assert_eq!(dyadic_floor(1.0_f64), 1.0);
    }
}
