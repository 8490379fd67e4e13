//! Scalar abstraction for the numeric kernels.
//!
//! Everything numeric in this crate is generic over [`Scalar`], which is
//! implemented for `f32` and `f64`. The crate root exports concrete type
//! aliases for the common `f64` instantiation.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::StandardNormal;

/// Floating-point scalar: `f32` or `f64`.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + SampleUniform
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// One draw from N(0, 1).
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One draw from the uniform distribution on [0, 1).
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}

impl Scalar for f64 {
    #[inline]
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.sample(StandardNormal)
    }

    #[inline]
    fn unit_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random()
    }
}

/// Converts an `f64` constant into the scalar type.
///
/// Panics if the value is not representable, which cannot happen for the
/// finite literals this crate feeds it.
#[inline]
pub fn real<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("constant representable in scalar type")
}

/// Converts a count into the scalar type.
#[inline]
pub fn count_as<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count representable in scalar type")
}

/// Widens a scalar to `f64` (lossless for both supported types).
#[inline]
pub fn widen<T: Scalar>(x: T) -> f64 {
    x.to_f64().expect("scalar convertible to f64")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conversions_round_trip() {
        let x: f32 = real(0.25);
        assert_eq!(x, 0.25f32);
        let y: f64 = real(0.1);
        assert_eq!(y, 0.1f64);
        assert_eq!(widen(0.1f64), 0.1f64);
        let n: f64 = count_as(17);
        assert_eq!(n, 17.0);
    }

    #[test]
    fn normal_and_uniform_draw() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(7);
        let z = f64::standard_normal(&mut rng);
        assert!(z.is_finite());
        let u = f32::unit_uniform(&mut rng);
        assert!((0.0..1.0).contains(&u));
    }
}
