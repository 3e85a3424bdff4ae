//! Scalar abstraction shared by every numeric routine in the crate.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point number usable as the state and time type: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Debug
    + Display
    + Default
    + Sum
    + Send
    + Sync
    + 'static
{
}

impl<T> Scalar for T where
    T: Float
        + FloatConst
        + FromPrimitive
        + ToPrimitive
        + Debug
        + Display
        + Default
        + Sum
        + Send
        + Sync
        + 'static
{
}

/// Converts an `f64` literal into `S`.
#[inline]
pub fn lit<S: Scalar>(v: f64) -> S {
    S::from_f64(v).expect("f64 literal must be representable")
}

/// Lossy conversion to `f64` for serialization and reporting.
#[inline]
pub fn to_f64<S: Scalar>(v: S) -> f64 {
    v.to_f64().unwrap_or(f64::NAN)
}

/// Small dense-vector helpers. States are plain slices; these keep the
/// arithmetic readable without pulling in a linear algebra crate.
pub mod vec {
    use super::Scalar;

    pub fn norm<S: Scalar>(x: &[S]) -> S {
        x.iter().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn dist<S: Scalar>(a: &[S], b: &[S]) -> S {
        a.iter()
            .zip(b)
            .map(|(&p, &q)| (p - q) * (p - q))
            .sum::<S>()
            .sqrt()
    }

    pub fn sub<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
        a.iter().zip(b).map(|(&p, &q)| p - q).collect()
    }

    pub fn scale<S: Scalar>(a: &[S], k: S) -> Vec<S> {
        a.iter().map(|&p| p * k).collect()
    }

    /// `a + b`, leaving components untouched where `b` is exactly zero so a
    /// zero perturbation is bit-for-bit the identity (no `-0.0 + 0.0` flips).
    pub fn add_sparse<S: Scalar>(a: &[S], b: &[S]) -> Vec<S> {
        a.iter()
            .zip(b)
            .map(|(&p, &q)| if q == S::zero() { p } else { p + q })
            .collect()
    }

    pub fn is_finite<S: Scalar>(a: &[S]) -> bool {
        a.iter().all(|v| v.is_finite())
    }

    pub fn max_abs<S: Scalar>(a: &[S]) -> S {
        a.iter().fold(S::zero(), |m, &v| m.max(v.abs()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn add_sparse_keeps_negative_zero() {
        let a = [-0.0_f64, 1.0];
        let out = vec::add_sparse(&a, &[0.0, 0.5]);
        assert!(out[0].is_sign_negative());
        assert_eq!(out[1], 1.5);
    }

    #[test]
    fn literal_roundtrip_f32() {
        let v: f32 = lit(0.25);
        assert_eq!(v, 0.25);
        assert_eq!(to_f64(v), 0.25);
    }
}
