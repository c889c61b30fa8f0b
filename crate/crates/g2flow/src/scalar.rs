//! Dual scalar kinds: exact rationals for identity verification, `f64` for flow
//! integration. Everything downstream is generic over [`Scalar`] so the same
//! formulas run in both kinds.

use num::bigint::BigInt;
use num::rational::BigRational;
use num::{One, Signed, Zero};
use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Which arithmetic a scalar kind performs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarKind {
    /// Arbitrary-precision rational; all operations are exact.
    ExactRational,
    /// IEEE double precision.
    Float64,
}

/// Scalar field used by the tensor engine.
///
/// `sqrt`/`nth_root` return `None` when the result does not exist in the kind
/// (negative input, or a rational that is not a perfect power).
pub trait Scalar:
    Clone
    + PartialEq
    + PartialOrd
    + Debug
    + Send
    + Sync
    + 'static
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    const KIND: ScalarKind;

    fn from_i64(n: i64) -> Self;
    fn from_ratio(num: i64, den: i64) -> Self;
    /// Exact embedding of an `f64` (every finite double is rational).
    fn from_f64(x: f64) -> Self;
    fn to_f64(&self) -> f64;
    fn abs(&self) -> Self;
    fn sqrt(&self) -> Option<Self>;
    fn nth_root(&self, n: u32) -> Option<Self>;

    fn recip(&self) -> Self {
        Self::one() / self.clone()
    }
    fn is_negative(&self) -> bool {
        *self < Self::zero()
    }
    fn is_positive(&self) -> bool {
        *self > Self::zero()
    }
}

impl Scalar for f64 {
    const KIND: ScalarKind = ScalarKind::Float64;

    fn from_i64(n: i64) -> Self {
        n as f64
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        num as f64 / den as f64
    }
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(&self) -> f64 {
        *self
    }
    fn abs(&self) -> Self {
        f64::abs(*self)
    }
    fn sqrt(&self) -> Option<Self> {
        (*self >= 0.0).then(|| f64::sqrt(*self))
    }
    fn nth_root(&self, n: u32) -> Option<Self> {
        if *self >= 0.0 {
            Some(self.powf(1.0 / n as f64))
        } else if n % 2 == 1 {
            Some(-(-self).powf(1.0 / n as f64))
        } else {
            None
        }
    }
}

/// Exact rational scalar.
pub type Exact = BigRational;

fn bigint_nth_root_exact(x: &BigInt, n: u32) -> Option<BigInt> {
    if x.is_negative() {
        if n % 2 == 0 {
            return None;
        }
        return bigint_nth_root_exact(&-x, n).map(|r| -r);
    }
    let r = x.nth_root(n);
    (num::pow::pow(r.clone(), n as usize) == *x).then_some(r)
}

impl Scalar for Exact {
    const KIND: ScalarKind = ScalarKind::ExactRational;

    fn from_i64(n: i64) -> Self {
        BigRational::from_integer(BigInt::from(n))
    }
    fn from_ratio(num: i64, den: i64) -> Self {
        BigRational::new(BigInt::from(num), BigInt::from(den))
    }
    fn from_f64(x: f64) -> Self {
        BigRational::from_float(x).expect("finite float")
    }
    fn to_f64(&self) -> f64 {
        let n = self.numer();
        let d = self.denom();
        // Ratio of big integers; go through string-free conversion with scaling
        // to stay accurate for moderate magnitudes.
        num_to_f64(n) / num_to_f64(d)
    }
    fn abs(&self) -> Self {
        Signed::abs(self)
    }
    fn sqrt(&self) -> Option<Self> {
        self.nth_root(2)
    }
    fn nth_root(&self, n: u32) -> Option<Self> {
        let rn = bigint_nth_root_exact(self.numer(), n)?;
        let rd = bigint_nth_root_exact(self.denom(), n)?;
        Some(BigRational::new(rn, rd))
    }
}

fn num_to_f64(x: &BigInt) -> f64 {
    use num::ToPrimitive;
    x.to_f64().unwrap_or(f64::NAN)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_roots() {
        let x = Exact::from_ratio(8, 27);
        assert_eq!(x.nth_root(3), Some(Exact::from_ratio(2, 3)));
        assert_eq!(Exact::from_i64(2).sqrt(), None);
        assert_eq!(Exact::from_i64(-8).nth_root(3), Some(Exact::from_i64(-2)));
        assert_eq!(Exact::from_i64(-4).sqrt(), None);
    }

    #[test]
    fn float_embeds_exactly() {
        let x = Exact::from_f64(0.1);
        // 0.1 is not 1/10 in binary; the embedding is the exact dyadic value
        assert_eq!(x.to_f64(), 0.1);
        assert_ne!(x, Exact::from_ratio(1, 10));
    }

    #[test]
    fn exact_ratio_arithmetic() {
        let a = Exact::from_ratio(1, 3);
        let b = Exact::from_ratio(1, 6);
        assert_eq!(a + b, Exact::from_ratio(1, 2));
    }
}
