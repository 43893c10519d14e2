use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, ToPrimitive};
use std::fmt::{Debug, Display, LowerExp};

/// Floating point scalar used throughout the crate.
pub trait Real:
    'static
    + Send
    + Sync
    + Float
    + FloatConst
    + NumAssign
    + Default
    + FromPrimitive
    + ToPrimitive
    + Display
    + LowerExp
    + Debug
{
    fn erf(self) -> Self;
    fn erfc(self) -> Self;
    fn tgamma(self) -> Self;

    /// Lossless for every literal used in this crate when `Self = f64`.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).unwrap()
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }

    #[inline]
    fn from_usize_(n: usize) -> Self {
        Self::from_usize(n).unwrap()
    }
}

impl Real for f64 {
    fn erf(self) -> Self {
        libm::erf(self)
    }
    fn erfc(self) -> Self {
        libm::erfc(self)
    }
    fn tgamma(self) -> Self {
        libm::tgamma(self)
    }
}

impl Real for f32 {
    fn erf(self) -> Self {
        libm::erff(self)
    }
    fn erfc(self) -> Self {
        libm::erfcf(self)
    }
    fn tgamma(self) -> Self {
        libm::tgammaf(self)
    }
}

/// Shorthand for [`Real::lit`].
#[inline]
pub fn c<T: Real>(v: f64) -> T {
    T::lit(v)
}
