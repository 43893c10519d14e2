//! The deterministic equation `x' = x^2 - t x`.
//!
//! Its solution from `x(0) = x0` is
//! `x(t) = 2 x0 exp(-t^2/2) / (2 - x0 sqrt(2 pi) erf(t / sqrt 2))`.
//! Writing `x_c = sqrt(2/pi)` and dividing through by `exp(-t^2/2)` gives the
//! form used here,
//! `x(t) = x_c x0 / ((x_c - x0) exp(t^2/2) + x0 erfcx(t / sqrt 2))`,
//! which keeps every digit near the critical value where the original
//! denominator cancels down to `exp(-t^2/2)`.
//!
//! The equation is symmetric under `x -> -x, t -> -t`; only `t >= 0` is handled.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::special::erfcx;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    BlowsUp,
    Critical,
    ConvergesToZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DetValue<T> {
    Value(T),
    BlownUp,
}

impl<T: Real> DetValue<T> {
    pub fn value(self) -> Option<T> {
        match self {
            DetValue::Value(v) => Some(v),
            DetValue::BlownUp => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BlowupTime<T> {
    At(T),
    Never,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetSolution<T> {
    pub x0: T,
    pub regime: Regime,
}

impl<T: Real> DetSolution<T> {
    pub fn new(x0: T) -> Self {
        DetSolution { x0, regime: classify_deterministic(x0) }
    }

    pub fn at(&self, t: T) -> Result<DetValue<T>> {
        solve_deterministic(self.x0, t)
    }
}

/// Initial values closer than this to `x_c` use the critical branch.
pub const CRITICAL_BAND: f64 = 1e-12;

/// `sqrt(2/pi)`, the initial value of the critical solution.
pub fn critical_initial<T: Real>() -> T {
    T::FRAC_2_SQRT_PI() * T::FRAC_1_SQRT_2()
}

pub fn classify_deterministic<T: Real>(x0: T) -> Regime {
    let xc = critical_initial::<T>();
    if x0 > xc {
        Regime::BlowsUp
    } else if x0 < xc {
        Regime::ConvergesToZero
    } else {
        Regime::Critical
    }
}

/// The critical solution `x_c(t) = 1 / (sqrt(pi/2) erfcx(t / sqrt 2))`.
pub fn critical_solution<T: Real>(t: T) -> T {
    ((T::PI() * c(0.5)).sqrt() * erfcx(t * T::FRAC_1_SQRT_2())).recip()
}

pub fn solve_deterministic<T: Real>(x0: T, t: T) -> Result<DetValue<T>> {
    if !(t >= T::zero()) {
        return Err(Error::InvalidArgument(format!("time {t} must be nonnegative")));
    }
    let xc = critical_initial::<T>();
    if x0 == T::zero() {
        return Ok(DetValue::Value(T::zero()));
    }
    if (x0 - xc).abs() < c(CRITICAL_BAND) {
        return Ok(DetValue::Value(critical_solution(t)));
    }
    let den = (xc - x0) * (t * t * c(0.5)).exp() + x0 * erfcx(t * T::FRAC_1_SQRT_2());
    if den <= T::zero() {
        return Ok(DetValue::BlownUp);
    }
    Ok(DetValue::Value(xc * x0 / den))
}

/// Blow-up time: the root of `x0 erfc(t / sqrt 2) = x0 - x_c`, by bisection
/// to `1e-12` absolute.
pub fn blowup_time_deterministic<T: Real>(x0: T) -> BlowupTime<T> {
    let xc = critical_initial::<T>();
    if !(x0 > xc) {
        return BlowupTime::Never;
    }
    let g = |t: T| x0 * (t * T::FRAC_1_SQRT_2()).erfc() - (x0 - xc);
    let mut lo = T::zero();
    let mut hi = T::one();
    while g(hi) > T::zero() {
        lo = hi;
        hi = hi * c(2.0);
        if hi > c(1e3) {
            return BlowupTime::Never;
        }
    }
    let tol = c::<T>(1e-12).max(T::epsilon() * c(4.0) * hi);
    while hi - lo > tol {
        let mid = (lo + hi) * c(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    BlowupTime::At((lo + hi) * c(0.5))
}

/// Partial sums `t`, `t + 1/t`, `t + 1/t - 2/t^3` of the expansion of the
/// critical solution.
pub fn river_series<T: Real>(t: T, order: usize) -> Result<T> {
    if !(t > T::zero()) {
        return Err(Error::InvalidArgument(format!("river series needs t > 0, got {t}")));
    }
    match order {
        1 => Ok(t),
        2 => Ok(t + t.recip()),
        3 => Ok(t + t.recip() - c::<T>(2.0) / (t * t * t)),
        _ => Err(Error::InvalidArgument(format!("series order {order} not in 1..=3"))),
    }
}
