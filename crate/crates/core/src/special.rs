//! Normal distribution function and the scaled complementary error function.

use crate::scalar::{c, Real};

/// `exp(x^2) * erfc(x)`, accurate for large positive `x` where `erfc` underflows.
pub fn erfcx<T: Real>(x: T) -> T {
    if x < c(4.0) {
        return (x * x).exp() * x.erfc();
    }
    // erfc(x) e^{x^2} sqrt(pi) = 1 / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    let tiny = T::min_positive_value() * c(1e10);
    let eps = T::epsilon();
    let mut f = x;
    let mut cc = f;
    let mut d = T::zero();
    for n in 1..500 {
        let a = T::from_usize_(n) * c(0.5);
        d = x + a * d;
        if d.abs() < tiny {
            d = tiny;
        }
        d = d.recip();
        cc = x + a / cc;
        if cc.abs() < tiny {
            cc = tiny;
        }
        let delta = cc * d;
        f *= delta;
        if (delta - T::one()).abs() < eps {
            break;
        }
    }
    (f * T::PI().sqrt()).recip()
}

/// Standard normal distribution function.
pub fn phi<T: Real>(z: T) -> T {
    c::<T>(0.5) * (-z * T::FRAC_1_SQRT_2()).erfc()
}

/// Upper tail `1 - phi(z)`.
pub fn phi_upper<T: Real>(z: T) -> T {
    c::<T>(0.5) * (z * T::FRAC_1_SQRT_2()).erfc()
}

/// Mills ratio `exp(t^2/2) * int_t^inf exp(-u^2/2) du`.
pub fn mills_ratio<T: Real>(t: T) -> T {
    (T::PI() * c(0.5)).sqrt() * erfcx(t * T::FRAC_1_SQRT_2())
}

/// `(phi(x) - phi(a)) / (phi(b) - phi(a))` for `a <= x <= b`, without
/// cancellation when the whole interval sits in one tail.
pub fn normal_ratio<T: Real>(a: T, x: T, b: T) -> T {
    if a >= T::zero() {
        // upper-tail values scaled by exp(a^2/2)
        let q = |y: T| erfcx(y * T::FRAC_1_SQRT_2()) * (-(y * y - a * a) * c(0.5)).exp();
        let qa = q(a);
        (qa - q(x)) / (qa - q(b))
    } else if b <= T::zero() {
        T::one() - normal_ratio(-b, -x, -a)
    } else {
        let num = if x <= T::zero() {
            phi(x) - phi(a)
        } else {
            phi_upper(a) - phi_upper(x)
        };
        num / (phi_upper(a) - phi_upper(b))
    }
}
