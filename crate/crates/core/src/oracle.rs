//! Reference integrator for scalar ODEs `y' = f(t, y)`.
//!
//! Dormand-Prince 5(4) with standard step-size control. It shares no code
//! with the closed forms and is used to check them.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

pub struct Dp45<T, F> {
    f: F,
    pub t: T,
    pub y: T,
    h: T,
    rtol: T,
    atol: T,
    pub steps: usize,
}

impl<T: Real, F: FnMut(T, T) -> T> Dp45<T, F> {
    pub fn new(f: F, t0: T, y0: T, tol: T) -> Self {
        Self::with_tolerances(f, t0, y0, tol, tol)
    }

    pub fn with_tolerances(f: F, t0: T, y0: T, rtol: T, atol: T) -> Self {
        Dp45 { f, t: t0, y: y0, h: c(1e-3), rtol, atol, steps: 0 }
    }

    /// Advances exactly to `target >= t`.
    pub fn advance_to(&mut self, target: T) -> Result<T> {
        let f = &mut self.f;
        while self.t < target {
            if self.steps > 10_000_000 {
                return Err(Error::Quadrature("reference integrator step limit".into()));
            }
            let h = self.h.min(target - self.t);
            let (t, y) = (self.t, self.y);
            let k1 = f(t, y);
            let k2 = f(t + h * c(0.2), y + h * c::<T>(A21) * k1);
            let k3 = f(t + h * c(0.3), y + h * (c::<T>(A31) * k1 + c::<T>(A32) * k2));
            let k4 = f(t + h * c(0.8), y + h * (c::<T>(A41) * k1 + c::<T>(A42) * k2 + c::<T>(A43) * k3));
            let k5 = f(
                t + h * c(8.0 / 9.0),
                y + h * (c::<T>(A51) * k1 + c::<T>(A52) * k2 + c::<T>(A53) * k3 + c::<T>(A54) * k4),
            );
            let k6 = f(
                t + h,
                y + h * (c::<T>(A61) * k1 + c::<T>(A62) * k2 + c::<T>(A63) * k3 + c::<T>(A64) * k4 + c::<T>(A65) * k5),
            );
            let y5 = y + h * (c::<T>(B1) * k1 + c::<T>(B3) * k3 + c::<T>(B4) * k4 + c::<T>(B5) * k5 + c::<T>(B6) * k6);
            let k7 = f(t + h, y5);
            let err = (h
                * (c::<T>(E1) * k1 + c::<T>(E3) * k3 + c::<T>(E4) * k4 + c::<T>(E5) * k5 + c::<T>(E6) * k6 + c::<T>(E7) * k7))
                .abs();
            let scale = self.atol + self.rtol * y.abs().max(y5.abs());
            let ratio = err / scale;
            if !y5.is_finite() {
                self.h = h * c(0.25);
                continue;
            }
            if ratio <= T::one() {
                self.t = if h == target - t { target } else { t + h };
                self.y = y5;
                self.steps += 1;
            }
            let fac = if ratio == T::zero() {
                c(5.0)
            } else {
                (c::<T>(0.9) * ratio.powf(c(-0.2))).min(c(5.0)).max(c(0.2))
            };
            self.h = h * fac;
            if self.h < T::epsilon() * (T::one() + self.t.abs()) {
                return Err(Error::Quadrature(format!("reference integrator step underflow at t = {}", self.t)));
            }
        }
        Ok(self.y)
    }
}

/// Solves `y' = f(t, y)`, `y(t0) = y0` and returns `y` at each of the increasing `ts`.
pub fn solve_at<T: Real, F: FnMut(T, T) -> T>(f: F, t0: T, y0: T, ts: &[T], tol: T) -> Result<Vec<T>> {
    let mut s = Dp45::new(f, t0, y0, tol);
    ts.iter().map(|&t| s.advance_to(t)).collect()
}
