//! The linear equation `dX = (cX + f(t)) dt + sigma dW`, `c > 0`.
//!
//! `X(t, x) = e^{ct} (x + int_0^t e^{-cs} f(s) ds + sigma int_0^t e^{-cs} dW(s))`
//! and its repelling river is
//! `R(t) = -e^{ct} int_t^inf e^{-cs} f(s) ds - sigma A(t)` with the stationary
//! Ornstein-Uhlenbeck process `A(t) = e^{ct} int_t^inf e^{-cs} dW(s)`.
//! Improper integrals are cut at a finite horizon with a recorded tail bound.

use crate::error::{Error, Result};
use crate::paths::BrownianPath;
use crate::quadrature::{integrate, QuadOptions};
use crate::scalar::{c, Real};
use std::fmt;
use std::sync::Arc;

pub type Forcing<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

#[derive(Clone)]
pub struct LinearModel<T> {
    pub c: T,
    pub sigma: T,
    pub f: Forcing<T>,
}

impl<T: Real> fmt::Debug for LinearModel<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearModel").field("c", &self.c).field("sigma", &self.sigma).finish_non_exhaustive()
    }
}

impl<T: Real> LinearModel<T> {
    pub fn new(c: T, sigma: T, f: impl Fn(T) -> T + Send + Sync + 'static) -> Result<Self> {
        if !(c > T::zero()) {
            return Err(Error::InvalidArgument(format!("growth rate c = {c} must be positive")));
        }
        if !(sigma >= T::zero()) {
            return Err(Error::InvalidArgument(format!("sigma = {sigma} must be nonnegative")));
        }
        Ok(LinearModel { c, sigma, f: Arc::new(f) })
    }

    pub fn unforced(c: T, sigma: T) -> Result<Self> {
        Self::new(c, sigma, |_| T::zero())
    }

    /// `int_a^b e^{-c(s - a)} f(s) ds`.
    fn discounted_forcing(&self, a: T, b: T) -> Result<T> {
        let f = &self.f;
        let cc = self.c;
        Ok(integrate(|s| (-cc * (s - a)).exp() * f(s), a, b, QuadOptions::rel(c(1e-12)))?.value)
    }

    /// `sum_{a <= s_k < b} e^{-c (s_k - a)} (W(s_{k+1}) - W(s_k))`, left-point.
    fn discounted_noise(&self, path: &BrownianPath<T>, a: T, b: T) -> Result<T> {
        let (i, j) = (path.index_of(a)?, path.index_of(b)?);
        let decay = (-self.c * path.dt()).exp();
        // accumulate backward so each weight is a product of per-step factors
        let mut acc = T::zero();
        for k in (i..j).rev() {
            acc = acc * decay + (path.values[k + 1] - path.values[k]);
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncationPolicy<T> {
    /// length of the integration window beyond the evaluation time
    pub horizon: T,
    pub tail_tol: T,
}

impl<T: Real> TruncationPolicy<T> {
    pub fn new(horizon: T, tail_tol: T) -> Self {
        TruncationPolicy { horizon, tail_tol }
    }

    /// Shortest horizon with `e^{-c T} (F + sigma) <= tail_tol`, where F bounds |f|.
    pub fn for_model(model: &LinearModel<T>, f_bound: T, tail_tol: T) -> Self {
        let horizon = ((f_bound + model.sigma).max(T::epsilon()) / tail_tol).ln().max(T::zero()) / model.c;
        TruncationPolicy { horizon, tail_tol }
    }
}

/// A truncated improper integral together with its tail bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truncated<T> {
    pub value: T,
    pub tail_bound: T,
}

fn tail_bound<T: Real>(model: &LinearModel<T>, start: T, pol: &TruncationPolicy<T>) -> Result<T> {
    let end = start + pol.horizon;
    let span = c::<T>(20.0) / model.c;
    let sup = (0..=200)
        .map(|i| (model.f)(end + span * T::from_usize_(i) / c(200.0)).abs())
        .fold(T::zero(), T::max);
    let bound = (-model.c * pol.horizon).exp() * (sup + model.sigma);
    if bound > pol.tail_tol {
        return Err(Error::Truncation { bound: bound.f64(), tol: pol.tail_tol.f64() });
    }
    Ok(bound)
}

/// Explicit solution from `X(0) = x`; the path must start at time 0.
pub fn solve_linear<T: Real>(model: &LinearModel<T>, x: T, path: &BrownianPath<T>, t: T) -> Result<T> {
    if path.t0() != T::zero() {
        return Err(Error::InvalidArgument("the linear model is driven from time 0".into()));
    }
    path.covers(T::zero(), t)?;
    let ft = model.discounted_forcing(T::zero(), t)?;
    let wt = model.discounted_noise(path, T::zero(), t)?;
    Ok((model.c * t).exp() * (x + ft + model.sigma * wt))
}

/// `X(0)` of the river: `-int_0^T e^{-cs} f ds - sigma int_0^T e^{-cs} dW`.
pub fn linear_river_initial<T: Real>(
    model: &LinearModel<T>,
    path: &BrownianPath<T>,
    pol: &TruncationPolicy<T>,
) -> Result<Truncated<T>> {
    linear_river(model, path, pol, T::zero())
}

/// `R(t)` over the window `[t, t + horizon]`, in ratio form so nothing grows
/// like `e^{ct}`.
pub fn linear_river<T: Real>(
    model: &LinearModel<T>,
    path: &BrownianPath<T>,
    pol: &TruncationPolicy<T>,
    t: T,
) -> Result<Truncated<T>> {
    let i = path.index_of(t)?;
    let j = i + (pol.horizon / path.dt() - c(1e-9)).ceil().to_usize().unwrap_or(0);
    if j >= path.values.len() {
        path.covers(t, t + pol.horizon)?;
    }
    let end = path.time(j);
    let tail_bound = tail_bound(model, t, pol)?;
    let ft = model.discounted_forcing(t, t + pol.horizon)?;
    let a = model.discounted_noise(path, t, end)?;
    Ok(Truncated { value: -ft - model.sigma * a, tail_bound })
}

/// The stationary Ornstein-Uhlenbeck value `A(t)` (unit noise, truncated).
pub fn ou_value<T: Real>(model: &LinearModel<T>, path: &BrownianPath<T>, pol: &TruncationPolicy<T>, t: T) -> Result<T> {
    let unit = LinearModel { c: model.c, sigma: T::one(), f: Arc::new(|_| T::zero()) };
    Ok(-linear_river(&unit, path, pol, t)?.value)
}
