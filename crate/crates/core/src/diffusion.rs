//! Scale functions, speed measures, exit probabilities, expected exit times
//! and Feller's test for the autonomous diffusion `dZ = b(Z) dt + sigma dW`.
//!
//! With `kappa = 2 / sigma^2` and `B' = b` the scale density is
//! `p'(x) = exp(-kappa (B(x) - B(c)))` and the speed density is
//! `m(x) = kappa / p'(x)`. Every integral below is written with the
//! exponent referenced to a nearby point so that nothing overflows before
//! it has to.

use crate::error::{Error, Result};
use crate::quadrature::{gk21, integrate, march, March, MarchOptions, QuadOptions};
use crate::scalar::{c, Real};
use crate::special::normal_ratio;
use std::fmt;
use std::sync::{Arc, Mutex};

type Fun<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Drift `b` with an optional exact antiderivative.
#[derive(Clone)]
pub struct Drift<T> {
    pub label: String,
    b: Fun<T>,
    potential: Option<Fun<T>>,
}

impl<T> fmt::Debug for Drift<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Drift({})", self.label)
    }
}

impl<T: Real> Drift<T> {
    pub fn new(label: impl Into<String>, b: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        Drift { label: label.into(), b: Arc::new(b), potential: None }
    }

    /// Attaches an antiderivative of `b`; it is trusted, not checked.
    pub fn with_potential(mut self, potential: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        self.potential = Some(Arc::new(potential));
        self
    }

    pub fn has_potential(&self) -> bool {
        self.potential.is_some()
    }

    #[inline]
    pub fn eval(&self, u: T) -> T {
        (self.b)(u)
    }

    /// `int_x^y b(u) du`.
    pub fn potential_diff(&self, x: T, y: T) -> T {
        self.potential_step(x, y - x)
    }

    /// `int_x^{x+h} b(u) du`. Short steps use one Kronrod panel in the
    /// offset variable, which is exact for polynomial drifts and keeps steps
    /// far below the spacing of floats near `x`.
    pub fn potential_step(&self, x: T, h: T) -> T {
        if h == T::zero() {
            return T::zero();
        }
        if h.abs() <= T::one() {
            return gk21(&mut |t| (self.b)(x + t), T::zero(), h).0;
        }
        if let Some(p) = &self.potential {
            return p(x + h) - p(x);
        }
        let sign = if h > T::zero() { T::one() } else { -T::one() };
        let opts = QuadOptions { abs_tol: c(1e-15), rel_tol: c(1e-13), max_panels: 200 };
        match integrate(|t| (self.b)(x + sign * t), T::zero(), h.abs(), opts) {
            Ok(r) => sign * r.value,
            Err(_) => T::nan(),
        }
    }

    pub fn zero() -> Self {
        Drift::new("0", |_| T::zero()).with_potential(|_| T::zero())
    }

    /// `b(u) = s u + a`.
    pub fn affine(s: T, a: T) -> Self {
        Drift::new(format!("{s}*u + {a}"), move |u| s * u + a)
            .with_potential(move |u| s * u * u * c(0.5) + a * u)
    }

    /// Ornstein-Uhlenbeck restoring drift `b(u) = -k u`.
    pub fn ou(k: T) -> Self {
        Drift::new(format!("-{k}*u"), move |u| -k * u).with_potential(move |u| -k * u * u * c(0.5))
    }

    /// `b(u) = u (u - s)`, the quadratic drift frozen at time `s`.
    pub fn frozen_quadratic(s: T) -> Self {
        Drift::new(format!("u*(u - {s})"), move |u| u * (u - s))
            .with_potential(move |u| u * u * u / c(3.0) - s * u * u * c(0.5))
    }

    /// `b(u) = u (u + s) - 1`, the autonomous lower comparison for the
    /// process measured from the diagonal.
    pub fn diagonal_comparison(s: T) -> Self {
        Drift::new(format!("u*(u + {s}) - 1"), move |u| u * (u + s) - T::one())
            .with_potential(move |u| u * u * u / c(3.0) + s * u * u * c(0.5) - u)
    }

    /// `b(u) = u^2`.
    pub fn square() -> Self {
        Drift::new("u^2", |u: T| u * u).with_potential(|u: T| u * u * u / c(3.0))
    }

    /// Largest finite-difference slope of `b` over `n` points of `[l, r]`.
    /// Errors if `b` is not finite there.
    pub fn check_lipschitz(&self, l: T, r: T, n: usize) -> Result<T> {
        if !(l < r) || !l.is_finite() || !r.is_finite() || n < 2 {
            return Err(Error::InvalidArgument(format!("lipschitz check on [{l}, {r}] with {n} points")));
        }
        let mut worst = T::zero();
        for i in 0..n {
            let u = l + (r - l) * T::from_usize_(i) / T::from_usize_(n - 1);
            let h = c::<T>(1e-6) * (T::one() + u.abs());
            let slope = ((self.eval(u + h) - self.eval(u - h)) / (h + h)).abs();
            if !slope.is_finite() || !self.eval(u).is_finite() {
                return Err(Error::InvalidArgument(format!("drift {} not finite near {u}", self.label)));
            }
            worst = worst.max(slope);
        }
        Ok(worst)
    }
}

fn kappa<T: Real>(sigma: T) -> Result<T> {
    if !(sigma > T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    Ok(c::<T>(2.0) / (sigma * sigma))
}

fn march_opts<T: Real>(first: T, rel: f64) -> MarchOptions<T> {
    MarchOptions { first, quad: QuadOptions::rel(c(rel)), ..Default::default() }
}

/// Natural first segment length at `y`: the scale on which the exponent
/// `kappa (B(.) - B(y))` changes by one.
fn first_len<T: Real>(drift: &Drift<T>, kap: T, y: T) -> T {
    let b = drift.eval(y).abs();
    if b.is_finite() {
        T::one() / (T::one() + kap * b)
    } else {
        c(1e-6)
    }
}

/// `int_y^end exp(shift + sign kappa (B(xi) - B(y))) dxi`, unsigned,
/// integrated in the offset `|xi - y|`.
fn offset_integral<T: Real>(drift: &Drift<T>, kap: T, sign: T, y: T, end: T, shift: T, rel: f64) -> March<T> {
    let dir = if end >= y { T::one() } else { -T::one() };
    let len = (end - y).abs();
    march(
        |h| (shift + sign * kap * drift.potential_step(y, dir * h)).exp(),
        T::zero(),
        len,
        march_opts(first_len(drift, kap, y), rel),
    )
}

/// Scale weight `int_y^end exp(shift - kappa (B(xi) - B(y))) dxi`.
fn weight_integral<T: Real>(drift: &Drift<T>, kap: T, y: T, end: T, shift: T, rel: f64) -> March<T> {
    offset_integral(drift, kap, -T::one(), y, end, shift, rel)
}

/// Speed weight `int_y^end exp(kappa (B(xi) - B(y))) dxi`.
fn speed_integral<T: Real>(drift: &Drift<T>, kap: T, y: T, end: T, rel: f64) -> March<T> {
    offset_integral(drift, kap, T::one(), y, end, T::zero(), rel)
}

fn certified<T: Real>(m: March<T>, what: &str) -> Result<Option<T>> {
    match m {
        March::Finite(v) => Ok(Some(v)),
        March::Divergent => Ok(None),
        March::Indeterminate(v) => {
            Err(Error::Indeterminate(format!("{what}: partial sum {v:e} neither converged nor diverged")))
        }
    }
}

/// Scale function `p(x) = int_c^x p'(xi) dxi`. Divergent values at infinite
/// `x` are returned as `+-inf`.
pub fn scale<T: Real>(drift: &Drift<T>, sigma: T, anchor: T, x: T) -> Result<T> {
    let kap = kappa(sigma)?;
    if !anchor.is_finite() {
        return Err(Error::InvalidArgument("scale anchor must be finite".into()));
    }
    if x == anchor {
        return Ok(T::zero());
    }
    let sign = if x > anchor { T::one() } else { -T::one() };
    let m = weight_integral(drift, kap, anchor, x, T::zero(), 1e-11);
    Ok(match certified(m, "scale function")? {
        Some(v) => sign * v,
        None => sign * T::infinity(),
    })
}

/// Scale function with a fixed anchor. Values at finite points are kept in
/// a table of exact nodes; a new value is integrated from the nearest node.
pub struct ScaleFunction<T> {
    pub drift: Drift<T>,
    pub sigma: T,
    pub anchor: T,
    kappa: T,
    cache: Mutex<Vec<(T, T)>>,
}

impl<T: Real> ScaleFunction<T> {
    pub fn new(drift: Drift<T>, sigma: T, anchor: T) -> Result<Self> {
        let kap = kappa(sigma)?;
        if !anchor.is_finite() {
            return Err(Error::InvalidArgument("scale anchor must be finite".into()));
        }
        Ok(ScaleFunction { drift, sigma, anchor, kappa: kap, cache: Mutex::new(vec![(anchor, T::zero())]) })
    }

    /// `p'(x)`.
    pub fn derivative(&self, x: T) -> T {
        (-self.kappa * self.drift.potential_diff(self.anchor, x)).exp()
    }

    /// Speed density `2 / (sigma^2 p'(x))`.
    pub fn speed_density(&self, x: T) -> T {
        self.kappa / self.derivative(x)
    }

    pub fn value(&self, x: T) -> Result<T> {
        if !x.is_finite() {
            return scale(&self.drift, self.sigma, self.anchor, x);
        }
        let (xk, pk) = {
            let table = self.cache.lock().unwrap();
            match table.binary_search_by(|e| e.0.partial_cmp(&x).unwrap()) {
                Ok(i) => return Ok(table[i].1),
                Err(i) => {
                    let mut best = table[0];
                    for j in [i.saturating_sub(1), i.min(table.len() - 1)] {
                        if (table[j].0 - x).abs() < (best.0 - x).abs() {
                            best = table[j];
                        }
                    }
                    best
                }
            }
        };
        let sign = if x > xk { T::one() } else { -T::one() };
        let lead = -self.kappa * self.drift.potential_diff(self.anchor, xk);
        let m = weight_integral(&self.drift, self.kappa, xk, x, lead, 1e-12);
        let v = match certified(m, "scale function")? {
            Some(v) => pk + sign * v,
            None => sign * T::infinity(),
        };
        if v.is_finite() {
            let mut table = self.cache.lock().unwrap();
            if let Err(i) = table.binary_search_by(|e| e.0.partial_cmp(&x).unwrap()) {
                table.insert(i, (x, v));
            }
        }
        Ok(v)
    }

    pub fn cached_nodes(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// `(p(x) - p(l)) / (p(r) - p(l))` from table values.
    pub fn exit_prob(&self, l: T, r: T, x: T) -> Result<T> {
        check_interval(l, r, x)?;
        let (pl, pr, px) = (self.value(l)?, self.value(r)?, self.value(x)?);
        match (pl.is_finite(), pr.is_finite()) {
            (false, false) => Err(Error::InfiniteScale),
            (false, true) => Ok(T::one()),
            (true, false) => Ok(T::zero()),
            (true, true) => Ok(((px - pl) / (pr - pl)).max(T::zero()).min(T::one())),
        }
    }
}

fn check_interval<T: Real>(l: T, r: T, x: T) -> Result<()> {
    if !(l < r) || !(l <= x && x <= r) || x.is_nan() {
        return Err(Error::InvalidArgument(format!("need l <= x <= r with l < r, got ({l}, {x}, {r})")));
    }
    Ok(())
}

/// Scale increments on both sides of `x`, scaled by a common factor:
/// `(int_l^x, int_x^r)` of `exp(-kappa (B(xi) - B(x)) + shift)`. `None`
/// marks a divergent side.
fn sides<T: Real>(drift: &Drift<T>, kap: T, l: T, r: T, x: T) -> Result<(Option<T>, Option<T>)> {
    // on a finite interval shift by the smallest exponent seen on a grid
    let mut shift = T::zero();
    if l.is_finite() && r.is_finite() {
        for i in 0..=64 {
            let xi = l + (r - l) * T::from_usize_(i) / c(64.0);
            let e = kap * drift.potential_diff(x, xi);
            if e.is_finite() {
                shift = shift.min(e);
            }
        }
    }
    let left = certified(weight_integral(drift, kap, x, l, shift, 1e-11), "left scale increment")?;
    let right = certified(weight_integral(drift, kap, x, r, shift, 1e-11), "right scale increment")?;
    Ok((left, right))
}

/// Probability of leaving `(l, r)` through `r`, started at `x`.
pub fn exit_prob<T: Real>(drift: &Drift<T>, sigma: T, l: T, r: T, x: T) -> Result<T> {
    let kap = kappa(sigma)?;
    check_interval(l, r, x)?;
    if x == r {
        return Ok(T::one());
    }
    if x == l {
        return Ok(T::zero());
    }
    match sides(drift, kap, l, r, x)? {
        (None, None) => Err(Error::InfiniteScale),
        (None, Some(_)) => Ok(T::one()),
        (Some(_), None) => Ok(T::zero()),
        (Some(a), Some(b)) => Ok(a / (a + b)),
    }
}

/// Probability of leaving `(l, r)` through `l`. Computed directly rather
/// than as `1 - exit_prob`, so tiny values keep their digits.
pub fn exit_prob_left<T: Real>(drift: &Drift<T>, sigma: T, l: T, r: T, x: T) -> Result<T> {
    let kap = kappa(sigma)?;
    check_interval(l, r, x)?;
    if x == r {
        return Ok(T::zero());
    }
    if x == l {
        return Ok(T::one());
    }
    match sides(drift, kap, l, r, x)? {
        (None, None) => Err(Error::InfiniteScale),
        (None, Some(_)) => Ok(T::zero()),
        (Some(_), None) => Ok(T::one()),
        (Some(a), Some(b)) => Ok(b / (a + b)),
    }
}

/// Exit probability through `1` of `[-1, 1]` for the drift `s u + a`,
/// in closed form through the normal distribution function.
pub fn affine_exit_prob<T: Real>(s: T, a: T, sigma: T, x: T) -> Result<T> {
    if !(s > T::zero()) || !(sigma > T::zero()) {
        return Err(Error::InvalidArgument(format!("need s > 0 and sigma > 0, got s = {s}, sigma = {sigma}")));
    }
    if !(x.abs() <= T::one()) {
        return Err(Error::InvalidArgument(format!("x = {x} outside [-1, 1]")));
    }
    let root = (c::<T>(2.0) * s).sqrt();
    let off = c::<T>(2.0) * a / (sigma * root);
    let lo = -root / sigma + off;
    let hi = root / sigma + off;
    let at = root * x / sigma + off;
    Ok(normal_ratio(lo, at, hi).max(T::zero()).min(T::one()))
}

fn outer<T: Real, F: FnMut(T) -> T>(f: F, from: T, end: T, what: &str) -> Result<T> {
    match certified(march(f, from, end, march_opts(T::one(), 1e-9)), what)? {
        Some(v) => Ok(v),
        None => Err(Error::Quadrature(format!("{what} diverges"))),
    }
}

fn inner<T: Real>(drift: &Drift<T>, kap: T, y: T, end: T) -> T {
    match weight_integral(drift, kap, y, end, T::zero(), 1e-11) {
        March::Finite(v) => v,
        _ => T::infinity(),
    }
}

/// Expected exit time from `(l, r)` started at `x`, from the Green's
/// function of the generator against the speed measure.
///
/// An infinite end with infinite scale is handled by the limiting form of
/// the Green's function. `x = l = -inf` (or `x = r = +inf`) is read as an
/// entrance from that end, giving `kappa int_l^r (p(r) - p(y)) p'(y)^{-1} dy`.
pub fn expected_exit_time<T: Real>(drift: &Drift<T>, sigma: T, l: T, r: T, x: T) -> Result<T> {
    let kap = kappa(sigma)?;
    check_interval(l, r, x)?;
    if x.is_infinite() {
        // entrance from an infinite end: only the far side contributes
        let v = if x < T::zero() {
            outer(|y| inner(drift, kap, y, r), r, l, "entrance speed integral")?
        } else {
            outer(|y| inner(drift, kap, y, l), l, r, "entrance speed integral")?
        };
        return Ok(kap * v);
    }
    if x == l || x == r {
        return Ok(T::zero());
    }
    let lx = certified(weight_integral(drift, kap, x, l, T::zero(), 1e-11), "left scale increment")?;
    let rx = certified(weight_integral(drift, kap, x, r, T::zero(), 1e-11), "right scale increment")?;
    let left_green = |drift: &Drift<T>| outer(|y| inner(drift, kap, y, l), x, l, "left speed integral");
    let right_green = |drift: &Drift<T>| outer(|y| inner(drift, kap, y, r), x, r, "right speed integral");
    let e = match (lx, rx) {
        (None, None) => return Err(Error::InfiniteScale),
        (Some(_), Some(_)) => {
            let pr = exit_prob(drift, sigma, l, r, x)?;
            let pl = exit_prob_left(drift, sigma, l, r, x)?;
            let a = if pl > T::zero() { pl * left_green(drift)? } else { T::zero() };
            let b = if pr > T::zero() { pr * right_green(drift)? } else { T::zero() };
            a + b
        }
        (None, Some(rx)) => {
            let w = certified(speed_integral(drift, kap, x, l, 1e-10), "left speed integral")?
                .ok_or_else(|| Error::Quadrature("left speed integral diverges".into()))?;
            rx * w + right_green(drift)?
        }
        (Some(lx), None) => {
            let w = certified(speed_integral(drift, kap, x, r, 1e-10), "right speed integral")?
                .ok_or_else(|| Error::Quadrature("right speed integral diverges".into()))?;
            lx * w + left_green(drift)?
        }
    };
    Ok(kap * e)
}

/// Result of Feller's test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Explosion {
    NoExplosion,
    ExplodesToPlusInfinity,
    ExplodesToMinusInfinity,
    BothPossible,
}

impl fmt::Display for Explosion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Explosion::NoExplosion => "NoExplosion",
            Explosion::ExplodesToPlusInfinity => "ExplodesToPlusInfinity",
            Explosion::ExplodesToMinusInfinity => "ExplodesToMinusInfinity",
            Explosion::BothPossible => "BothPossible",
        };
        f.write_str(s)
    }
}

/// Feller's test toward both ends. `v_l`, `v_r` are `+inf` when divergent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryClassification<T> {
    pub kind: Explosion,
    pub v_l: T,
    pub v_r: T,
    pub anchor: T,
}

/// `v(end) = int_c^end (p(end) - p(y)) m(dy)`, evaluated in the order
/// `int_c^end kappa int_c^xi exp(kappa (B(y) - B(xi))) dy dxi`.
fn feller_v<T: Real>(drift: &Drift<T>, kap: T, anchor: T, end: T) -> Result<T> {
    let f = |xi: T| match speed_integral(drift, kap, xi, anchor, 1e-10) {
        March::Finite(v) => kap * v,
        _ => T::infinity(),
    };
    let m = march(f, anchor, end, march_opts(T::one(), 1e-9));
    Ok(certified(m, "Feller integral")?.unwrap_or(T::infinity()))
}

pub fn feller_classify<T: Real>(drift: &Drift<T>, sigma: T, l: T, r: T) -> Result<BoundaryClassification<T>> {
    let kap = kappa(sigma)?;
    if !(l < r) {
        return Err(Error::InvalidArgument(format!("need l < r, got ({l}, {r})")));
    }
    let anchor = match (l.is_finite(), r.is_finite()) {
        (true, true) => (l + r) * c(0.5),
        (true, false) => (l + T::one()).max(T::zero()),
        (false, true) => (r - T::one()).min(T::zero()),
        (false, false) => T::zero(),
    };
    let v_l = feller_v(drift, kap, anchor, l)?;
    let v_r = feller_v(drift, kap, anchor, r)?;
    let kind = match (v_l.is_finite(), v_r.is_finite()) {
        (false, false) => Explosion::NoExplosion,
        (false, true) => Explosion::ExplodesToPlusInfinity,
        (true, false) => Explosion::ExplodesToMinusInfinity,
        (true, true) => Explosion::BothPossible,
    };
    Ok(BoundaryClassification { kind, v_l, v_r, anchor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::autonomous_exit;
    use crate::special::phi;
    use proptest::prelude::*;
    use rayon::prelude::*;

    const INF: f64 = f64::INFINITY;

    fn drifts() -> Vec<(Drift<f64>, f64, f64)> {
        // drift with a domain on which p' stays within a few decades
        vec![
            (Drift::zero(), -5.0, 5.0),
            (Drift::affine(10.0, 3.0), -1.0, 1.0),
            (Drift::ou(1.0), -3.0, 3.0),
            (Drift::square(), -2.0, 2.0),
            (Drift::frozen_quadratic(10.0), -1.0, 1.0),
            (Drift::diagonal_comparison(25.0), -0.5, 0.5),
        ]
    }

    #[test]
    fn zero_drift_scale_is_identity() {
        for x in [-3.0, -0.5, 0.0, 0.25, 7.0] {
            assert!((scale(&Drift::<f64>::zero(), 1.0, 0.0, x).unwrap() - x).abs() < 1e-12);
        }
        assert_eq!(scale(&Drift::zero(), 1.0, 0.0, INF).unwrap(), INF);
        assert_eq!(scale(&Drift::zero(), 1.0, 0.0, -INF).unwrap(), -INF);
    }

    #[test]
    fn cubic_scale_at_infinity() {
        let oracle = 1.5f64.powf(1.0 / 3.0) * libm::tgamma(4.0 / 3.0);
        let p = scale(&Drift::square(), 1.0, 0.0, INF).unwrap();
        assert!((p - oracle).abs() < 1e-8, "{p} vs {oracle}");
        assert!((p - 1.0222).abs() < 1e-4);
        assert_eq!(scale(&Drift::square(), 1.0, 0.0, -INF).unwrap(), -INF);
        let p = scale(&Drift::diagonal_comparison(25.0), 1.0, 0.0, INF).unwrap();
        assert!(p.is_finite() && p > 0.0);
    }

    #[test]
    fn numeric_potential_matches_exact() {
        let exact = Drift::frozen_quadratic(3.0);
        let numeric = Drift::new("num", |u: f64| u * (u - 3.0));
        for (a, b) in [(0.0, 2.5), (-1.0, 4.0), (2.0, -7.0)] {
            let d = exact.potential_diff(a, b) - numeric.potential_diff(a, b);
            assert!(d.abs() < 1e-12 * (1.0 + exact.potential_diff(a, b).abs()));
        }
        let p = exit_prob(&numeric, 1.0, 0.0, 3.0, 2.0).unwrap();
        let q = exit_prob(&exact, 1.0, 0.0, 3.0, 2.0).unwrap();
        assert!((p - q).abs() < 1e-10);
    }

    #[test]
    fn symmetric_exits() {
        assert!((exit_prob(&Drift::<f64>::zero(), 1.0, -1.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((exit_prob(&Drift::affine(7.0f64, 0.0), 1.0, -1.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((exit_prob(&Drift::<f64>::zero(), 1.0, -1.0, 3.0, 0.0).unwrap() - 0.25).abs() < 1e-13);
        assert_eq!(exit_prob(&Drift::zero(), 1.0, -1.0, 1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(exit_prob(&Drift::zero(), 1.0, -INF, INF, 0.0), Err(Error::InfiniteScale)));
        // p(-inf) = -inf: certain exit through the right end
        assert_eq!(exit_prob(&Drift::square(), 1.0, -INF, 0.0, -3.0).unwrap(), 1.0);
        assert!(exit_prob(&Drift::zero(), 1.0, 1.0, -1.0, 0.0).is_err());
        assert!(exit_prob(&Drift::zero(), 0.0, -1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn affine_closed_form_examples() {
        assert!((affine_exit_prob(25.0f64, 0.0, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let p = affine_exit_prob(25.0, 0.0, 1.0, 1.0 / 50f64.sqrt()).unwrap();
        assert!((p - 0.8413).abs() < 1e-3);
        assert!(affine_exit_prob(25.0, 0.0, 1.0, 1.5).is_err());
        // numerically integrated potential against the closed form
        let d = Drift::new("affine", |u: f64| 4.0 * u - 1.5);
        let q = exit_prob(&d, 0.8, -1.0, 1.0, 0.3).unwrap();
        assert!((q - affine_exit_prob(4.0, -1.5, 0.8, 0.3).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn table_reuse_and_speed_density() {
        let sf = ScaleFunction::new(Drift::square(), 1.0, 0.0).unwrap();
        let a = sf.value(1.5).unwrap();
        let b = sf.value(1.7).unwrap();
        assert!(sf.cached_nodes() == 3);
        let direct = scale(&Drift::square(), 1.0, 0.0, 1.7).unwrap();
        assert!((b - direct as f64).abs() < 1e-12 && a < b);
        assert!((sf.speed_density(1.0f64) * sf.derivative(1.0) - 2.0).abs() < 1e-14);
    }

    #[test]
    fn brownian_exit_times() {
        let z = Drift::<f64>::zero();
        assert!((expected_exit_time(&z, 1.0, -1.0, 1.0, 0.0).unwrap() - 1.0).abs() < 1e-8);
        assert_eq!(expected_exit_time(&z, 1.0, -1.0, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(expected_exit_time(&z, 1.0, -1.0, 1.0, -1.0).unwrap(), 0.0);
        let e = expected_exit_time(&z, 0.5, -1.0, 2.0, 0.5).unwrap();
        assert!((e - 1.5 * 1.5 / 0.25).abs() < 1e-8 * 9.0);
    }

    #[test]
    fn constant_drift_exit_time_by_optional_stopping() {
        // Z - mu t is a martingale: mu E[tau] = l + (r - l) P_r - x
        let (mu, sigma, l, r) = (0.7f64, 1.3f64, -0.5f64, 2.0f64);
        let d = Drift::new("mu", move |_| mu).with_potential(move |u| mu * u);
        for x in [-0.2, 0.4, 1.9] {
            let k = 2.0 * mu / (sigma * sigma);
            let pr = (1.0 - (-k * (x - l)).exp()) / (1.0 - (-k * (r - l)).exp());
            let oracle = (l + (r - l) * pr - x) / mu;
            let e = expected_exit_time(&d, sigma, l, r, x).unwrap();
            assert!((e / oracle - 1.0).abs() < 1e-8, "{e} vs {oracle}");
            assert!((exit_prob(&d, sigma, l, r, x).unwrap() - pr).abs() < 1e-12);
        }
    }

    #[test]
    fn feller_examples() {
        let f = feller_classify(&Drift::zero(), 1.0, -INF, INF).unwrap();
        assert_eq!(f.kind, Explosion::NoExplosion);
        let f = feller_classify(&Drift::ou(1.0), 1.0, -INF, INF).unwrap();
        assert_eq!(f.kind, Explosion::NoExplosion);
        let f = feller_classify(&Drift::diagonal_comparison(10.0), 1.0, -INF, INF).unwrap();
        assert_eq!(f.kind, Explosion::ExplodesToPlusInfinity);
        assert!(f.v_r.is_finite() && f.v_l.is_infinite());
        let f = feller_classify(&Drift::new("-u^2", |u: f64| -u * u), 1.0, -INF, INF).unwrap();
        assert_eq!(f.kind, Explosion::ExplodesToMinusInfinity);
        let f = feller_classify(&Drift::<f64>::zero(), 1.0, -1.0, 1.0).unwrap();
        assert_eq!(f.kind, Explosion::BothPossible);
        assert!((f.v_r - 1.0).abs() < 1e-8 && (f.v_l - 1.0).abs() < 1e-8);
        let f = feller_classify(&Drift::new("u^3", |u: f64| u * u * u), 1.0, -INF, INF).unwrap();
        assert_eq!(f.kind, Explosion::BothPossible);
    }

    #[test]
    fn left_exit_bound_without_infinity() {
        // 1 - Q(gamma, s) is the probability of hitting 0 before infinity
        for s in [25.0f64, 50.0, 100.0] {
            for alpha in [0.0f64, 0.25] {
                let gamma = s.powf(-alpha);
                let sigma = 1.0;
                let miss = exit_prob_left(&Drift::diagonal_comparison(s), sigma, 0.0, INF, gamma).unwrap();
                let bound = -s.powf(1.0 - 2.0 * alpha) * (1.0 - 0.2) / (sigma * sigma);
                assert!(miss > 0.0 && miss.ln() <= bound, "s {s} alpha {alpha}: {}", miss.ln());
            }
        }
    }

    #[test]
    fn lipschitz_spot_check() {
        let k = Drift::<f64>::square().check_lipschitz(-2.0, 3.0, 100).unwrap();
        assert!((k - 6.0).abs() < 1e-6);
        assert!(Drift::new("pole", |u: f64| 1.0 / u).check_lipschitz(-1.0, 1.0, 101).is_err());
    }

    fn mc_exit(d: &Drift<f64>, sigma: f64, l: f64, r: f64, x: f64, n: u64, dt: f64) -> (f64, f64, f64, f64) {
        let b = |u: f64| d.eval(u);
        let samples: Vec<_> =
            (0..n).into_par_iter().map(|i| autonomous_exit(&b, sigma, l, r, x, dt, 200.0, 9000 + i)).collect();
        assert!(samples.iter().all(|e| e.exited));
        let nf = n as f64;
        let p = samples.iter().filter(|e| e.via_right).count() as f64 / nf;
        let mean = samples.iter().map(|e| e.time).sum::<f64>() / nf;
        let var = samples.iter().map(|e| (e.time - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        (p, (p * (1.0 - p) / nf).sqrt(), mean, (var / nf).sqrt())
    }

    #[test]
    fn monte_carlo_agreement_for_frozen_quadratic() {
        let d = Drift::frozen_quadratic(10.0);
        let p = exit_prob(&d, 1.0, 0.0, 10.0, 9.0).unwrap();
        let e = expected_exit_time(&d, 1.0, 0.0, 10.0, 9.0).unwrap();
        let (ph, pse, eh, ese) = mc_exit(&d, 1.0, 0.0, 10.0, 9.0, 10_000, 1e-4);
        assert!((ph - p).abs() <= 3.0 * pse.max(1e-4), "{ph} vs {p}");
        assert!((eh - e).abs() <= 3.0 * ese, "{eh} vs {e} (se {ese})");
    }

    #[test]
    fn entrance_time_from_minus_infinity() {
        let d = Drift::square();
        let big_d = expected_exit_time(&d, 1.0, -INF, 0.0, -INF).unwrap();
        let at50 = expected_exit_time(&d, 1.0, -INF, 0.0, -50.0).unwrap();
        assert!(big_d.is_finite() && big_d > at50 && big_d - at50 < 0.05);
        let (_, _, eh, ese) = mc_exit(&d, 1.0, -INF, 0.0, -50.0, 10_000, 1e-4);
        assert!((eh - at50).abs() <= 3.0 * ese, "{eh} vs {at50} (se {ese})");
    }

    #[test]
    fn generic_f32_exit_probability() {
        let p = exit_prob(&Drift::<f32>::affine(3.0, 0.5), 1.0f32, -1.0, 1.0, 0.1).unwrap();
        let q = affine_exit_prob(3.0f64, 0.5, 1.0, 0.1).unwrap();
        assert!((p as f64 - q).abs() < 1e-5);
        assert!((phi(1.0f32) - 0.841_344_7).abs() < 1e-6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn affine_closed_form_equals_quadrature(s in 0.5f64..40.0, a in -5.0f64..5.0, sigma in 0.5f64..2.0, x in -1.0f64..1.0) {
            let q = exit_prob(&Drift::affine(s, a), sigma, -1.0, 1.0, x).unwrap();
            let p = affine_exit_prob(s, a, sigma, x).unwrap();
            prop_assert!((p - q).abs() < 1e-9, "{} vs {}", p, q);
        }

        #[test]
        fn exit_probability_ignores_anchor(k in 0usize..6, c1 in -0.5f64..0.5, c2 in -0.5f64..0.5, u in 0.05f64..0.95) {
            let (d, lo, hi) = drifts().swap_remove(k);
            let (l, r) = (lo * 0.6, hi * 0.6);
            let x = l + (r - l) * u;
            let p1 = ScaleFunction::new(d.clone(), 1.0, c1).unwrap().exit_prob(l, r, x).unwrap();
            let p2 = ScaleFunction::new(d.clone(), 1.0, c2).unwrap().exit_prob(l, r, x).unwrap();
            let direct = exit_prob(&d, 1.0, l, r, x).unwrap();
            prop_assert!((p1 - p2).abs() < 1e-12, "{} vs {}", p1, p2);
            prop_assert!((p1 - direct).abs() < 1e-10);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn scale_strictly_increasing(k in 0usize..6, u1 in 0.0f64..1.0, u2 in 0.0f64..1.0) {
            prop_assume!((u1 - u2).abs() > 1e-4);
            let (d, lo, hi) = drifts().swap_remove(k);
            let (x1, x2) = (lo + (hi - lo) * u1.min(u2), lo + (hi - lo) * u1.max(u2));
            let sf = ScaleFunction::new(d, 1.0, 0.0).unwrap();
            prop_assert!(sf.value(x1).unwrap() < sf.value(x2).unwrap());
        }
    }
}
