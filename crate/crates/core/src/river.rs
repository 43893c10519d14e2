//! Pathwise localization of the repelling river, tracking along time, the
//! asymptotic diagnostics, and the recursive expansion `R_n = t + Z_n`.
//!
//! On one Brownian path the fate of the Euler scheme is monotone in the
//! initial value, so the river at time `s` is bracketed by bisection: the
//! lower end of the bracket converges to zero and the upper end blows up.

use crate::error::{Error, Result};
use crate::linear_river::TruncationPolicy;
use crate::paths::BrownianPath;
use crate::scalar::{c, Real};
use crate::sde::{simulate, Fate, SimOptions};
use crate::special::mills_ratio;
use std::fmt;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiverStatus {
    Located,
    MinusInfinity,
    Unresolved,
}

impl fmt::Display for RiverStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RiverStatus::Located => "Located",
            RiverStatus::MinusInfinity => "MinusInfinity",
            RiverStatus::Unresolved => "Unresolved",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiverEstimate<T> {
    pub s: T,
    /// largest probed start known to converge to zero
    pub lo: T,
    /// smallest probed start known to blow up
    pub hi: T,
    pub width: T,
    /// longest run length used by any probe
    pub horizon: T,
    pub status: RiverStatus,
}

impl<T: Real> RiverEstimate<T> {
    pub fn mid(&self) -> T {
        (self.lo + self.hi) * c(0.5)
    }

    pub fn is_located(&self) -> bool {
        self.status == RiverStatus::Located
    }
}

/// Search limits for [`locate_river`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracketing<T> {
    /// initial half width around `s`
    pub half_width: T,
    /// lowest probe is `s - floor_depth`; blow-up there means `MinusInfinity`
    pub floor_depth: T,
    /// number of upward expansions before giving up
    pub max_up: usize,
}

impl<T: Real> Default for Bracketing<T> {
    fn default() -> Self {
        Bracketing { half_width: c(5.0), floor_depth: c(50.0), max_up: 8 }
    }
}

struct Prober<'a, T: Real> {
    path: &'a BrownianPath<T>,
    s: T,
    sigma: T,
    opts: SimOptions<T>,
    horizon: T,
    probes: usize,
}

impl<'a, T: Real> Prober<'a, T> {
    fn new(path: &'a BrownianPath<T>, s: T, sigma: T, opts: &SimOptions<T>) -> Result<Self> {
        opts.validate()?;
        path.covers(s, s + opts.horizon)?;
        Ok(Prober { path, s, sigma, opts: opts.unrecorded(), horizon: T::zero(), probes: 0 })
    }

    fn fate(&mut self, x: T) -> Result<Fate<T>> {
        let tr = simulate(self.s, x, self.sigma, self.path, &self.opts)?;
        self.horizon = self.horizon.max(tr.horizon_end - self.s);
        self.probes += 1;
        Ok(tr.fate)
    }

    fn estimate(&self, lo: T, hi: T, status: RiverStatus) -> RiverEstimate<T> {
        RiverEstimate { s: self.s, lo, hi, width: hi - lo, horizon: self.horizon, status }
    }

    /// Shrinks `[lo, hi]` (lo converging, hi blowing up) below `tol`.
    fn bisect(&mut self, mut lo: T, mut hi: T, tol: T) -> Result<RiverEstimate<T>> {
        while hi - lo > tol {
            let mid = (lo + hi) * c(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            match self.fate(mid)? {
                Fate::BlowUp(_) => hi = mid,
                Fate::ConvergeZero => lo = mid,
                Fate::Undecided => return Ok(self.estimate(lo, hi, RiverStatus::Unresolved)),
            }
        }
        Ok(self.estimate(lo, hi, RiverStatus::Located))
    }
}

/// Brackets the river at time `s` on `path` to width `tol`.
pub fn locate_river<T: Real>(
    path: &BrownianPath<T>,
    s: T,
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
) -> Result<RiverEstimate<T>> {
    locate_river_with(path, s, sigma, tol, opts, &Bracketing::default())
}

pub fn locate_river_with<T: Real>(
    path: &BrownianPath<T>,
    s: T,
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
    br: &Bracketing<T>,
) -> Result<RiverEstimate<T>> {
    if !(tol > T::zero()) {
        return Err(Error::InvalidArgument(format!("tol = {tol} must be positive")));
    }
    let mut p = Prober::new(path, s, sigma, opts)?;
    let unresolved = |p: &Prober<T>, lo: T, hi: T| Ok(p.estimate(lo, hi, RiverStatus::Unresolved));

    // upper end: expand until a probe blows up
    let mut hi = s + br.half_width;
    let mut step = br.half_width;
    let mut found = false;
    for _ in 0..=br.max_up {
        match p.fate(hi)? {
            Fate::BlowUp(_) => {
                found = true;
                break;
            }
            Fate::ConvergeZero => {
                hi += step;
                step = step + step;
            }
            Fate::Undecided => return unresolved(&p, T::neg_infinity(), hi),
        }
    }
    if !found {
        return unresolved(&p, hi, T::infinity());
    }

    // lower end: expand geometrically down to the floor
    let floor = s - br.floor_depth;
    let mut lo = (s - br.half_width).min(hi - br.half_width).max(floor);
    let mut depth = hi - lo;
    loop {
        match p.fate(lo)? {
            Fate::ConvergeZero => break,
            Fate::BlowUp(_) => {
                hi = hi.min(lo);
                if lo <= floor {
                    return Ok(p.estimate(T::neg_infinity(), hi, RiverStatus::MinusInfinity));
                }
                depth = depth + depth;
                lo = (hi - depth).max(floor);
            }
            Fate::Undecided => return unresolved(&p, T::neg_infinity(), hi),
        }
    }
    p.bisect(lo, hi, tol)
}

/// Richardson combination `2 R(dt/2) - R(dt)` of the locator on `path` and
/// on its bridge refinement. Removes the first-order step bias of the
/// Euler scheme, which dominates when `sigma` is tiny.
pub fn locate_river_extrapolated<T: Real>(
    path: &BrownianPath<T>,
    s: T,
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
) -> Result<RiverEstimate<T>> {
    let q = tol * c(0.25);
    let coarse = locate_river(path, s, sigma, q, opts)?;
    let fine_path = path.refine(2)?;
    let fine_opts = SimOptions { dt0: opts.dt0 * c(0.5), ..*opts };
    let fine = locate_river(&fine_path, s, sigma, q, &fine_opts)?;
    if !coarse.is_located() || !fine.is_located() {
        let status = if coarse.status == RiverStatus::Located { fine.status } else { coarse.status };
        return Ok(RiverEstimate { status, ..fine });
    }
    let centre = c::<T>(2.0) * fine.mid() - coarse.mid();
    let half = fine.width + coarse.width * c(0.5);
    Ok(RiverEstimate {
        s,
        lo: centre - half,
        hi: centre + half,
        width: half + half,
        horizon: fine.horizon.max(coarse.horizon),
        status: RiverStatus::Located,
    })
}

/// State of the solution from `(s_from, x)` at `s_to`, or `None` if it blew
/// up first.
pub fn advance<T: Real>(
    path: &BrownianPath<T>,
    s_from: T,
    x: T,
    s_to: T,
    sigma: T,
    opts: &SimOptions<T>,
) -> Result<Option<T>> {
    let o = SimOptions { horizon: s_to - s_from, max_doublings: 0, record: true, ..*opts };
    let tr = simulate(s_from, x, sigma, path, &o)?;
    if tr.fate.is_blowup() {
        return Ok(None);
    }
    Ok(tr.values.last().copied())
}

/// Locates the river at `s_grid[0]` and carries the bracket forward: both
/// ends are advanced along the path and the advanced bracket is bisected
/// again. Falls back to a fresh search when an advanced end has the wrong
/// fate or blew up on the way.
pub fn track_river<T: Real>(
    path: &BrownianPath<T>,
    s_grid: &[T],
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
) -> Result<Vec<RiverEstimate<T>>> {
    if s_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("s_grid must be strictly increasing".into()));
    }
    let mut out: Vec<RiverEstimate<T>> = Vec::with_capacity(s_grid.len());
    for (k, &s) in s_grid.iter().enumerate() {
        let carried = match out.last() {
            Some(prev) if k > 0 && prev.is_located() => propagate(path, prev, s, sigma, tol, opts)?,
            _ => None,
        };
        let est = match carried {
            Some(e) => e,
            None => locate_river(path, s, sigma, tol, opts)?,
        };
        out.push(est);
    }
    Ok(out)
}

fn propagate<T: Real>(
    path: &BrownianPath<T>,
    prev: &RiverEstimate<T>,
    s: T,
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
) -> Result<Option<RiverEstimate<T>>> {
    let (Some(lo), Some(hi)) =
        (advance(path, prev.s, prev.lo, s, sigma, opts)?, advance(path, prev.s, prev.hi, s, sigma, opts)?)
    else {
        return Ok(None);
    };
    if !(lo < hi) {
        return Ok(None);
    }
    let mut p = Prober::new(path, s, sigma, opts)?;
    if !matches!(p.fate(lo)?, Fate::ConvergeZero) || !p.fate(hi)?.is_blowup() {
        return Ok(None);
    }
    let e = p.bisect(lo, hi, tol)?;
    Ok(if e.is_located() { Some(e) } else { None })
}

pub const RIVER_HEADER: &str = "s,lo,hi,width,status";

pub fn write_river_csv<T: Real, W: Write>(series: &[RiverEstimate<T>], mut w: W) -> Result<()> {
    writeln!(w, "{RIVER_HEADER}")?;
    for e in series {
        writeln!(w, "{},{},{},{},{}", e.s, e.lo, e.hi, e.width, e.status)?;
    }
    Ok(())
}

/// `s^alpha |R(s) - s|` along a located series.
#[derive(Debug, Clone, PartialEq)]
pub struct Theorem4Report<T> {
    pub alpha: T,
    pub s: Vec<T>,
    pub scaled: Vec<T>,
    /// median of the last quarter of `scaled`
    pub tail_median: T,
    /// Kendall tau of `scaled` against `s` over the last half; negative
    /// values mean a decreasing trend
    pub kendall_tau: T,
}

fn median<T: Real>(v: &[T]) -> T {
    let mut w = v.to_vec();
    w.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = w.len();
    if n % 2 == 1 {
        w[n / 2]
    } else {
        (w[n / 2 - 1] + w[n / 2]) * c(0.5)
    }
}

pub fn kendall_tau<T: Real>(x: &[T], y: &[T]) -> T {
    let n = x.len().min(y.len());
    if n < 2 {
        return T::zero();
    }
    let mut score = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[j] - x[i]) * (y[j] - y[i]);
            score += if a > T::zero() {
                1
            } else if a < T::zero() {
                -1
            } else {
                0
            };
        }
    }
    T::from_i64(score).unwrap() / T::from_usize_(n * (n - 1) / 2)
}

pub fn theorem4_diagnostic<T: Real>(series: &[RiverEstimate<T>], alpha: T) -> Result<Theorem4Report<T>> {
    if series.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    if let Some(e) = series.iter().find(|e| !e.is_located()) {
        return Err(Error::RiverNotLocated { s: e.s.f64(), status: e.status.to_string() });
    }
    let s: Vec<T> = series.iter().map(|e| e.s).collect();
    let scaled: Vec<T> = series.iter().map(|e| e.s.powf(alpha) * (e.mid() - e.s).abs()).collect();
    let n = scaled.len();
    let tail_median = median(&scaled[n - (n / 4).max(1)..]);
    let half = n - (n / 2).max(1);
    let kendall_tau = kendall_tau(&s[half..], &scaled[half..]);
    Ok(Theorem4Report { alpha, s, scaled, tail_median, kendall_tau })
}

/// Times where the river sits above `s + c/sqrt(s)` and below `s - c/sqrt(s)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OscillationEvents<T> {
    pub above: Vec<T>,
    pub below: Vec<T>,
}

/// Non-located entries are skipped.
pub fn oscillation_events<T: Real>(series: &[RiverEstimate<T>], c_level: T) -> OscillationEvents<T> {
    let mut ev = OscillationEvents { above: Vec::new(), below: Vec::new() };
    for e in series.iter().filter(|e| e.is_located()) {
        let band = c_level / e.s.sqrt();
        // the whole bracket must clear the threshold
        if e.lo - e.s > band {
            ev.above.push(e.s);
        } else if e.hi - e.s < -band {
            ev.below.push(e.s);
        }
    }
    ev
}

/// Discretization of `Z_{n+1}(t) = e^{t^2/2} int_t^inf e^{-u^2/2} (1 - Z_n^2) du
/// - sigma e^{t^2/2} int_t^inf e^{-u^2/2} dW(u)` on the path grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kernel {
    /// product integration against `e^{(t^2 - u^2)/2}` with linear
    /// interpolation per cell and a left-point Ito sum
    Continuous,
    /// the Picard iteration of the Euler scheme itself, whose fixed point is
    /// the river of the Euler scheme on the same grid
    Euler,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionState<T> {
    pub n: usize,
    pub t_grid: Vec<T>,
    /// `z[k][i]` is `Z_k(t_grid[i])`, `k = 0..=n`
    pub z: Vec<Vec<T>>,
    pub trunc: TruncationPolicy<T>,
    /// `e^{-(T^2 - t_max^2)/2} / T` for the window end `T`
    pub tail_bound: T,
    pub kernel: Kernel,
}

impl<T: Real> ExpansionState<T> {
    /// `R_k(t_grid[i]) = t + Z_k(t)`.
    pub fn river(&self, k: usize, i: usize) -> T {
        self.t_grid[i] + self.z[k][i]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,n,Rn")?;
        for k in 0..=self.n {
            for (i, t) in self.t_grid.iter().enumerate() {
                writeln!(w, "{},{},{}", t, k, self.river(k, i))?;
            }
        }
        Ok(())
    }
}

pub fn expand_river<T: Real>(
    path: &BrownianPath<T>,
    n: usize,
    t_grid: &[T],
    sigma: T,
    trunc: &TruncationPolicy<T>,
) -> Result<ExpansionState<T>> {
    expand_river_with(path, n, t_grid, sigma, trunc, Kernel::Continuous)
}

/// Values of `Z_0 .. Z_n` on every path node of `[t_min, T]`, plus the node
/// offset of `t_min` and the tail bound.
fn expansion_nodes<T: Real>(
    path: &BrownianPath<T>,
    n: usize,
    t_min: T,
    t_max: T,
    sigma: T,
    trunc: &TruncationPolicy<T>,
    kernel: Kernel,
) -> Result<(Vec<Vec<T>>, usize, T)> {
    let h = path.dt();
    let k0 = path.index_of(t_min)?;
    let steps = (trunc.horizon / h).ceil().to_usize().unwrap_or(0).max(1);
    let k_end = path.index_of(t_max)? + steps;
    let big_t = path.time(k_end.min(path.values.len() - 1));
    if k_end >= path.values.len() {
        return Err(Error::Coverage {
            t0: path.t0().f64(),
            t1: path.t1().f64(),
            need0: t_min.f64(),
            need1: (t_max + T::from_usize_(steps) * h).f64(),
        });
    }
    let tail_bound = (-(big_t * big_t - t_max * t_max) * c(0.5)).exp() / big_t;
    if !(tail_bound <= trunc.tail_tol) {
        return Err(Error::Truncation { bound: tail_bound.f64(), tol: trunc.tail_tol.f64() });
    }
    let m = k_end - k0;
    let u = |j: usize| path.time(k0 + j);
    let dw = |j: usize| path.values[k0 + j + 1] - path.values[k0 + j];
    let mut z: Vec<Vec<T>> = vec![vec![T::zero(); m + 1]];
    if n == 0 {
        return Ok((z, k0, tail_bound));
    }
    // first order
    let mut z1 = vec![T::zero(); m + 1];
    z1[m] = mills_ratio(u(m));
    match kernel {
        Kernel::Continuous => {
            let mut stoch = T::zero();
            for j in (0..m).rev() {
                let (a, b) = (u(j), u(j + 1));
                stoch = ((a * a - b * b) * c(0.5)).exp() * stoch + dw(j);
                z1[j] = mills_ratio(a) - sigma * stoch;
            }
        }
        Kernel::Euler => {
            for j in (0..m).rev() {
                let hj = u(j + 1) - u(j);
                z1[j] = (z1[j + 1] + hj - sigma * dw(j)) / (T::one() + u(j) * hj);
            }
        }
    }
    z.push(z1);
    for k in 1..n {
        let g: Vec<T> = (0..=m).map(|j| z[k][j] * z[k][j] - z[k - 1][j] * z[k - 1][j]).collect();
        let mut acc = T::zero();
        let mut next = vec![T::zero(); m + 1];
        next[m] = z[k][m];
        for j in (0..m).rev() {
            let (a, b) = (u(j), u(j + 1));
            let hj = b - a;
            acc = match kernel {
                Kernel::Continuous => {
                    // e^{a^2/2} int_a^b e^{-u^2/2} (g_j + beta (u - a)) du
                    let ex = -(a * hj) - hj * hj * c(0.5);
                    let e = ex.exp();
                    let k0 = mills_ratio(a) - e * mills_ratio(b);
                    let k1 = -ex.exp_m1() - a * k0;
                    let beta = (g[j + 1] - g[j]) / hj;
                    e * acc + g[j] * k0 + beta * k1
                }
                Kernel::Euler => (acc + hj * g[j]) / (T::one() + a * hj),
            };
            next[j] = z[k][j] - acc;
        }
        z.push(next);
    }
    Ok((z, k0, tail_bound))
}

pub fn expand_river_with<T: Real>(
    path: &BrownianPath<T>,
    n: usize,
    t_grid: &[T],
    sigma: T,
    trunc: &TruncationPolicy<T>,
    kernel: Kernel,
) -> Result<ExpansionState<T>> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("t_grid must be nonempty and strictly increasing".into()));
    }
    let (t_min, t_max) = (t_grid[0], t_grid[t_grid.len() - 1]);
    let (nodes, k0, tail_bound) = expansion_nodes(path, n, t_min, t_max, sigma, trunc, kernel)?;
    let idx: Vec<usize> = t_grid.iter().map(|&t| path.index_of(t).map(|k| k - k0)).collect::<Result<_>>()?;
    let z = nodes.iter().map(|zk| idx.iter().map(|&j| zk[j]).collect()).collect();
    Ok(ExpansionState { n, t_grid: t_grid.to_vec(), z, trunc: *trunc, tail_bound, kernel })
}

/// `|R_n(t) - R(t)|` against the located river of the Euler scheme on the
/// same path. The expansion uses the Euler kernel on the same grid, so both
/// sides share the discretization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionError<T> {
    pub error: T,
    /// half width of the locator bracket
    pub uncertainty: T,
    pub river: RiverEstimate<T>,
    pub rn: T,
}

pub fn expansion_error<T: Real>(
    path: &BrownianPath<T>,
    n: usize,
    t: T,
    sigma: T,
    tol: T,
    opts: &SimOptions<T>,
) -> Result<ExpansionError<T>> {
    let river = locate_river(path, t, sigma, tol, opts)?;
    expansion_error_against(path, n, t, sigma, &river, opts)
}

/// As [`expansion_error`] with a river located beforehand.
pub fn expansion_error_against<T: Real>(
    path: &BrownianPath<T>,
    n: usize,
    t: T,
    sigma: T,
    river: &RiverEstimate<T>,
    opts: &SimOptions<T>,
) -> Result<ExpansionError<T>> {
    if !river.is_located() {
        return Err(Error::RiverNotLocated { s: t.f64(), status: river.status.to_string() });
    }
    let trunc = TruncationPolicy::new(opts.horizon, c(1e-12));
    let st = expand_river_with(path, n, &[t], sigma, &trunc, Kernel::Euler)?;
    let rn = st.river(n, 0);
    Ok(ExpansionError { error: (rn - river.mid()).abs(), uncertainty: river.width * c(0.5), river: *river, rn })
}

/// `Gamma_n(t) = sup_{u >= t} |R_n(u) - x_c(u)|` for the deterministic
/// equation, with the sup taken over path nodes up to `t_grid`'s last
/// point plus one unit.
pub fn deterministic_gamma<T: Real>(path: &BrownianPath<T>, n: usize, t_grid: &[T], horizon: T) -> Result<Vec<T>> {
    use crate::closed_form::critical_solution;
    let (t_min, t_max) = (t_grid[0], t_grid[t_grid.len() - 1]);
    let trunc = TruncationPolicy::new(horizon, c(1e-12));
    let (nodes, k0, _) = expansion_nodes(path, n, t_min, t_max + T::one(), T::zero(), &trunc, Kernel::Continuous)?;
    let k_last = path.index_of(t_max + T::one())? - k0;
    let err: Vec<T> = (0..=k_last)
        .map(|j| {
            let u = path.time(k0 + j);
            (u + nodes[n][j] - critical_solution(u)).abs()
        })
        .collect();
    // running sup from the right
    let mut sup = err.clone();
    for j in (0..k_last).rev() {
        sup[j] = sup[j].max(sup[j + 1]);
    }
    t_grid.iter().map(|&t| Ok(sup[path.index_of(t)? - k0])).collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope<T: Real>(x: &[T], y: &[T]) -> T {
    let n = T::from_usize_(x.len());
    let lx: Vec<T> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<T> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().fold(T::zero(), |a, &b| a + b) / n;
    let my = ly.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (a, b) in lx.iter().zip(&ly) {
        sxy += (*a - mx) * (*b - my);
        sxx += (*a - mx) * (*a - mx);
    }
    sxy / sxx
}
