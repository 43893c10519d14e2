//! Euler-Maruyama for `dX = X(X - t) dt + dH(t)` with `H = sigma W` or a
//! caller-supplied continuous driver.
//!
//! A run ends in one of three fates. It is `BlowUp` once `X >= x_cap`, with
//! the blow-up time extrapolated by the tail of `x' = x^2`, so `t + 1/X`.
//! It is `ConvergeZero` when `|X| <= 1` on the last five time units before
//! `T_end` and `|X(T_end)| <= band_delta`. Otherwise it is `Undecided`, and
//! the horizon is doubled up to `max_doublings` times before giving up.
//!
//! With `adapt`, a grid cell is split into substeps of length at most
//! `eta / |2X - t|`. That keeps the one-step map `x -> x + x(x - t) h`
//! monotone and caps the relative drift change per step. Driver values
//! inside a cell come from the Brownian bridge, or from `H` directly when a
//! function is supplied.

use crate::error::{Error, Result};
use crate::paths::{bridge_stream, BrownianPath, LazyPath, NormalStream};
use crate::scalar::{c, Real};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound(deserialize = "T: Real + Deserialize<'de>", serialize = "T: Serialize"))]
pub struct SimOptions<T> {
    /// grid step; for path drivers this must equal the path step
    pub dt0: T,
    pub x_cap: T,
    pub band_delta: T,
    /// length of the run: `T_end = s + horizon`
    pub horizon: T,
    pub adapt: bool,
    pub max_doublings: u32,
    /// bound on `|2X - t| h` for substeps
    pub eta: T,
    /// keep the sample sequence (off for estimators)
    pub record: bool,
}

impl<T: Real> Default for SimOptions<T> {
    fn default() -> Self {
        SimOptions {
            dt0: c(1e-3),
            x_cap: c(1e6),
            band_delta: c(0.5),
            horizon: c(10.0),
            adapt: true,
            max_doublings: 2,
            eta: c(0.05),
            record: true,
        }
    }
}

impl<T: Real> SimOptions<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.dt0 > T::zero()) {
            return bad(format!("dt0 = {} must be positive", self.dt0));
        }
        if !(self.x_cap >= c(100.0)) {
            return bad(format!("x_cap = {} must be at least 100", self.x_cap));
        }
        if !(self.band_delta > T::zero() && self.band_delta < T::one()) {
            return bad(format!("band_delta = {} must lie in (0, 1)", self.band_delta));
        }
        if !(self.horizon > T::zero()) {
            return bad(format!("horizon = {} must be positive", self.horizon));
        }
        if !(self.eta > T::zero() && self.eta < T::one()) {
            return bad(format!("eta = {} must lie in (0, 1)", self.eta));
        }
        Ok(())
    }

    pub fn non_adaptive(mut self) -> Self {
        self.adapt = false;
        self
    }

    pub fn unrecorded(mut self) -> Self {
        self.record = false;
        self
    }

    /// Latest time a run from `s` can reach after all horizon doublings.
    pub fn max_time(&self, s: T) -> T {
        s + self.horizon * T::from_u32(1 << self.max_doublings).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fate<T> {
    BlowUp(T),
    ConvergeZero,
    Undecided,
}

impl<T: Real> Fate<T> {
    pub fn is_blowup(&self) -> bool {
        matches!(self, Fate::BlowUp(_))
    }
}

impl<T: Real> fmt::Display for Fate<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fate::BlowUp(b) => write!(f, "BlowUp({b})"),
            Fate::ConvergeZero => write!(f, "ConvergeZero"),
            Fate::Undecided => write!(f, "Undecided"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub times: Vec<T>,
    pub values: Vec<T>,
    pub fate: Fate<T>,
    pub start: (T, T),
    /// last time reached
    pub end: T,
    /// `T_end` at which the fate was assessed
    pub horizon_end: T,
    pub steps: usize,
    pub substeps: usize,
}

impl<T: Real> Trajectory<T> {
    /// CSV with header `t,x` and a trailing `# fate=...` line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x")?;
        for (t, x) in self.times.iter().zip(&self.values) {
            writeln!(w, "{t},{x}")?;
        }
        match self.fate {
            Fate::BlowUp(b) => writeln!(w, "# fate=BlowUp beta={b}")?,
            f => writeln!(w, "# fate={f}")?,
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitResult<T> {
    pub which: Option<usize>,
    pub when: T,
}

/// Source of the additive forcing `H`, sampled relative to a start time.
pub trait Driver<T: Real> {
    fn dt(&self) -> T;
    /// `H` at the `j`-th grid node after the start, `None` past the end of the driver.
    fn node(&mut self, j: usize) -> Option<T>;
    /// Prepares sampling inside cell `j`.
    fn begin_cell(&mut self, j: usize);
    /// `H(tau_new)` for `tau < tau_new < t_{j+1}`, given `H(tau) = h_tau` and `H(t_{j+1}) = h_end`.
    fn inside(&mut self, tau: T, h_tau: T, tau_new: T, t_end: T, h_end: T) -> T;
}

/// Read access to Brownian node values.
pub trait PathSource<T: Real> {
    fn seed(&self) -> u64;
    fn t0(&self) -> T;
    fn step(&self) -> T;
    fn w(&mut self, k: usize) -> Option<T>;
}

impl<T: Real> PathSource<T> for &BrownianPath<T> {
    fn seed(&self) -> u64 {
        self.seed
    }
    fn t0(&self) -> T {
        self.grid.t0
    }
    fn step(&self) -> T {
        self.grid.dt
    }
    fn w(&mut self, k: usize) -> Option<T> {
        self.values.get(k).copied()
    }
}

impl<T: Real> PathSource<T> for &mut LazyPath<T> {
    fn seed(&self) -> u64 {
        self.seed
    }
    fn t0(&self) -> T {
        self.t0
    }
    fn step(&self) -> T {
        self.dt
    }
    fn w(&mut self, k: usize) -> Option<T> {
        Some(self.value(k))
    }
}

/// `H = sigma W` read from a path, starting at grid node `k0`.
pub struct PathDriver<T, P> {
    path: P,
    k0: usize,
    sigma: T,
    bridge: Option<NormalStream>,
}

impl<T: Real, P: PathSource<T>> PathDriver<T, P> {
    pub fn new(path: P, s: T, sigma: T) -> Result<Self> {
        let q = ((s - path.t0()) / path.step()).f64();
        let k = q.round();
        if k < 0.0 || (q - k).abs() > 1e-6 {
            return Err(Error::OffGrid { t: s.f64() });
        }
        Ok(PathDriver { path, k0: k as usize, sigma, bridge: None })
    }
}

impl<T: Real, P: PathSource<T>> Driver<T> for PathDriver<T, P> {
    fn dt(&self) -> T {
        self.path.step()
    }
    fn node(&mut self, j: usize) -> Option<T> {
        self.path.w(self.k0 + j).map(|w| self.sigma * w)
    }
    fn begin_cell(&mut self, j: usize) {
        self.bridge = Some(bridge_stream(self.path.seed(), self.path.step().f64(), self.k0 + j));
    }
    fn inside(&mut self, tau: T, h_tau: T, tau_new: T, t_end: T, h_end: T) -> T {
        let a = tau_new - tau;
        let b = t_end - tau_new;
        let mean = h_tau + (h_end - h_tau) * a / (a + b);
        let z: T = self.bridge.as_mut().expect("begin_cell not called").next();
        mean + self.sigma * (a * b / (a + b)).sqrt() * z
    }
}

/// A continuous driver given as a function of time.
pub struct FnDriver<T, F> {
    s: T,
    dt: T,
    h: F,
}

impl<T: Real, F: FnMut(T) -> T> FnDriver<T, F> {
    pub fn new(s: T, dt: T, h: F) -> Self {
        FnDriver { s, dt, h }
    }
}

impl<T: Real, F: FnMut(T) -> T> Driver<T> for FnDriver<T, F> {
    fn dt(&self) -> T {
        self.dt
    }
    fn node(&mut self, j: usize) -> Option<T> {
        Some((self.h)(self.s + T::from_usize_(j) * self.dt))
    }
    fn begin_cell(&mut self, _j: usize) {}
    fn inside(&mut self, _tau: T, _h_tau: T, tau_new: T, _t_end: T, _h_end: T) -> T {
        (self.h)(tau_new)
    }
}

/// Stop request from a monitor.
pub(crate) enum Watch<R> {
    Continue,
    Stop(R),
}

/// The stepping loop shared by every entry point. `watch` sees each accepted
/// move `(t_prev, x_prev, t, x)` and may stop the run.
pub(crate) fn run<T: Real, R, D: Driver<T>, M: FnMut(T, T, T, T) -> Watch<R>>(
    s: T,
    x: T,
    driver: &mut D,
    opts: &SimOptions<T>,
    mut watch: M,
) -> Result<(Trajectory<T>, Option<R>)> {
    opts.validate()?;
    if !x.is_finite() || !s.is_finite() {
        return Err(Error::InvalidArgument(format!("start ({s}, {x}) must be finite")));
    }
    let dt = driver.dt();
    let steps_per_horizon = (opts.horizon / dt).round().to_usize().unwrap_or(0).max(1);
    let mut end_j = steps_per_horizon;
    let mut doublings = 0;
    let mut traj = Trajectory {
        times: Vec::new(),
        values: Vec::new(),
        fate: Fate::Undecided,
        start: (s, x),
        end: s,
        horizon_end: s + T::from_usize_(end_j) * dt,
        steps: 0,
        substeps: 0,
    };
    let record = opts.record;
    if record {
        traj.times.push(s);
        traj.values.push(x);
    }
    let one = T::one();
    let mut last_big = if x.abs() > one { Some(s) } else { None };
    let Some(mut h) = driver.node(0) else {
        return Err(Error::Coverage { t0: s.f64(), t1: s.f64(), need0: s.f64(), need1: opts.max_time(s).f64() });
    };
    let mut xv = x;
    let mut j = 0usize;
    let min_sub = dt * c(1e-7);
    macro_rules! accept {
        ($tp:expr, $xp:expr, $tn:expr, $xn:expr) => {{
            let (tp, xp, tn, xn) = ($tp, $xp, $tn, $xn);
            if record {
                traj.times.push(tn);
                traj.values.push(xn);
            }
            traj.end = tn;
            if xn >= opts.x_cap {
                traj.fate = Fate::BlowUp(tn + xn.recip());
                return Ok((traj, None));
            }
            if !xn.is_finite() || xn <= -opts.x_cap {
                traj.fate = Fate::Undecided;
                return Ok((traj, None));
            }
            if xn.abs() > one {
                last_big = Some(tn);
            }
            if let Watch::Stop(v) = watch(tp, xp, tn, xn) {
                return Ok((traj, Some(v)));
            }
        }};
    }
    loop {
        if j == end_j {
            let t_end = s + T::from_usize_(end_j) * dt;
            traj.horizon_end = t_end;
            let window = (t_end - c(5.0)).max(s);
            let calm = last_big.map_or(true, |tb| tb < window);
            if calm && xv.abs() <= opts.band_delta {
                traj.fate = Fate::ConvergeZero;
                return Ok((traj, None));
            }
            if doublings == opts.max_doublings {
                traj.fate = Fate::Undecided;
                return Ok((traj, None));
            }
            doublings += 1;
            end_j *= 2;
        }
        let t = s + T::from_usize_(j) * dt;
        let t_next = s + T::from_usize_(j + 1) * dt;
        let Some(h_next) = driver.node(j + 1) else {
            // driver exhausted before the fate was settled
            traj.fate = Fate::Undecided;
            return Ok((traj, None));
        };
        let slope = (c::<T>(2.0) * xv - t).abs();
        if !opts.adapt || slope * dt <= opts.eta {
            let xn = xv + xv * (xv - t) * dt + (h_next - h);
            accept!(t, xv, t_next, xn);
            xv = xn;
        } else {
            driver.begin_cell(j);
            let (mut tau, mut hv) = (t, h);
            loop {
                let slope = (c::<T>(2.0) * xv - tau).abs();
                let mut hh = if slope > T::zero() { opts.eta / slope } else { dt };
                // never below the float spacing at tau, or time would stall
                hh = hh.max(min_sub).max(tau.abs().max(one) * T::epsilon() * c(4.0));
                let last = tau + hh >= t_next - min_sub;
                let (tau_new, h_new) = if last {
                    (t_next, h_next)
                } else {
                    let tn = tau + hh;
                    (tn, driver.inside(tau, hv, tn, t_next, h_next))
                };
                let xn = xv + xv * (xv - tau) * (tau_new - tau) + (h_new - hv);
                traj.substeps += 1;
                accept!(tau, xv, tau_new, xn);
                xv = xn;
                tau = tau_new;
                hv = h_new;
                if last {
                    break;
                }
            }
        }
        h = h_next;
        j += 1;
        traj.steps += 1;
    }
}

fn check_sigma<T: Real>(sigma: T) -> Result<()> {
    if !(sigma >= T::zero()) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma = {sigma} must be finite and nonnegative")));
    }
    Ok(())
}

fn check_step<T: Real>(path_dt: T, opts: &SimOptions<T>) -> Result<()> {
    if ((path_dt - opts.dt0) / opts.dt0).abs() > c(1e-9) {
        return Err(Error::InvalidArgument(format!("path step {path_dt} differs from dt0 = {}", opts.dt0)));
    }
    Ok(())
}

/// Simulates from `(s, x)` driven by `sigma W` on `path`.
pub fn simulate<T: Real>(s: T, x: T, sigma: T, path: &BrownianPath<T>, opts: &SimOptions<T>) -> Result<Trajectory<T>> {
    check_sigma(sigma)?;
    check_step(path.dt(), opts)?;
    path.covers(s, s + opts.horizon)?;
    let mut d = PathDriver::new(path, s, sigma)?;
    Ok(run(s, x, &mut d, opts, |_, _, _, _| Watch::<()>::Continue)?.0)
}

/// As [`simulate`], with node values generated on demand.
pub fn simulate_lazy<T: Real>(s: T, x: T, sigma: T, path: &mut LazyPath<T>, opts: &SimOptions<T>) -> Result<Trajectory<T>> {
    check_sigma(sigma)?;
    check_step(path.dt, opts)?;
    let mut d = PathDriver::new(path, s, sigma)?;
    Ok(run(s, x, &mut d, opts, |_, _, _, _| Watch::<()>::Continue)?.0)
}

/// Simulates `X(t) = x + int_s^t X(X - u) du + H(t) - H(s)` on the grid
/// `s + j dt0`.
pub fn simulate_general<T: Real, F: FnMut(T) -> T>(s: T, x: T, driver: F, opts: &SimOptions<T>) -> Result<Trajectory<T>> {
    let mut d = FnDriver::new(s, opts.dt0, driver);
    Ok(run(s, x, &mut d, opts, |_, _, _, _| Watch::<()>::Continue)?.0)
}

/// First crossing of `levels[i] + shift(t)`; `levels` sorted ascending.
pub(crate) fn first_hit_with<T: Real, D: Driver<T>, S: Fn(T) -> T>(
    s: T,
    x: T,
    driver: &mut D,
    levels: &[T],
    shift: S,
    opts: &SimOptions<T>,
) -> Result<(HitResult<T>, Trajectory<T>)> {
    if levels.is_empty() || levels.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("levels must be nonempty and strictly increasing".into()));
    }
    let y0 = x - shift(s);
    if let Some(i) = levels.iter().position(|&l| l == y0) {
        let traj = Trajectory {
            times: vec![s],
            values: vec![x],
            fate: Fate::Undecided,
            start: (s, x),
            end: s,
            horizon_end: s,
            steps: 0,
            substeps: 0,
        };
        return Ok((HitResult { which: Some(i), when: s }, traj));
    }
    let watch = |tp: T, xp: T, tn: T, xn: T| {
        let (yp, yn) = (xp - shift(tp), xn - shift(tn));
        let hit = if yn > yp {
            levels.iter().position(|&l| l > yp && l <= yn)
        } else if yn < yp {
            levels.iter().rposition(|&l| l < yp && l >= yn)
        } else {
            None
        };
        match hit {
            Some(i) => {
                let frac = (levels[i] - yp) / (yn - yp);
                Watch::Stop((i, tp + frac * (tn - tp)))
            }
            None => Watch::Continue,
        }
    };
    let (traj, hit) = run(s, x, driver, opts, watch)?;
    let res = match (hit, traj.fate) {
        (Some((i, when)), _) => HitResult { which: Some(i), when },
        (None, Fate::BlowUp(b)) => {
            let top = levels.len() - 1;
            if levels[top] + shift(b) <= opts.x_cap {
                HitResult { which: Some(top), when: b }
            } else {
                HitResult { which: None, when: b }
            }
        }
        (None, _) => HitResult { which: None, when: traj.end },
    };
    Ok((res, traj))
}

/// First level crossed by the path from `(s, x)`, with the crossing time
/// interpolated linearly within the step. Blow-up counts as reaching the
/// top level.
pub fn first_hit<T: Real>(
    s: T,
    x: T,
    sigma: T,
    path: &BrownianPath<T>,
    levels: &[T],
    opts: &SimOptions<T>,
) -> Result<HitResult<T>> {
    check_sigma(sigma)?;
    check_step(path.dt(), opts)?;
    path.covers(s, s + opts.horizon)?;
    let mut d = PathDriver::new(path, s, sigma)?;
    Ok(first_hit_with(s, x, &mut d, levels, |_| T::zero(), opts)?.0)
}

/// Output of [`simulate_bundle`].
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle<T> {
    pub trajectories: Vec<Trajectory<T>>,
    /// times a lower member was clamped down to the member above it
    pub clamp_events: usize,
    /// member steps taken
    pub member_steps: usize,
}

/// Several starts driven by the same increments in lockstep, without
/// substeps. Ordering of the starts is enforced after each step by
/// clamping, and every clamp is counted.
pub fn simulate_bundle<T: Real>(
    s: T,
    xs: &[T],
    sigma: T,
    path: &BrownianPath<T>,
    opts: &SimOptions<T>,
) -> Result<Bundle<T>> {
    opts.validate()?;
    check_sigma(sigma)?;
    check_step(path.dt(), opts)?;
    path.covers(s, s + opts.horizon)?;
    if xs.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidArgument("bundle starts must be sorted ascending".into()));
    }
    let n = xs.len();
    let dt = path.dt();
    let k0 = path.index_of(s)?;
    let steps_per_horizon = (opts.horizon / dt).round().to_usize().unwrap_or(0).max(1);
    let mut end_j = steps_per_horizon;
    let mut doublings = 0;
    let mut x: Vec<T> = xs.to_vec();
    let mut fate = vec![None::<Fate<T>>; n];
    let mut last_big: Vec<Option<T>> = xs.iter().map(|v| (v.abs() > T::one()).then_some(s)).collect();
    let mut trajs: Vec<Trajectory<T>> = xs
        .iter()
        .map(|&x0| Trajectory {
            times: if opts.record { vec![s] } else { vec![] },
            values: if opts.record { vec![x0] } else { vec![] },
            fate: Fate::Undecided,
            start: (s, x0),
            end: s,
            horizon_end: s,
            steps: 0,
            substeps: 0,
        })
        .collect();
    let mut clamp_events = 0;
    let mut member_steps = 0;
    let mut j = 0;
    let inf = T::infinity();
    loop {
        if j == end_j {
            let t_end = s + T::from_usize_(end_j) * dt;
            let window = (t_end - c(5.0)).max(s);
            for i in 0..n {
                if fate[i].is_none() && last_big[i].map_or(true, |tb| tb < window) && x[i].abs() <= opts.band_delta {
                    fate[i] = Some(Fate::ConvergeZero);
                    trajs[i].horizon_end = t_end;
                }
            }
            if fate.iter().all(|f| f.is_some()) || doublings == opts.max_doublings {
                break;
            }
            doublings += 1;
            end_j *= 2;
        }
        let (Some(&w0), Some(&w1)) = (path.values.get(k0 + j), path.values.get(k0 + j + 1)) else {
            break;
        };
        let t = s + T::from_usize_(j) * dt;
        let t_next = s + T::from_usize_(j + 1) * dt;
        let dh = sigma * w1 - sigma * w0;
        for i in 0..n {
            if x[i] == inf || matches!(fate[i], Some(Fate::Undecided)) {
                continue;
            }
            let xi = x[i];
            let xn = xi + xi * (xi - t) * dt + dh;
            member_steps += 1;
            trajs[i].steps += 1;
            trajs[i].end = t_next;
            if xn >= opts.x_cap {
                x[i] = inf;
                if fate[i].is_none() {
                    fate[i] = Some(Fate::BlowUp(t_next + xn.recip()));
                }
                if opts.record {
                    trajs[i].times.push(t_next);
                    trajs[i].values.push(xn);
                }
                continue;
            }
            if !xn.is_finite() || xn <= -opts.x_cap {
                fate[i] = Some(Fate::Undecided);
                continue;
            }
            x[i] = xn;
            if xn.abs() > T::one() {
                last_big[i] = Some(t_next);
            }
        }
        for i in (0..n.saturating_sub(1)).rev() {
            if x[i] > x[i + 1] {
                if x[i] == inf {
                    // blew up this step while the member above did not
                    fate[i] = None;
                }
                x[i] = x[i + 1];
                clamp_events += 1;
            }
        }
        if opts.record {
            for i in 0..n {
                if x[i] != inf && trajs[i].end == t_next {
                    trajs[i].times.push(t_next);
                    trajs[i].values.push(x[i]);
                }
            }
        }
        j += 1;
        if x.iter().all(|&v| v == inf) {
            break;
        }
    }
    for (tr, f) in trajs.iter_mut().zip(fate) {
        tr.fate = f.unwrap_or(Fate::Undecided);
        if tr.horizon_end == s {
            tr.horizon_end = s + T::from_usize_(end_j) * dt;
        }
    }
    Ok(Bundle { trajectories: trajs, clamp_events, member_steps })
}

/// Outcome of one autonomous exit simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitSample<T> {
    pub via_right: bool,
    pub time: T,
    pub exited: bool,
}

/// Euler scheme for the autonomous `dZ = b(Z) dt + sigma dW` started at `x`
/// in `(l, r)`, stopped at the first exit. Between grid points the chance of
/// an unseen crossing is taken from the Brownian bridge,
/// `exp(-2 (l - z0)(l - z1) / (sigma^2 h))`.
pub fn autonomous_exit<T: Real, B: Fn(T) -> T>(
    b: &B,
    sigma: T,
    l: T,
    r: T,
    x: T,
    dt: T,
    t_max: T,
    seed: u64,
) -> ExitSample<T> {
    let mut rng = NormalStream::new(seed, 0x0E17);
    let mut uni = NormalStream::new(seed, 0x0E18);
    let mut z = x;
    let mut t = T::zero();
    let sq = dt.sqrt() * sigma;
    let two_over = c::<T>(2.0) / (sigma * sigma * dt);
    if z <= l {
        return ExitSample { via_right: false, time: t, exited: true };
    }
    if z >= r {
        return ExitSample { via_right: true, time: t, exited: true };
    }
    while t < t_max {
        let zn = z + b(z) * dt + sq * rng.next::<T>();
        t += dt;
        if zn >= r {
            return ExitSample { via_right: true, time: t, exited: true };
        }
        if zn <= l {
            return ExitSample { via_right: false, time: t, exited: true };
        }
        if r.is_finite() && T::lit(uni.uniform()) < (-(r - z) * (r - zn) * two_over).exp() {
            return ExitSample { via_right: true, time: t, exited: true };
        }
        if l.is_finite() && T::lit(uni.uniform()) < (-(z - l) * (zn - l) * two_over).exp() {
            return ExitSample { via_right: false, time: t, exited: true };
        }
        z = zn;
    }
    ExitSample { via_right: false, time: t, exited: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{blowup_time_deterministic, solve_deterministic, BlowupTime};
    use crate::paths::{make_path, Grid};
    use proptest::prelude::*;

    fn path(seed: u64, t0: f64, t1: f64, dt: f64) -> BrownianPath<f64> {
        make_path(seed, Grid::new(t0, t1, dt).unwrap()).unwrap()
    }

    fn opts(dt0: f64) -> SimOptions<f64> {
        SimOptions { dt0, ..Default::default() }
    }

    #[test]
    fn options_validation() {
        assert!(SimOptions::<f64>::default().validate().is_ok());
        for bad in [
            SimOptions { dt0: 0.0, ..Default::default() },
            SimOptions { x_cap: 50.0, ..Default::default() },
            SimOptions { band_delta: 1.0, ..Default::default() },
            SimOptions { horizon: 0.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn small_noise_tracks_closed_form() {
        let p = path(1, 0.0, 41.0, 1e-4);
        let o = opts(1e-4);
        let tr = simulate(0.0, 0.5, 1e-9, &p, &o).unwrap();
        assert_eq!(tr.fate, Fate::ConvergeZero);
        let mut worst = 0.0f64;
        for (t, x) in tr.times.iter().zip(&tr.values) {
            let exact = solve_deterministic(0.5, *t).unwrap().value().unwrap();
            worst = worst.max((x - exact).abs());
        }
        assert!(worst < 1e-3, "max deviation {worst}");
        let tr = simulate(0.0, 1.0, 1e-9, &p, &o).unwrap();
        let BlowupTime::At(tstar) = blowup_time_deterministic(1.0) else { panic!() };
        match tr.fate {
            Fate::BlowUp(b) => assert!((b - tstar).abs() < 1e-2 && (b - 1.2816).abs() < 1e-2, "beta {b}"),
            f => panic!("{f}"),
        }
        let n = tr.values.len();
        assert!(tr.values[n - 20..].windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn far_above_the_diagonal_blows_up() {
        let o = SimOptions::default().unrecorded();
        let blown = (0..1000u64)
            .filter(|&i| {
                let mut lp = LazyPath::new(i, 25.0, 1e-3);
                simulate_lazy(25.0, 28.0, 1.0, &mut lp, &o).unwrap().fate.is_blowup()
            })
            .count();
        assert!(blown >= 990);
    }

    #[test]
    fn general_driver_consistency() {
        let p = path(4, 0.0, 45.0, 1e-3);
        let o = opts(1e-3).non_adaptive();
        let a = simulate(2.0, 1.5, 0.7, &p, &o).unwrap();
        let b = simulate_general(2.0, 1.5, |t| 0.7 * p.value_at(t).unwrap(), &o).unwrap();
        assert_eq!(a, b);
        // zero driver equals the deterministic Euler scheme
        let z = simulate_general(0.0, 0.5, |_| 0.0, &opts(1e-4)).unwrap();
        for (t, x) in z.times.iter().zip(&z.values).step_by(500) {
            let exact = solve_deterministic(0.5, *t).unwrap().value().unwrap();
            assert!((x - exact).abs() < 1e-3);
        }
    }

    #[test]
    fn infimum_lower_bound() {
        // H(t) = -t from x = -1: min X >= -1 + inf (H(u) - H(t)) = -3
        let o = SimOptions { horizon: 2.0, max_doublings: 0, ..opts(1e-3) };
        let tr = simulate_general(0.0, -1.0, |t: f64| -t, &o).unwrap();
        let m = tr.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(m >= -3.0 - 1e-2 * 2.0);
        // a rougher driver with known running minimum of increments
        let p = path(8, 0.0, 12.0, 1e-3);
        let o = SimOptions { horizon: 2.0, max_doublings: 0, ..opts(1e-3) };
        let tr = simulate(0.0, -0.5, 2.0, &p, &o).unwrap();
        let k_end = p.index_of(2.0).unwrap();
        let mut run_max = f64::NEG_INFINITY;
        let mut inf_inc = 0.0f64;
        for k in 0..=k_end {
            let h = 2.0 * p.values[k];
            run_max = run_max.max(h);
            inf_inc = inf_inc.min(h - run_max);
        }
        let m = tr.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(m >= -0.5f64.min(0.0) + inf_inc - 1e-2 * 1.5);
    }

    #[test]
    fn blowup_before_unit_time_for_large_start() {
        let drivers: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|_| 0.0),
            Box::new(|t| -t),
            Box::new(|t| -2.0 * t),
            Box::new(|t| t * t),
            Box::new(|t| -t * t),
            Box::new(|t| (5.0 * t).sin()),
            Box::new(|t| -3.0 * (2.0 * t).sin()),
            Box::new(|t| 0.5 * (20.0 * t).cos() - 0.5),
            Box::new(|t| -(t * 7.0).sin().abs()),
            Box::new(|t| 4.0 * t * (t - 1.0)),
        ];
        for h in &drivers {
            let h_star = (0..=10_000).map(|i| h(i as f64 * 1e-4) - h(0.0)).fold(0.0f64, f64::min);
            // Y' = Y^2 / 2 from y0 blows up at 2 / y0; y0 = 2.5 gives 0.8
            let x = (3.0 - h_star).max(3.5 - h_star);
            let tr = simulate_general(0.0, x, |t| h(t), &opts(1e-4)).unwrap();
            match tr.fate {
                Fate::BlowUp(b) => assert!(b < 1.0, "beta {b}"),
                f => panic!("{f}"),
            }
        }
    }

    #[test]
    fn first_hit_contract() {
        let p = path(2, 25.0, 70.0, 1e-3);
        let o = opts(1e-3);
        let r = first_hit(25.0, 26.0, 1.0, &p, &[24.0, 26.0], &o).unwrap();
        assert_eq!(r, HitResult { which: Some(1), when: 25.0 });
        let r = first_hit(25.0, 25.0, 1.0, &p, &[24.0, 26.0], &o).unwrap();
        assert!(r.which.is_some() && r.when >= 25.0);
        assert!(first_hit(25.0, 25.0, 1.0, &p, &[26.0, 24.0], &o).is_err());
    }

    #[test]
    fn symmetric_band_first_hit_frequency() {
        // the band [s-1, s+1] around x = s: the hit frequency of the top level
        // is close to Phi(-sqrt2 / sqrt s) because the river sits near s + 1/s
        let o = opts(1e-3).unrecorded();
        let n = 10_000;
        let mut top = 0;
        for i in 0..n {
            let mut lp = LazyPath::new(50_000 + i as u64, 25.0, 1e-3);
            let mut d = PathDriver::new(&mut lp, 25.0, 1.0).unwrap();
            let (r, _) = first_hit_with(25.0, 25.0, &mut d, &[24.0, 26.0], |_| 0.0, &o).unwrap();
            if r.which == Some(1) {
                top += 1;
            }
        }
        let p_hat = top as f64 / n as f64;
        let se = (p_hat * (1.0 - p_hat) / n as f64).sqrt();
        let corrected = crate::special::phi(-(2.0f64 / 25.0).sqrt());
        assert!((p_hat - corrected).abs() < 3.0 * se + 0.02, "p_hat {p_hat} vs {corrected}");
    }

    #[test]
    fn bundle_ordering_and_identity() {
        let p = path(3, 25.0, 70.0, 1e-3);
        let o = opts(1e-3).non_adaptive();
        let b = simulate_bundle(25.0, &[0.4, 0.4], 1.0, &p, &o).unwrap();
        assert_eq!(b.trajectories[0], b.trajectories[1]);
        let b = simulate_bundle(25.0, &[0.0, 0.5], 1.0, &p, &o).unwrap();
        let (lo, hi) = (&b.trajectories[0], &b.trajectories[1]);
        for (x, y) in lo.values.iter().zip(&hi.values) {
            assert!(x <= y);
        }
        assert!((b.clamp_events as f64) < 1e-4 * b.member_steps as f64);
        assert!(simulate_bundle(25.0, &[1.0, 0.0], 1.0, &p, &o).is_err());
    }

    #[test]
    fn strong_order_under_halving() {
        let (mut e0, mut e1) = (Vec::new(), Vec::new());
        let mut seed = 0;
        while e0.len() < 100 {
            seed += 1;
            let coarse = path(seed, 0.0, 8.0, 0.02);
            let fine = coarse.refine(16).unwrap();
            // restriction of the fine path, so all three share one Brownian path
            let half = BrownianPath {
                seed,
                grid: Grid::new(0.0, 8.0, 0.01).unwrap(),
                values: fine.values.iter().step_by(8).copied().collect(),
            };
            let base = SimOptions { horizon: 1.0, max_doublings: 0, ..Default::default() }.non_adaptive();
            let at = |p: &BrownianPath<f64>| {
                let tr = simulate(0.0, 0.3, 1.0, p, &SimOptions { dt0: p.dt(), ..base }).unwrap();
                tr.times.iter().position(|&t| (t - 1.0).abs() < 1e-9).map(|k| tr.values[k])
            };
            // pre-blow-up segments only
            if let (Some(c0), Some(c1), Some(r)) = (at(&coarse), at(&half), at(&fine)) {
                e0.push((c0 - r).abs());
                e1.push((c1 - r).abs());
            }
        }
        let median = |v: &mut Vec<f64>| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            0.5 * (v[49] + v[50])
        };
        let ratio = median(&mut e0) / median(&mut e1);
        assert!(ratio >= 2.0, "median error ratio {ratio}");
    }

    #[test]
    fn fate_stable_under_refinement() {
        let o = opts(1e-3).unrecorded();
        let oh = opts(5e-4).unrecorded();
        for &x in &[9.0, 10.0, 11.0] {
            let agree = (0..1000u64)
                .filter(|&i| {
                    let p = path(i, 10.0, 50.0, 1e-3);
                    let a = simulate(10.0, x, 1.0, &p, &o).unwrap().fate;
                    let b = simulate(10.0, x, 1.0, &p.refine(2).unwrap(), &oh).unwrap().fate;
                    a.is_blowup() == b.is_blowup()
                })
                .count();
            assert!(agree >= 950, "x = {x}: {agree}");
        }
    }

    #[test]
    fn horizon_doubling_resolves() {
        // a start on the river at s = 0 hovers near the diagonal for a while
        let p = path(5, 0.0, 45.0, 1e-3);
        let short = SimOptions { horizon: 2.0, max_doublings: 0, ..opts(1e-3) };
        let tr = simulate(0.0, 0.79, 0.01, &p, &short).unwrap();
        assert_eq!(tr.fate, Fate::Undecided);
        let longer = SimOptions { horizon: 2.0, max_doublings: 3, ..opts(1e-3) };
        let tr = simulate(0.0, 0.79, 0.01, &p, &longer).unwrap();
        assert_eq!(tr.fate, Fate::ConvergeZero);
        assert!(tr.horizon_end > 2.0);
    }

    #[test]
    fn csv_trailer() {
        let p = path(6, 0.0, 45.0, 1e-3);
        let tr = simulate(0.0, 1.0, 0.1, &p, &opts(1e-3)).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x\n"));
        assert!(text.trim_end().lines().last().unwrap().starts_with("# fate="));
    }

    #[test]
    fn generic_f32_run() {
        let p = make_path(1, Grid::new(0.0f32, 45.0, 1e-3).unwrap()).unwrap();
        let o = SimOptions::<f32> { dt0: 1e-3, ..Default::default() };
        let tr = simulate(0.0f32, 0.2, 0.1, &p, &o).unwrap();
        assert_eq!(tr.fate, Fate::ConvergeZero);
    }

    #[test]
    fn autonomous_brownian_exit() {
        let n = 4000;
        let mut right = 0;
        let mut time = 0.0;
        for i in 0..n {
            let e = autonomous_exit(&|_u: f64| 0.0, 1.0, -1.0, 1.0, 0.5, 1e-3, 100.0, i);
            assert!(e.exited);
            right += e.via_right as usize;
            time += e.time;
        }
        let p = right as f64 / n as f64;
        assert!((p - 0.75).abs() < 3.0 * (0.75f64 * 0.25 / n as f64).sqrt());
        // E = (r - x)(x - l) = 0.75, exit time variance is small
        assert!((time / n as f64 - 0.75).abs() < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn bundle_preserves_order(seed in 0u64..500, a in -3.0f64..3.0, d in 0.0f64..2.0, s in 0.0f64..20.0) {
            let s = (s * 10.0).round() / 10.0;
            let p = path(seed, s, s + 45.0, 1e-3);
            let o = SimOptions { horizon: 5.0, max_doublings: 0, record: true, ..opts(1e-3) }.non_adaptive();
            let b = simulate_bundle(s, &[s + a, s + a + d], 1.0, &p, &o).unwrap();
            let (lo, hi) = (&b.trajectories[0], &b.trajectories[1]);
            for (x, y) in lo.values.iter().zip(&hi.values) {
                prop_assert!(x <= y);
            }
            prop_assert!(!(lo.fate.is_blowup() && hi.fate == Fate::ConvergeZero));
        }

        #[test]
        fn single_runs_are_monotone_in_start(seed in 0u64..500, a in -3.0f64..3.0, d in 1e-9f64..1.0) {
            let p = path(seed, 10.0, 55.0, 1e-3);
            let o = opts(1e-3).non_adaptive().unrecorded();
            let lo = simulate(10.0, 10.0 + a, 1.0, &p, &o).unwrap().fate;
            let hi = simulate(10.0, 10.0 + a + d, 1.0, &p, &o).unwrap().fate;
            prop_assert!(!(lo.is_blowup() && hi == Fate::ConvergeZero));
            if let (Fate::BlowUp(bl), Fate::BlowUp(bh)) = (lo, hi) {
                prop_assert!(bh <= bl + 1e-9);
            }
        }
    }
}
