//! Monte Carlo estimates of blow-up, convergence, band-exit and hitting
//! probabilities, and the table comparing `B(s, s + z sigma / sqrt(2s))`
//! with `phi(z)`.
//!
//! Path `i` of a run uses the Brownian path with seed `seed0 + i` started at
//! `s`. Two estimates with the same `seed0` are therefore coupled path by
//! path. Undecided runs are counted in `n` but never in `hits`.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use crate::sde::{first_hit_with, simulate_lazy, Fate, PathDriver, SimOptions};
use crate::paths::LazyPath;
use crate::special::phi;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MCEstimate<T> {
    pub p_hat: T,
    pub n: usize,
    pub std_err: T,
    pub hits: usize,
    pub n_undecided: usize,
    pub seed0: u64,
}

impl<T: Real> MCEstimate<T> {
    pub fn from_counts(hits: usize, n_undecided: usize, n: usize, seed0: u64) -> Self {
        let nf = T::from_usize_(n.max(1));
        let p = T::from_usize_(hits) / nf;
        MCEstimate { p_hat: p, n, std_err: (p * (T::one() - p) / nf).sqrt(), hits, n_undecided, seed0 }
    }

    pub fn undecided_fraction(&self) -> T {
        T::from_usize_(self.n_undecided) / T::from_usize_(self.n.max(1))
    }
}

/// Fates of `n` runs from one start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FateCounts {
    pub n: usize,
    pub blowup: usize,
    pub converge: usize,
    pub undecided: usize,
    pub seed0: u64,
}

impl FateCounts {
    pub fn blowup<T: Real>(&self) -> MCEstimate<T> {
        MCEstimate::from_counts(self.blowup, self.undecided, self.n, self.seed0)
    }

    pub fn converge<T: Real>(&self) -> MCEstimate<T> {
        MCEstimate::from_counts(self.converge, self.undecided, self.n, self.seed0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Yes,
    No,
    Undecided,
}

fn check_n(n: usize) -> Result<()> {
    if n < 100 {
        return Err(Error::InvalidArgument(format!("need at least 100 paths, got {n}")));
    }
    Ok(())
}

/// Runs `f` on seeds `seed0 .. seed0 + n` in parallel and tallies outcomes.
fn tally<F>(n: usize, seed0: u64, f: F) -> Result<(usize, usize, usize)>
where
    F: Fn(u64) -> Result<Outcome> + Sync,
{
    let outcomes: Vec<Outcome> = (0..n as u64).into_par_iter().map(|i| f(seed0.wrapping_add(i))).collect::<Result<_>>()?;
    let yes = outcomes.iter().filter(|&&o| o == Outcome::Yes).count();
    let und = outcomes.iter().filter(|&&o| o == Outcome::Undecided).count();
    Ok((yes, n - yes - und, und))
}

fn unrecorded<T: Real>(opts: &SimOptions<T>) -> Result<SimOptions<T>> {
    opts.validate()?;
    Ok(SimOptions { record: false, ..*opts })
}

/// Fate counts of `n_paths` runs from `(s, x)`.
pub fn fate_counts<T: Real>(s: T, x: T, sigma: T, n_paths: usize, opts: &SimOptions<T>, seed0: u64) -> Result<FateCounts> {
    check_n(n_paths)?;
    let o = unrecorded(opts)?;
    let fates: Vec<u8> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut lp = LazyPath::new(seed0.wrapping_add(i), s, o.dt0);
            simulate_lazy(s, x, sigma, &mut lp, &o).map(|tr| match tr.fate {
                Fate::BlowUp(_) => 0u8,
                Fate::ConvergeZero => 1,
                Fate::Undecided => 2,
            })
        })
        .collect::<Result<_>>()?;
    let count = |k: u8| fates.iter().filter(|&&f| f == k).count();
    Ok(FateCounts { n: n_paths, blowup: count(0), converge: count(1), undecided: count(2), seed0 })
}

/// Estimate of the blow-up probability `B(s, x)`.
pub fn estimate_b<T: Real>(s: T, x: T, sigma: T, n_paths: usize, opts: &SimOptions<T>, seed0: u64) -> Result<MCEstimate<T>> {
    Ok(fate_counts(s, x, sigma, n_paths, opts, seed0)?.blowup())
}

/// Estimate of the convergence probability `C(s, x)`.
pub fn estimate_c<T: Real>(s: T, x: T, sigma: T, n_paths: usize, opts: &SimOptions<T>, seed0: u64) -> Result<MCEstimate<T>> {
    Ok(fate_counts(s, x, sigma, n_paths, opts, seed0)?.converge())
}

/// Probability that `X(t) - t`, started at `x_offset`, leaves `[-1, 1]`
/// through `1`. Runs that leave neither way are undecided.
pub fn estimate_p_plus<T: Real>(
    s: T,
    x_offset: T,
    sigma: T,
    n_paths: usize,
    opts: &SimOptions<T>,
    seed0: u64,
) -> Result<MCEstimate<T>> {
    check_n(n_paths)?;
    if !(x_offset.abs() <= T::one()) {
        return Err(Error::InvalidArgument(format!("x_offset = {x_offset} outside [-1, 1]")));
    }
    if x_offset.abs() == T::one() {
        let hits = if x_offset > T::zero() { n_paths } else { 0 };
        return Ok(MCEstimate::from_counts(hits, 0, n_paths, seed0));
    }
    let o = unrecorded(opts)?;
    let levels = [-T::one(), T::one()];
    let (yes, _, und) = tally(n_paths, seed0, |seed| {
        let mut lp = LazyPath::new(seed, s, o.dt0);
        let mut d = PathDriver::new(&mut lp, s, sigma)?;
        let (hit, _) = first_hit_with(s, s + x_offset, &mut d, &levels, |t| t, &o)?;
        Ok(match hit.which {
            Some(1) => Outcome::Yes,
            Some(_) => Outcome::No,
            None => Outcome::Undecided,
        })
    })?;
    Ok(MCEstimate::from_counts(yes, und, n_paths, seed0))
}

/// Probability of hitting `0` before `s` from `(s, x)`, `0 < x < s`.
pub fn estimate_rho<T: Real>(s: T, x: T, sigma: T, n_paths: usize, opts: &SimOptions<T>, seed0: u64) -> Result<MCEstimate<T>> {
    check_n(n_paths)?;
    if !(x > T::zero() && x < s) {
        return Err(Error::InvalidArgument(format!("need 0 < x < s, got x = {x}, s = {s}")));
    }
    let o = unrecorded(opts)?;
    let levels = [T::zero(), s];
    let (yes, _, und) = tally(n_paths, seed0, |seed| {
        let mut lp = LazyPath::new(seed, s, o.dt0);
        let mut d = PathDriver::new(&mut lp, s, sigma)?;
        let (hit, _) = first_hit_with(s, x, &mut d, &levels, |_| T::zero(), &o)?;
        Ok(match hit.which {
            Some(0) => Outcome::Yes,
            Some(_) => Outcome::No,
            None => Outcome::Undecided,
        })
    })?;
    Ok(MCEstimate::from_counts(yes, und, n_paths, seed0))
}

/// Probability that the run from `(s, 0)` stays in `[-1, 1]` up to its end
/// and settles within `band_delta` of zero.
pub fn estimate_chi<T: Real>(s: T, sigma: T, n_paths: usize, opts: &SimOptions<T>, seed0: u64) -> Result<MCEstimate<T>> {
    check_n(n_paths)?;
    let o = unrecorded(opts)?;
    let levels = [-T::one(), T::one()];
    let (yes, _, und) = tally(n_paths, seed0, |seed| {
        let mut lp = LazyPath::new(seed, s, o.dt0);
        let mut d = PathDriver::new(&mut lp, s, sigma)?;
        let (hit, tr) = first_hit_with(s, T::zero(), &mut d, &levels, |_| T::zero(), &o)?;
        Ok(match (hit.which, tr.fate) {
            (Some(_), _) => Outcome::No,
            (None, Fate::ConvergeZero) => Outcome::Yes,
            (None, _) => Outcome::Undecided,
        })
    })?;
    Ok(MCEstimate::from_counts(yes, und, n_paths, seed0))
}

/// Sample mean of a duration over decided runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanEstimate<T> {
    pub mean: T,
    pub std_err: T,
    pub n: usize,
    pub n_undecided: usize,
    pub seed0: u64,
}

/// Mean of `tau - s`, where `tau` is the first time `X(t) - t`, started at
/// `x_offset`, leaves `[-1, 1]`. Runs that never leave are undecided and
/// left out of the mean.
pub fn estimate_band_exit_time<T: Real>(
    s: T,
    x_offset: T,
    sigma: T,
    n_paths: usize,
    opts: &SimOptions<T>,
    seed0: u64,
) -> Result<MeanEstimate<T>> {
    check_n(n_paths)?;
    if !(x_offset.abs() <= T::one()) {
        return Err(Error::InvalidArgument(format!("x_offset = {x_offset} outside [-1, 1]")));
    }
    let o = unrecorded(opts)?;
    let levels = [-T::one(), T::one()];
    let times: Vec<Option<T>> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut lp = LazyPath::new(seed0.wrapping_add(i), s, o.dt0);
            let mut d = PathDriver::new(&mut lp, s, sigma)?;
            let (hit, _) = first_hit_with(s, s + x_offset, &mut d, &levels, |t| t, &o)?;
            Ok(hit.which.map(|_| hit.when - s))
        })
        .collect::<Result<_>>()?;
    let done: Vec<T> = times.iter().flatten().copied().collect();
    let m = done.len();
    let mf = T::from_usize_(m.max(1));
    let mean = done.iter().fold(T::zero(), |a, &b| a + b) / mf;
    let var = done.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) / T::from_usize_(m.max(2) - 1);
    Ok(MeanEstimate { mean, std_err: (var / mf).sqrt(), n: n_paths, n_undecided: n_paths - m, seed0 })
}

/// One row of the comparison of `B` with its normal limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Theorem2Row<T> {
    pub s: T,
    pub z: T,
    pub x: T,
    pub b_hat: MCEstimate<T>,
    pub phi_z: T,
}

impl<T: Real> Theorem2Row<T> {
    pub fn deviation(&self) -> T {
        (self.b_hat.p_hat - self.phi_z).abs()
    }
}

/// `x = s + z sigma / sqrt(2 s)`.
pub fn diagonal_offset<T: Real>(s: T, z: T, sigma: T) -> T {
    s + z * sigma / (c::<T>(2.0) * s).sqrt()
}

/// Estimates `B(s, s + z sigma / sqrt(2s))` for each `z`. Row `k` uses seeds
/// from `seed0 + k n_paths`, so rows are independent.
pub fn theorem2_curve<T: Real>(
    s: T,
    zs: &[T],
    sigma: T,
    n_paths: usize,
    opts: &SimOptions<T>,
    seed0: u64,
) -> Result<Vec<Theorem2Row<T>>> {
    if !(s > T::zero()) {
        return Err(Error::InvalidArgument(format!("s = {s} must be positive")));
    }
    zs.iter()
        .enumerate()
        .map(|(k, &z)| {
            let x = diagonal_offset(s, z, sigma);
            let seed = seed0.wrapping_add((k * n_paths) as u64);
            let b_hat = estimate_b(s, x, sigma, n_paths, opts, seed)?;
            Ok(Theorem2Row { s, z, x, b_hat, phi_z: phi(z) })
        })
        .collect()
}

pub const THEOREM2_HEADER: &str = "s,z,x,p_hat,std_err,n,n_undecided,phi_z";

pub fn write_theorem2_csv<T: Real, W: Write>(rows: &[Theorem2Row<T>], mut w: W) -> Result<()> {
    writeln!(w, "{THEOREM2_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.s, r.z, r.x, r.b_hat.p_hat, r.b_hat.std_err, r.b_hat.n, r.b_hat.n_undecided, r.phi_z
        )?;
    }
    Ok(())
}

/// Largest amount by which consecutive rows decrease in `p_hat`, in units
/// of their pooled standard error.
pub fn isotonic_violation<T: Real>(rows: &[Theorem2Row<T>]) -> T {
    rows.windows(2)
        .map(|w| {
            let drop = w[0].b_hat.p_hat - w[1].b_hat.p_hat;
            let pooled = (w[0].b_hat.std_err.powi(2) + w[1].b_hat.std_err.powi(2)).sqrt();
            if drop > T::zero() {
                if pooled > T::zero() {
                    drop / pooled
                } else {
                    T::infinity()
                }
            } else {
                T::zero()
            }
        })
        .fold(T::zero(), T::max)
}

/// Grid of diagonal blow-up runs read from JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Theorem2Config {
    pub s: Vec<f64>,
    pub z: Vec<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub seed0: u64,
    #[serde(default)]
    pub opts: SimOptions<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_n() -> usize {
    10_000
}

impl Theorem2Config {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    pub fn run(&self) -> Result<Vec<Theorem2Row<f64>>> {
        let mut out = Vec::new();
        for (k, &s) in self.s.iter().enumerate() {
            let seed = self.seed0.wrapping_add((k * self.z.len() * self.n) as u64);
            out.extend(theorem2_curve(s, &self.z, self.sigma, self.n, &self.opts, seed)?);
        }
        Ok(out)
    }
}
