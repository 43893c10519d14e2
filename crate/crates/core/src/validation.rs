//! The acceptance criteria as runnable checks. Each check computes its
//! quantities, compares them with fixed tolerances and reports a one-line
//! detail. Wall time counts: a check that exceeds its budget fails.

use crate::closed_form::{
    blowup_time_deterministic, classify_deterministic, critical_initial, critical_solution, solve_deterministic,
    BlowupTime, DetValue, Regime,
};
use crate::diffusion::{affine_exit_prob, exit_prob, expected_exit_time, feller_classify, Drift, Explosion};
use crate::error::{Error, Result};
use crate::estimators::{
    estimate_b, estimate_band_exit_time, estimate_chi, estimate_rho, theorem2_curve, Theorem2Row,
};
use crate::oracle::Dp45;
use crate::paths::{make_path, BrownianPath, Grid};
use crate::river::{
    advance, deterministic_gamma, expansion_error_against, locate_river, locate_river_extrapolated, loglog_slope,
    oscillation_events, theorem4_diagnostic, track_river,
};
use crate::sde::{autonomous_exit, SimOptions};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Deterministic,
    Calculus,
    Sde,
    River,
    Expansion,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = ["deterministic", "calculus", "sde", "river", "expansion", "all"];

    pub fn criteria(self) -> Vec<u32> {
        match self {
            Suite::Deterministic => vec![1, 2, 3],
            Suite::Calculus => vec![4, 5],
            Suite::Sde => vec![6, 7, 8, 12],
            Suite::River => vec![9, 10],
            Suite::Expansion => vec![11],
            Suite::All => (1..=12).collect(),
        }
    }
}

impl FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "deterministic" => Suite::Deterministic,
            "calculus" => Suite::Calculus,
            "sde" | "estimators" => Suite::Sde,
            "river" => Suite::River,
            "expansion" => Suite::Expansion,
            "all" => Suite::All,
            _ => return Err(Error::InvalidArgument(format!("unknown suite {s:?}; expected one of {:?}", Suite::NAMES))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
    pub budget: f64,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: {} ({:.2} s of {} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds,
            self.budget
        )
    }
}

/// Name and wall-time budget in seconds.
pub fn describe(id: u32) -> Option<(&'static str, f64)> {
    Some(match id {
        1 => ("deterministic closed form", 1.0),
        2 => ("trichotomy threshold", 1.0),
        3 => ("critical asymptotics", 1.0),
        4 => ("diffusion calculus vs Monte Carlo", 120.0),
        5 => ("Feller classification", 10.0),
        6 => ("normal limit at desk scale", 600.0),
        7 => ("near-diagonal bounds", 300.0),
        8 => ("band mean exit time", 120.0),
        9 => ("river locator", 600.0),
        10 => ("decay and oscillation surrogates", 1200.0),
        11 => ("recursive expansion", 600.0),
        12 => ("blow-up from far below", 120.0),
        _ => return None,
    })
}

pub fn run_criterion(id: u32) -> Result<CriterionResult> {
    let (name, budget) = describe(id).ok_or_else(|| Error::InvalidArgument(format!("no criterion {id}")))?;
    let start = Instant::now();
    let outcome = match id {
        1 => c1_closed_form(),
        2 => c2_threshold(),
        3 => c3_asymptotics(),
        4 => c4_calculus(),
        5 => c5_feller(),
        6 => c6_normal_limit(),
        7 => c7_near_diagonal_bounds(),
        8 => c8_band_exit_time(),
        9 => c9_locator(),
        10 => c10_surrogates(),
        11 => c11_expansion(),
        _ => c12_far_below(),
    };
    let seconds = start.elapsed().as_secs_f64();
    let (ok, mut detail) = match outcome {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    if seconds >= budget {
        detail.push_str("; over time budget");
    }
    Ok(CriterionResult { id, name, pass: ok && seconds < budget, detail, seconds, budget })
}

pub fn run_suite(suite: Suite) -> Result<Vec<CriterionResult>> {
    suite.criteria().into_iter().map(run_criterion).collect()
}

type Outcome = Result<(bool, String)>;

fn opts() -> SimOptions<f64> {
    SimOptions::default()
}

fn path(seed: u64, t0: f64, t1: f64) -> Result<BrownianPath<f64>> {
    make_path(seed, Grid::new(t0, t1, 1e-3)?)
}

fn c1_closed_form() -> Outcome {
    let mut worst = 0.0f64;
    for x0 in [-1.0f64, 0.0, 0.5, 0.79, 1.2] {
        let t_end = match blowup_time_deterministic(x0) {
            BlowupTime::At(ts) => (ts - 0.1).min(5.0),
            BlowupTime::Never => 5.0,
        };
        let mut ode = Dp45::with_tolerances(|t: f64, x: f64| x * (x - t), 0.0, x0, 1e-10, 1e-300);
        for k in 0..=50 {
            let t = t_end * k as f64 / 50.0;
            let r = ode.advance_to(t)?;
            let v = match solve_deterministic(x0, t)? {
                DetValue::Value(v) => v,
                DetValue::BlownUp => return Ok((false, format!("x0 = {x0} blew up at t = {t}"))),
            };
            let rel = if r == 0.0 { v.abs() } else { ((v - r) / r).abs() };
            worst = worst.max(rel);
        }
    }
    Ok((worst <= 1e-8, format!("max relative error {worst:.2e} (limit 1e-8)")))
}

/// Blow-up time from the reciprocal `w = 1/x`, which solves the linear
/// equation `w' = t w - 1` and crosses zero at the blow-up time.
fn reciprocal_blowup_time(x0: f64) -> Result<f64> {
    let w = |t: f64| Dp45::with_tolerances(|s: f64, w: f64| s * w - 1.0, 0.0, 1.0 / x0, 1e-13, 1e-15).advance_to(t);
    let (mut lo, mut hi) = (0.0, 1.0);
    while w(hi)? > 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 {
        let mid = 0.5 * (lo + hi);
        if w(mid)? > 0.0 {
            lo = mid
        } else {
            hi = mid
        }
    }
    Ok(0.5 * (lo + hi))
}

fn c2_threshold() -> Outcome {
    let xc: f64 = critical_initial();
    let flips = classify_deterministic(xc + 1e-12) == Regime::BlowsUp
        && classify_deterministic(xc - 1e-12) == Regime::ConvergesToZero
        && classify_deterministic(xc) == Regime::Critical;
    let t = match blowup_time_deterministic(1.0) {
        BlowupTime::At(t) => t,
        BlowupTime::Never => return Ok((false, "x0 = 1 reported as never blowing up".into())),
    };
    let oracle = reciprocal_blowup_time(1.0)?;
    let gap = (t - oracle).abs();
    Ok((
        flips && gap <= 1e-3,
        format!(
            "threshold flips: {flips}; t*(1) = {t:.6}, oracle {oracle:.6}, gap {gap:.1e} (limit 1e-3); offset from 1.2816 is {:.4}",
            t - 1.2816
        ),
    ))
}

fn c3_asymptotics() -> Outcome {
    let mut worst = 0.0f64;
    for t in [5.0f64, 10.0, 20.0, 40.0] {
        let v = (critical_solution(t) - (t + 1.0 / t - 2.0 / t.powi(3))).abs() * t.powi(5);
        worst = worst.max(v);
    }
    Ok((worst <= 10.0, format!("max t^5 |x_c - (t + 1/t - 2/t^3)| = {worst:.4} (limit 10)")))
}

struct ExitCase {
    drift: Drift<f64>,
    l: f64,
    r: f64,
    x: f64,
}

fn c4_calculus() -> Outcome {
    let cases = [
        ExitCase { drift: Drift::zero(), l: -1.0, r: 1.0, x: 0.3 },
        ExitCase { drift: Drift::affine(10.0, 0.0), l: -1.0, r: 1.0, x: 0.1 },
        ExitCase { drift: Drift::affine(10.0, 3.0), l: -1.0, r: 1.0, x: -0.2 },
        ExitCase { drift: Drift::frozen_quadratic(10.0), l: 0.0, r: 10.0, x: 9.0 },
    ];
    let n = 10_000u64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, cs) in cases.iter().enumerate() {
        let p = exit_prob(&cs.drift, 1.0, cs.l, cs.r, cs.x)?;
        let e = expected_exit_time(&cs.drift, 1.0, cs.l, cs.r, cs.x)?;
        let b = |u: f64| cs.drift.eval(u);
        let seed0 = 50_000 * (k as u64 + 1);
        let samples: Vec<_> =
            (0..n).into_par_iter().map(|i| autonomous_exit(&b, 1.0, cs.l, cs.r, cs.x, 1e-4, 200.0, seed0 + i)).collect();
        let nf = n as f64;
        let exited = samples.iter().all(|s| s.exited);
        let ph = samples.iter().filter(|s| s.via_right).count() as f64 / nf;
        // binomial standard error at the predicted value, which stays
        // meaningful when no path exits to the right
        let pse = (p * (1.0 - p) / nf).sqrt();
        let mean = samples.iter().map(|s| s.time).sum::<f64>() / nf;
        let var = samples.iter().map(|s| (s.time - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        let tse = (var / nf).sqrt();
        let good = exited && (ph - p).abs() <= 3.0 * pse && (mean - e).abs() <= 3.0 * tse;
        ok &= good;
        parts.push(format!(
            "{}: p {p:.4} vs {ph:.4}±{pse:.4}, E {e:.4} vs {mean:.4}±{tse:.4}",
            cs.drift.label
        ));
    }
    let mut worst = 0.0f64;
    for a in [0.0f64, 3.0] {
        let d = Drift::affine(10.0, a);
        for x in [-0.9f64, -0.5, -0.1, 0.0, 0.2, 0.6, 0.95] {
            worst = worst.max((affine_exit_prob(10.0, a, 1.0, x)? - exit_prob(&d, 1.0, -1.0, 1.0, x)?).abs());
        }
    }
    ok &= worst <= 1e-9;
    parts.push(format!("affine closed form vs quadrature {worst:.1e} (limit 1e-9)"));
    Ok((ok, parts.join("; ")))
}

fn c5_feller() -> Outcome {
    let inf = f64::INFINITY;
    let kinds = [
        (Drift::diagonal_comparison(10.0), Explosion::ExplodesToPlusInfinity),
        (Drift::zero(), Explosion::NoExplosion),
        (Drift::ou(1.0), Explosion::NoExplosion),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (d, want) in kinds {
        let got = feller_classify(&d, 1.0, -inf, inf)?.kind;
        ok &= got == want;
        parts.push(format!("{}: {got}", d.label));
    }
    Ok((ok, parts.join(", ")))
}

fn max_deviation(rows: &[Theorem2Row<f64>]) -> f64 {
    rows.iter().map(|r| r.deviation()).fold(0.0, f64::max)
}

fn c6_normal_limit() -> Outcome {
    let zs = [-2.0, -1.0, 0.0, 1.0, 2.0];
    let n = 10_000;
    let o = opts();
    let at25 = theorem2_curve(25.0, &zs, 1.0, n, &o, 0)?;
    let at10 = theorem2_curve(10.0, &zs, 1.0, n, &o, 1_000_000)?;
    let at40 = theorem2_curve(40.0, &zs, 1.0, n, &o, 2_000_000)?;
    let bands = at25.iter().all(|r| r.deviation() <= 3.0 * r.b_hat.std_err + 0.02);
    let (d10, d40) = (max_deviation(&at10), max_deviation(&at40));
    let und = at25
        .iter()
        .chain(&at10)
        .chain(&at40)
        .map(|r| r.b_hat.undecided_fraction())
        .fold(0.0f64, f64::max);
    let rows: Vec<String> = at25.iter().map(|r| format!("z={} {:.4}", r.z, r.b_hat.p_hat)).collect();
    Ok((
        bands && d40 < d10 && und < 0.02,
        format!(
            "s=25 [{}] within 3se+0.02: {bands}; max deviation s=10 {d10:.4}, s=40 {d40:.4}; max undecided {und:.4}",
            rows.join(", ")
        ),
    ))
}

fn c7_near_diagonal_bounds() -> Outcome {
    let o = opts();
    let above = estimate_b(25.0, 26.0, 1.0, 1000, &o, 0)?;
    let rho = estimate_rho(25.0, 24.0, 1.0, 1000, &o, 10_000)?;
    let chi = estimate_chi(25.0, 1.0, 1000, &o, 20_000)?;
    let zero = estimate_b(25.0, 0.0, 1.0, 1000, &o, 30_000)?;
    let ok = above.p_hat >= 0.99 && rho.p_hat >= 0.99 && chi.p_hat >= 0.95 && zero.hits == 0;
    Ok((
        ok,
        format!(
            "B(25,26) = {:.3}, rho(25,24) = {:.3}, chi(25) = {:.3}, blow-ups from (25,0): {}",
            above.p_hat, rho.p_hat, chi.p_hat, zero.hits
        ),
    ))
}

fn c8_band_exit_time() -> Outcome {
    let e = estimate_band_exit_time(25.0, 0.0, 1.0, 10_000, &opts(), 0)?;
    Ok((
        e.mean <= 4.0 + 0.1,
        format!("mean exit time {:.4} ± {:.4} (limit 4.1), undecided {}", e.mean, e.std_err, e.n_undecided),
    ))
}

fn c9_locator() -> Outcome {
    let o = opts();
    let xc: f64 = critical_initial();
    let surrogate = locate_river_extrapolated(&path(1, 0.0, 41.0)?, 0.0, 1e-9, 1e-7, &o)?;
    let gap = (surrogate.mid() - xc).abs();
    let part1 = surrogate.is_located() && gap <= 1e-6;

    let near: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| -> Result<usize> {
            let e = locate_river(&path(seed, 25.0, 70.0)?, 25.0, 1.0, 1e-3, &o)?;
            Ok(usize::from(e.is_located() && (e.mid() - 25.0).abs() < 1.0))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let part2 = near >= 95;

    let tol = 1e-4;
    let consistent: usize = (0..100u64)
        .into_par_iter()
        .map(|seed| -> Result<usize> {
            let p = path(10_000 + seed, 25.0, 71.0)?;
            let e = locate_river(&p, 25.0, 1.0, tol, &o)?;
            if !e.is_located() {
                return Ok(0);
            }
            let (Some(lo), Some(hi)) = (advance(&p, 25.0, e.lo, 25.5, 1.0, &o)?, advance(&p, 25.0, e.hi, 25.5, 1.0, &o)?)
            else {
                return Ok(0);
            };
            let f = locate_river(&p, 25.5, 1.0, tol, &o)?;
            Ok(usize::from(f.is_located() && f.hi >= lo - tol && f.lo <= hi + tol))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum();
    let part3 = consistent == 100;
    Ok((
        part1 && part2 && part3,
        format!(
            "surrogate gap {gap:.1e} (limit 1e-6); |R(25) - 25| < 1 in {near}/100; propagation consistent in {consistent}/100"
        ),
    ))
}

fn c10_surrogates() -> Outcome {
    let o = opts();
    let grid: Vec<f64> = (10..=40).map(f64::from).collect();
    let per_seed: Vec<(bool, bool)> = (0..50u64)
        .into_par_iter()
        .map(|seed| -> Result<(bool, bool)> {
            let series = track_river(&path(20_000 + seed, 10.0, 85.0)?, &grid, 1.0, 1e-3, &o)?;
            let decays = theorem4_diagnostic(&series, 0.4).map(|r| r.tail_median < 1.0).unwrap_or(false);
            let ev = oscillation_events(&series, 0.0);
            Ok((decays, !ev.above.is_empty() && !ev.below.is_empty()))
        })
        .collect::<Result<_>>()?;
    let decays = per_seed.iter().filter(|p| p.0).count();
    let both = per_seed.iter().filter(|p| p.1).count();
    Ok((decays >= 45 && both >= 45, format!("tail below 1 in {decays}/50 seeds; both signs in {both}/50 seeds")))
}

fn c11_expansion() -> Outcome {
    let ts = [5.0, 10.0, 20.0, 40.0];
    let det = path(0, 0.0, 52.0)?;
    let mut slopes = Vec::new();
    let mut ok = true;
    for n in 1..=2usize {
        let slope = loglog_slope(&ts, &deterministic_gamma(&det, n, &ts, 10.0)?);
        ok &= (slope + (2 * n + 1) as f64).abs() <= 0.3;
        slopes.push(slope);
    }
    let o = opts();
    let errs: Vec<[f64; 4]> = (0..50u64)
        .into_par_iter()
        .map(|seed| -> Result<[f64; 4]> {
            let p = path(30_000 + seed, 20.0, 65.0)?;
            let river = locate_river(&p, 20.0, 1.0, 1e-10, &o)?;
            let mut e = [0.0; 4];
            for (n, slot) in e.iter_mut().enumerate() {
                *slot = expansion_error_against(&p, n, 20.0, 1.0, &river, &o)?.error;
            }
            Ok(e)
        })
        .collect::<Result<_>>()?;
    let medians: Vec<f64> = (0..4)
        .map(|n| {
            let mut col: Vec<f64> = errs.iter().map(|e| e[n]).collect();
            col.sort_by(f64::total_cmp);
            0.5 * (col[24] + col[25])
        })
        .collect();
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    Ok((
        ok && monotone,
        format!(
            "deterministic slopes n=1 {:.3} (target -3), n=2 {:.3} (target -5); median errors at t=20 {:?}",
            slopes[0],
            slopes[1],
            medians.iter().map(|m| format!("{m:.2e}")).collect::<Vec<_>>()
        ),
    ))
}

fn c12_far_below() -> Outcome {
    let e = estimate_b(0.5, -20.0, 3.0, 1000, &opts(), 0)?;
    Ok((e.hits > 0, format!("{} blow-ups in 1000 paths from (0.5, -20) at sigma 3", e.hits)))
}
