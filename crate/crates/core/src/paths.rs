//! Seeded Brownian paths on uniform grids.
//!
//! Increments come from ChaCha8 keyed by the seed, with each grid step
//! consuming a fixed block of four 32-bit words. Any step can therefore be
//! regenerated in isolation, and a path on a longer grid extends a shorter
//! one with the same seed bit for bit.

use crate::error::{Error, Result};
use crate::scalar::{c, Real};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use std::io::{Read, Write};

const STREAM_PATH: u64 = 0;
const STREAM_REFINE: u64 = 0x5EED_0000_0000_0001;
const STREAM_BRIDGE: u64 = 0x5EED_0000_0000_0002;

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard normal draws, one per block of four 32-bit words.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NormalStream { rng }
    }

    /// Positions the stream so that the next draw is draw number `index`.
    pub fn at(seed: u64, stream: u64, index: u64) -> Self {
        let mut s = Self::new(seed, stream);
        s.rng.set_word_pos(4 * index as u128);
        s
    }

    pub fn next_f64(&mut self) -> f64 {
        // Box-Muller, cosine branch only; u1 lies in (0, 1)
        let u1 = ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    pub fn next<T: Real>(&mut self) -> T {
        T::lit(self.next_f64())
    }

    /// Uniform on [0, 1), consuming one block.
    pub fn uniform(&mut self) -> f64 {
        let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        self.rng.next_u64();
        u
    }
}

/// Uniform time grid `t0, t0 + dt, ..., t1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid<T> {
    pub t0: T,
    pub t1: T,
    pub dt: T,
}

impl<T: Real> Grid<T> {
    pub fn new(t0: T, t1: T, dt: T) -> Result<Self> {
        let g = Grid { t0, t1, dt };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0.is_finite() && self.t1.is_finite() && self.dt.is_finite()) {
            return Err(Error::InvalidGrid("non-finite field".into()));
        }
        if self.dt <= T::zero() {
            return Err(Error::InvalidGrid(format!("dt = {} must be positive", self.dt)));
        }
        if self.t1 <= self.t0 {
            return Err(Error::InvalidGrid(format!("t1 = {} must exceed t0 = {}", self.t1, self.t0)));
        }
        if self.steps_f64() > 1e9 {
            return Err(Error::InvalidGrid("more than 1e9 steps".into()));
        }
        Ok(())
    }

    fn steps_f64(&self) -> f64 {
        ((self.t1 - self.t0) / self.dt).f64().round()
    }

    pub fn steps(&self) -> usize {
        self.steps_f64() as usize
    }

    pub fn nodes(&self) -> usize {
        self.steps() + 1
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + T::from_usize_(k) * self.dt
    }

    /// Index of the node at time `t`, if `t` is a node up to rounding.
    pub fn index_of(&self, t: T) -> Result<usize> {
        let q = ((t - self.t0) / self.dt).f64();
        let k = q.round();
        if k < 0.0 || k as usize > self.steps() || (q - k).abs() > 1e-6 {
            return Err(Error::OffGrid { t: t.f64() });
        }
        Ok(k as usize)
    }
}

/// A Wiener path sampled on a uniform grid, with `W(t0) = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath<T> {
    pub seed: u64,
    pub grid: Grid<T>,
    pub values: Vec<T>,
}

/// Fills `out` with `n` further partial sums of `sqrt(dt) N_k`.
fn extend_values<T: Real>(rng: &mut NormalStream, sqrt_dt: f64, n: usize, out: &mut Vec<T>, last: &mut f64) {
    out.reserve(n);
    for _ in 0..n {
        *last += sqrt_dt * rng.next_f64();
        out.push(T::lit(*last));
    }
}

pub fn make_path<T: Real>(seed: u64, grid: Grid<T>) -> Result<BrownianPath<T>> {
    grid.validate()?;
    let n = grid.steps();
    let mut values = Vec::with_capacity(n + 1);
    values.push(T::zero());
    let mut rng = NormalStream::new(seed, STREAM_PATH);
    let mut last = 0.0;
    extend_values(&mut rng, grid.dt.f64().sqrt(), n, &mut values, &mut last);
    Ok(BrownianPath { seed, grid, values })
}

impl<T: Real> BrownianPath<T> {
    pub fn t0(&self) -> T {
        self.grid.t0
    }

    pub fn t1(&self) -> T {
        self.grid.time(self.values.len() - 1)
    }

    pub fn dt(&self) -> T {
        self.grid.dt
    }

    pub fn time(&self, k: usize) -> T {
        self.grid.time(k)
    }

    pub fn index_of(&self, t: T) -> Result<usize> {
        self.grid.index_of(t)
    }

    pub fn value_at(&self, t: T) -> Result<T> {
        Ok(self.values[self.index_of(t)?])
    }

    /// `W(b) - W(a)` for grid nodes `a <= b`.
    pub fn increment(&self, a: T, b: T) -> Result<T> {
        if a > b {
            return Err(Error::InvalidArgument(format!("increment needs a <= b, got {a} > {b}")));
        }
        let (i, j) = (self.index_of(a)?, self.index_of(b)?);
        Ok(self.values[j] - self.values[i])
    }

    pub fn covers(&self, a: T, b: T) -> Result<()> {
        let tol = self.dt() * c(1e-6);
        if a < self.t0() - tol || b > self.t1() + tol {
            return Err(Error::Coverage { t0: self.t0().f64(), t1: self.t1().f64(), need0: a.f64(), need1: b.f64() });
        }
        Ok(())
    }

    /// Brownian-bridge refinement: `dt / factor`, existing nodes unchanged.
    pub fn refine(&self, factor: usize) -> Result<BrownianPath<T>> {
        if factor < 2 {
            return Err(Error::InvalidArgument(format!("refinement factor {factor} must be at least 2")));
        }
        let dt = self.dt().f64();
        let stream = STREAM_REFINE ^ splitmix64(dt.to_bits() ^ (factor as u64).rotate_left(32));
        let mut rng = NormalStream::new(self.seed, stream);
        let delta = dt / factor as f64;
        let mut values = Vec::with_capacity((self.values.len() - 1) * factor + 1);
        values.push(self.values[0]);
        for w in self.values.windows(2) {
            let (mut prev, end) = (w[0].f64(), w[1].f64());
            for j in 1..factor {
                let left = (factor - j + 1) as f64;
                let right = (factor - j) as f64;
                let mean = prev + (end - prev) / left;
                let var = delta * right / left;
                prev = mean + var.sqrt() * rng.next_f64();
                values.push(T::lit(prev));
            }
            values.push(w[1]);
        }
        let grid = Grid { t0: self.grid.t0, t1: self.grid.t1, dt: self.grid.dt / T::from_usize_(factor) };
        Ok(BrownianPath { seed: self.seed, grid, values })
    }

    /// Binary dump: seed, t0, t1, dt as little-endian 64-bit fields, then the
    /// node values as little-endian doubles.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.seed.to_le_bytes())?;
        for v in [self.grid.t0, self.grid.t1, self.grid.dt] {
            w.write_all(&v.f64().to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.f64().to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut b = [0u8; 8];
        r.read_exact(&mut b)?;
        let seed = u64::from_le_bytes(b);
        let mut hdr = [0f64; 3];
        for h in hdr.iter_mut() {
            r.read_exact(&mut b)?;
            *h = f64::from_le_bytes(b);
        }
        let grid = Grid::new(T::lit(hdr[0]), T::lit(hdr[1]), T::lit(hdr[2]))?;
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if rest.len() != 8 * grid.nodes() {
            return Err(Error::Io(format!("expected {} values, found {} bytes", grid.nodes(), rest.len())));
        }
        let values = rest.chunks_exact(8).map(|ch| T::lit(f64::from_le_bytes(ch.try_into().unwrap()))).collect();
        Ok(BrownianPath { seed, grid, values })
    }
}

/// A path with the values of [`make_path`] generated on demand, for
/// simulations whose stopping time is not known in advance.
#[derive(Clone, Debug)]
pub struct LazyPath<T> {
    pub seed: u64,
    pub t0: T,
    pub dt: T,
    values: Vec<T>,
    rng: NormalStream,
    last: f64,
    sqrt_dt: f64,
}

const LAZY_CHUNK: usize = 4096;

impl<T: Real> LazyPath<T> {
    pub fn new(seed: u64, t0: T, dt: T) -> Self {
        LazyPath {
            seed,
            t0,
            dt,
            values: vec![T::zero()],
            rng: NormalStream::new(seed, STREAM_PATH),
            last: 0.0,
            sqrt_dt: dt.f64().sqrt(),
        }
    }

    pub fn value(&mut self, k: usize) -> T {
        if k >= self.values.len() {
            let n = (k + 1 - self.values.len()).div_ceil(LAZY_CHUNK) * LAZY_CHUNK;
            extend_values(&mut self.rng, self.sqrt_dt, n, &mut self.values, &mut self.last);
        }
        self.values[k]
    }

    pub fn generated(&self) -> &[T] {
        &self.values
    }
}

/// Bridge sampler for points strictly inside grid cells, keyed by
/// `(seed, dt, cell)` so that repeated visits of a cell draw the same values.
pub(crate) fn bridge_stream(seed: u64, dt: f64, cell: usize) -> NormalStream {
    let stream = STREAM_BRIDGE ^ splitmix64(dt.to_bits());
    NormalStream::new(seed ^ splitmix64(cell as u64), stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn basic_contract() {
        let g = Grid::new(0.0, 1.0, 0.5).unwrap();
        let p = make_path(42, g).unwrap();
        assert_eq!(p.values.len(), 3);
        assert_eq!(p.values[0], 0.0);
        assert_eq!(p, make_path(42, g).unwrap());
        assert_ne!(p.values, make_path(43, g).unwrap().values);
        assert_eq!(p.increment(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(p.increment(0.0, 1.0).unwrap(), p.values[2]);
        assert!(p.increment(0.0, 0.25).is_err());
        assert!(Grid::new(0.0, 1.0, 0.0).is_err());
        assert!(Grid::new(1.0, 1.0, 0.1).is_err());
        assert!(p.refine(1).is_err());
    }

    #[test]
    fn longer_grid_extends_shorter_one() {
        let a = make_path(9, Grid::new(0.0, 1.0, 0.01).unwrap()).unwrap();
        let b = make_path(9, Grid::new(0.0, 3.0, 0.01).unwrap()).unwrap();
        assert_eq!(&b.values[..a.values.len()], &a.values[..]);
        let mut lazy = LazyPath::new(9, 0.0, 0.01);
        assert_eq!(lazy.value(300), b.values[300]);
        assert_eq!(&lazy.generated()[..301], &b.values[..]);
    }

    #[test]
    fn random_access_matches_sequential() {
        let mut s = NormalStream::new(5, STREAM_PATH);
        let seq: Vec<f64> = (0..10).map(|_| s.next_f64()).collect();
        assert_eq!(NormalStream::at(5, STREAM_PATH, 7).next_f64(), seq[7]);
    }

    #[test]
    fn terminal_variance() {
        let g = Grid::new(0.0, 1.0, 0.5).unwrap();
        let n = 100_000;
        let w: Vec<f64> = (0..n).map(|i| *make_path(i as u64, g).unwrap().values.last().unwrap()).collect();
        let mean = w.iter().sum::<f64>() / n as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() < 0.02, "var = {var}");
    }

    #[test]
    fn kolmogorov_smirnov_terminal_value() {
        let g = Grid::new(0.0, 1.0, 0.1).unwrap();
        let n = 10_000;
        let mut w: Vec<f64> = (0..n).map(|i| *make_path(i as u64 + 1000, g).unwrap().values.last().unwrap()).collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let cdf = |x: f64| 0.5 * libm::erfc(-x / 2f64.sqrt());
        let d = w
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n as f64).abs().max(((i + 1) as f64 / n as f64 - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn bridge_midpoint_law() {
        let g = Grid::new(0.0, 0.2, 0.2).unwrap();
        let n = 100_000;
        let dt = 0.2;
        let dev: Vec<f64> = (0..n)
            .map(|i| {
                let p = make_path(i as u64, g).unwrap();
                let r = p.refine(2).unwrap();
                assert_eq!(r.values[0], p.values[0]);
                assert_eq!(r.values[2], p.values[1]);
                r.values[1] - 0.5 * (p.values[0] + p.values[1])
            })
            .collect();
        let mean = dev.iter().sum::<f64>() / n as f64;
        let var = dev.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // variance of the sample variance of normals: 2 sigma^4 / (n - 1)
        let se = (2.0f64 / (n - 1) as f64).sqrt() * dt / 4.0;
        assert!((var - dt / 4.0).abs() < 3.0 * se, "var {var}");
        assert!(mean.abs() < 3.0 * (dt / 4.0 / n as f64).sqrt());
    }

    #[test]
    fn dump_round_trip() {
        let p = make_path(3, Grid::new(0.5, 2.0, 0.25).unwrap()).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 8 * 7);
        let q = BrownianPath::<f64>::read_from(&buf[..]).unwrap();
        assert_eq!(p, q);
        assert!(BrownianPath::<f64>::read_from(&buf[..40]).is_err());
    }

    #[test]
    fn f32_path_rounds_f64_path() {
        let g64 = Grid::new(0.0, 1.0, 0.125).unwrap();
        let g32 = Grid::new(0.0f32, 1.0, 0.125).unwrap();
        let a = make_path(1, g64).unwrap();
        let b = make_path(1, g32).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            assert_eq!(*x as f32, *y);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn refinement_preserves_nodes(seed in 0u64..1000, factor in 2usize..6, steps in 1usize..40) {
            let g = Grid::new(0.0, steps as f64 * 0.05, 0.05).unwrap();
            let p = make_path(seed, g).unwrap();
            let r = p.refine(factor).unwrap();
            prop_assert_eq!(r.values.len(), steps * factor + 1);
            for (k, v) in p.values.iter().enumerate() {
                prop_assert_eq!(r.values[k * factor], *v);
            }
        }

        #[test]
        fn increments_telescope(seed in 0u64..1000, i in 0usize..20, j in 0usize..20, k in 0usize..20) {
            let p = make_path(seed, Grid::new(0.0f64, 2.0, 0.1).unwrap()).unwrap();
            let mut idx = [i, j, k];
            idx.sort();
            let [a, b, cc] = idx.map(|n| p.time(n));
            let lhs = p.increment(a, cc).unwrap();
            let rhs = p.increment(a, b).unwrap() + p.increment(b, cc).unwrap();
            // exact: all three are differences of the same stored node values
            prop_assert_eq!(lhs, p.values[idx[2]] - p.values[idx[0]]);
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * (p.values[idx[0]].abs() + p.values[idx[1]].abs() + p.values[idx[2]].abs()));
        }
    }
}
