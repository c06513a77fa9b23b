//! Deterministic random streams and distribution summaries.
//!
//! Every random draw in the simulator comes from a stream derived by hashing
//! a master seed together with a label tuple (purpose, cell, UE or route,
//! sample index). Streams are independent of evaluation order, which is what
//! lets the engines fan out over threads without changing results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SimError};

/// What a random stream is used for. Part of the stream label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    LinkLos = 1,
    LinkShadow = 2,
    UeDrop = 3,
    TrafficPhase = 4,
    RouteGeometry = 5,
    ShadowTrack = 6,
    LosTrack = 7,
    Generic = 99,
}

/// Master seed from which all labelled streams are derived.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSpec {
    pub master_seed: u64,
}

impl SeedSpec {
    pub fn new(master_seed: u64) -> Self {
        Self { master_seed }
    }

    /// Derive the stream for `(purpose, a, b, index)`.
    pub fn stream(&self, purpose: Purpose, a: u64, b: u64, index: u64) -> Stream {
        derive_stream(self.master_seed, &[purpose as u64, a, b, index])
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash a master seed and label tuple into a 256-bit ChaCha key.
pub fn derive_stream(master_seed: u64, labels: &[u64]) -> Stream {
    let mut h = splitmix64(master_seed);
    for (i, &label) in labels.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(label.wrapping_add((i as u64 + 1).wrapping_mul(GOLDEN))));
    }
    let mut key = [0u8; 32];
    let mut word = h;
    for chunk in key.chunks_exact_mut(8) {
        word = splitmix64(word);
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    Stream {
        rng: ChaCha8Rng::from_seed(key),
    }
}

/// A single-owner generator derived from a label tuple.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Standard normal draw.
    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: u64) -> u64 {
        self.rng.gen_range(0..n)
    }
}

fn sorted(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest-rank percentile: the value at 1-based rank ⌈p/100·n⌉ of the
/// ascending sort. Infinite samples sort last.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(SimError::Empty("percentile of an empty sample set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(SimError::config(
            "percentile",
            format!("p={p} outside [0,100]"),
        ));
    }
    let v = sorted(samples);
    Ok(v[nearest_rank(p, v.len()) - 1])
}

/// Several nearest-rank percentiles with a single sort.
pub fn percentiles(samples: &[f64], ps: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(SimError::Empty("percentile of an empty sample set"));
    }
    let v = sorted(samples);
    Ok(ps
        .iter()
        .map(|&p| v[nearest_rank(p, v.len()) - 1])
        .collect())
}

fn nearest_rank(p: f64, n: usize) -> usize {
    // Guard against 0.1*n style products landing a hair above an integer.
    let raw = p / 100.0 * n as f64;
    let rank = (raw - 1e-9).ceil() as usize;
    rank.clamp(1, n)
}

/// Empirical CDF as (value, cumulative fraction) pairs, one per distinct value.
pub fn ecdf_export(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(SimError::Empty("ECDF of an empty sample set"));
    }
    let v = sorted(samples);
    let n = v.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &x) in v.iter().enumerate() {
        let frac = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == x || (last.0.is_nan() && x.is_nan()) => last.1 = frac,
            _ => out.push((x, frac)),
        }
    }
    Ok(out)
}

/// Median of finite values, or NaN when there are none.
pub fn median(samples: &[f64]) -> f64 {
    percentile(samples, 50.0).unwrap_or(f64::NAN)
}
