//! Counter-based seeded random number generation.
//!
//! Every stochastic component of the pipeline (noise draws, timestep
//! sampling, synthetic data, generation seeds) goes through [`Prng`] so a
//! run is a pure function of its seed. The generator is a random-access
//! SplitMix64 keyed by a 64-bit stream key: drawing the n-th value never
//! depends on hidden state beyond `(key, counter)`, which makes training
//! resumable and lets scoring derive independent per-generation streams.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E3779B97F4A7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Derive an independent child seed from a base seed and a tag.
///
/// Used to split one experiment seed into per-purpose streams (one per
/// generation, per window, per epoch) that can be reproduced in isolation.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed ^ 0xD1B54A32D192ED03).wrapping_add(mix64(tag.wrapping_mul(GOLDEN))))
}

/// FNV-1a hash, for turning identifiers into seed tags.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Explicitly seeded counter-based generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prng {
    key: u64,
    counter: u64,
}

impl Prng {
    pub fn new(seed: u64) -> Self {
        Prng {
            key: mix64(seed ^ 0x6A09E667F3BCC909),
            counter: 0,
        }
    }

    /// Child stream independent of this one; does not advance `self`.
    pub fn derive(&self, tag: u64) -> Prng {
        Prng::new(derive_seed(self.key, tag))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)));
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform draw in the half-open interval (0, 1].
    #[inline]
    pub fn uniform_open0(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [0, 1).
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller. Consumes two words per draw so the
    /// stream position stays a pure function of the draw count.
    #[inline]
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform_open0();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Unbiased uniform integer in [0, n).
    pub fn uniform_usize(&mut self, n: usize) -> usize {
        assert!(n > 0, "uniform_usize requires n > 0");
        let n = n as u64;
        let zone = (u64::MAX / n) * n;
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.uniform_usize(i + 1);
            xs.swap(i, j);
        }
    }

    /// k distinct indices drawn uniformly from [0, n), in sorted order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {k} of {n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.uniform_usize(n - i);
            pool.swap(i, j);
        }
        let mut picked = pool[..k].to_vec();
        picked.sort_unstable();
        picked
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_stream() {
        let mut a = Prng::new(42);
        let mut b = Prng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = Prng::new(43);
        assert_ne!(Prng::new(42).next_u64(), c.next_u64());
    }

    #[test]
    fn derived_streams_are_independent() {
        let base = Prng::new(7);
        let mut x = base.derive(0);
        let mut y = base.derive(1);
        let xs: Vec<u64> = (0..8).map(|_| x.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| y.next_u64()).collect();
        assert_ne!(xs, ys);
        // derive is pure
        let mut x2 = base.derive(0);
        assert_eq!(xs[0], x2.next_u64());
    }

    #[test]
    fn normal_moments() {
        let mut rng = Prng::new(1234);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = rng.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn uniform_usize_in_range() {
        let mut rng = Prng::new(5);
        let mut seen = [false; 10];
        for _ in 0..1000 {
            let v = rng.uniform_usize(10);
            assert!(v < 10);
            seen[v] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn sample_indices_distinct_and_sorted() {
        let mut rng = Prng::new(9);
        for _ in 0..50 {
            let idx = rng.sample_indices(12, 5);
            assert_eq!(idx.len(), 5);
            assert!(idx.windows(2).all(|w| w[0] < w[1]));
            assert!(idx.iter().all(|&i| i < 12));
        }
    }

    #[test]
    fn serde_round_trip_resumes_stream() {
        let mut rng = Prng::new(77);
        for _ in 0..13 {
            rng.next_u64();
        }
        let saved = serde_json::to_string(&rng).unwrap();
        let mut restored: Prng = serde_json::from_str(&saved).unwrap();
        assert_eq!(rng.next_u64(), restored.next_u64());
    }
}
