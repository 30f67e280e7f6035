//! Seeded pseudo-random numbers: xoshiro256** seeded through splitmix64 (from
//! `rand_xoshiro`), plus the few sampling helpers the pipeline needs. The
//! helpers are written out rather than taken from a distributions crate so
//! that each value drawn from a seed stays fixed across dependency upgrades.

use rand_xoshiro::rand_core::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

const STREAM_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// One step of splitmix64 from `state`, advancing it.
pub fn splitmix64(state: &mut u64) -> u64 {
    let mut sm = SplitMix64::seed_from_u64(*state);
    let out = sm.next_u64();
    *state = state.wrapping_add(STREAM_GAMMA);
    out
}

/// Deterministically mixes a parent seed with a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut s = seed ^ stream.wrapping_mul(STREAM_GAMMA).rotate_left(17);
    splitmix64(&mut s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Xoshiro256StarStar(rand_xoshiro::Xoshiro256StarStar);

impl Xoshiro256StarStar {
    pub fn seed_from_u64(seed: u64) -> Self {
        Self(rand_xoshiro::Xoshiro256StarStar::seed_from_u64(seed))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in [0, n) by multiply-shift; n must be nonzero.
    pub fn below(&mut self, n: u64) -> u64 {
        ((self.next_u64() as u128 * n as u128) >> 64) as u64
    }

    /// Standard normal deviate by the Box-Muller transform (one value per call).
    pub fn normal(&mut self) -> f64 {
        // 1 - u keeps the logarithm argument in (0, 1].
        let u1 = 1.0 - self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle, descending index.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_vector() {
        // First outputs of xoshiro256** for state {1, 2, 3, 4}.
        let mut seed = [0u8; 32];
        for (i, chunk) in seed.chunks_exact_mut(8).enumerate() {
            chunk.copy_from_slice(&(i as u64 + 1).to_le_bytes());
        }
        let mut rng = Xoshiro256StarStar(rand_xoshiro::Xoshiro256StarStar::from_seed(seed));
        let got: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        assert_eq!(got, vec![11520, 0, 1509978240, 1215971899390074240]);

        // Seeding runs splitmix64 from the seed.
        let mut sm = 99u64;
        let first = splitmix64(&mut sm);
        let mut expected = Xoshiro256StarStar::seed_from_u64(99);
        let mut manual = [0u8; 32];
        let mut state = 99u64;
        for chunk in manual.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        assert_eq!(u64::from_le_bytes(manual[..8].try_into().unwrap()), first);
        let mut from_manual = Xoshiro256StarStar(rand_xoshiro::Xoshiro256StarStar::from_seed(manual));
        assert_eq!(expected.next_u64(), from_manual.next_u64());
    }

    #[test]
    fn splitmix_reference() {
        let mut s = 1234567u64;
        assert_eq!(splitmix64(&mut s), 6457827717110365317);
        assert_eq!(splitmix64(&mut s), 3203168211198807973);
    }

    #[test]
    fn unit_interval_and_shuffle() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(3);
        for _ in 0..1000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
        let mut v: Vec<usize> = (0..50).collect();
        rng.shuffle(&mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }

    #[test]
    fn normal_moments() {
        let mut rng = Xoshiro256StarStar::seed_from_u64(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((var - 1.0).abs() < 0.02);
    }
}
