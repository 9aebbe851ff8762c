//! Reproducible random streams.
//!
//! Every run has one root seed. A walk segment draws from the ChaCha8
//! keystream selected by `(root, replica)` and positioned at a fixed offset
//! determined by the particle ordinal, so the randomness a particle sees
//! does not depend on thread scheduling or on how many other particles ran.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// 32-bit keystream words reserved per particle.
const WORDS_PER_PARTICLE_LOG2: u32 = 40;

/// Root of all randomness in a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RootSeed(pub u64);

impl RootSeed {
    /// Stream for particle `ordinal` of replica `replica`.
    pub fn particle(self, replica: u64, ordinal: u64) -> StepRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(replica);
        rng.set_word_pos(u128::from(ordinal) << WORDS_PER_PARTICLE_LOG2);
        StepRng::new(rng)
    }

    /// Independent root for a named sub-experiment.
    pub fn derive(self, tag: u64) -> RootSeed {
        let mut z = self.0 ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RootSeed(z ^ (z >> 31))
    }

    /// Per-replica particle dispenser.
    pub fn replica(self, replica: u64) -> ReplicaStreams {
        ReplicaStreams {
            root: self,
            replica,
            next_ordinal: 0,
        }
    }

    /// General-purpose generator for replica-level decisions (sampling
    /// centres, pairs, bootstrap resamples). Uses a keystream disjoint from
    /// the particle streams.
    pub fn auxiliary(self, tag: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0 ^ 0xA5A5_5A5A_0F0F_F0F0);
        rng.set_stream(tag);
        rng
    }
}

/// Hands out a fresh particle stream per released particle.
#[derive(Debug, Clone)]
pub struct ReplicaStreams {
    root: RootSeed,
    replica: u64,
    next_ordinal: u64,
}

impl ReplicaStreams {
    pub fn next_particle(&mut self) -> StepRng {
        let rng = self.root.particle(self.replica, self.next_ordinal);
        self.next_ordinal += 1;
        rng
    }

    pub fn released(&self) -> u64 {
        self.next_ordinal
    }
}

/// Bit-buffered generator for uniform neighbour choices.
///
/// A draw from `0..n` consumes `ceil(log2 n)` bits and rejects values
/// `>= n`, so choices are exactly uniform. On a square lattice one `u64`
/// feeds 32 steps.
#[derive(Debug, Clone)]
pub struct StepRng {
    inner: ChaCha8Rng,
    buf: u64,
    avail: u32,
}

impl StepRng {
    pub fn new(inner: ChaCha8Rng) -> Self {
        Self {
            inner,
            buf: 0,
            avail: 0,
        }
    }

    pub fn from_seed_u64(seed: u64) -> Self {
        Self::new(ChaCha8Rng::seed_from_u64(seed))
    }

    #[inline]
    fn take_bits(&mut self, bits: u32) -> u64 {
        if self.avail < bits {
            self.buf = self.inner.next_u64();
            self.avail = 64;
        }
        let v = self.buf & ((1u64 << bits) - 1);
        self.buf >>= bits;
        self.avail -= bits;
        v
    }

    /// Uniform draw from `0..n`; `n` must be in `1..=2^31`.
    #[inline]
    pub fn below(&mut self, n: u32) -> u32 {
        debug_assert!(n >= 1);
        if n == 1 {
            return 0;
        }
        let bits = 32 - (n - 1).leading_zeros();
        loop {
            let v = self.take_bits(bits) as u32;
            if v < n {
                return v;
            }
        }
    }

    /// Uniform draw from `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let root = RootSeed(42);
        let mut a = root.particle(3, 7);
        let mut b = root.particle(3, 7);
        let xs: Vec<u32> = (0..100).map(|_| a.below(5)).collect();
        let ys: Vec<u32> = (0..100).map(|_| b.below(5)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn distinct_particles_differ() {
        let root = RootSeed(42);
        let mut a = root.particle(0, 0);
        let mut b = root.particle(0, 1);
        let mut c = root.particle(1, 0);
        let xs: Vec<u32> = (0..64).map(|_| a.below(4)).collect();
        let ys: Vec<u32> = (0..64).map(|_| b.below(4)).collect();
        let zs: Vec<u32> = (0..64).map(|_| c.below(4)).collect();
        assert_ne!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn below_is_uniform() {
        let mut rng = StepRng::from_seed_u64(9);
        for n in [2u32, 3, 4, 5, 6, 7] {
            let draws = 120_000usize;
            let mut counts = vec![0usize; n as usize];
            for _ in 0..draws {
                counts[rng.below(n) as usize] += 1;
            }
            let expect = draws as f64 / f64::from(n);
            let sd = (expect * (1.0 - 1.0 / f64::from(n))).sqrt();
            for c in counts {
                assert!((c as f64 - expect).abs() < 5.0 * sd, "n={n} count={c}");
            }
        }
    }

    #[test]
    fn replica_dispenser_counts_releases() {
        let mut s = RootSeed(1).replica(0);
        let _ = s.next_particle();
        let _ = s.next_particle();
        assert_eq!(s.released(), 2);
    }
}
