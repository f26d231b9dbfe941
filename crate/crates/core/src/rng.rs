//! Counter-based random streams.
//!
//! Every stream is keyed by `(seed, label)` and produces its `n`-th draw as a
//! pure function of the key and `n`. Entities own their streams, so adding or
//! removing one entity never shifts another entity's draws.

use rand_core::{impls, RngCore};

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over raw bytes, finalized with [`mix64`]. Stable across platforms
/// and toolchains, unlike `std`'s default hasher.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(h)
}

/// A deterministic random stream identified by `(seed, label)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let key = mix64(seed ^ stable_hash(label.as_bytes()));
        Self {
            seed,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of draws consumed so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Random access to the `index`-th draw without advancing the stream.
    #[inline]
    pub fn draw_at(&self, index: u64) -> u64 {
        mix64(
            self.key
                .wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform in `[0, 1)` at a fixed index.
    #[inline]
    pub fn unit_at(&self, index: u64) -> f64 {
        (self.draw_at(index) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[0, 1)`.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        let u = self.unit_at(self.counter);
        self.counter += 1;
        u
    }

    /// Uniform integer in the inclusive range `[lo, hi]`.
    pub fn range_inclusive(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        let span = hi - lo + 1;
        lo + ((u128::from(self.next_u64()) * u128::from(span)) >> 64) as u64
    }

    /// Bernoulli trial with success probability `p`.
    pub fn chance(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            // still consume a draw so the stream position does not depend on p
            self.counter += 1;
            return false;
        }
        self.unit() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        let v = self.draw_at(self.counter);
        self.counter += 1;
        v
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_sequence() {
        let mut a = RngStream::new(7, "sensor:3/mac");
        let mut b = RngStream::new(7, "sensor:3/mac");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_are_independent() {
        let mut a = RngStream::new(7, "sensor:3/mac");
        let mut b = RngStream::new(7, "sensor:4/mac");
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn random_access_matches_sequential() {
        let s = RngStream::new(99, "x");
        let mut t = s.clone();
        for i in 0..10 {
            assert_eq!(s.draw_at(i), t.next_u64());
        }
        assert_eq!(t.position(), 10);
    }

    #[test]
    fn range_inclusive_covers_bounds() {
        let mut s = RngStream::new(1, "r");
        let mut seen = [false; 16];
        for _ in 0..2000 {
            let v = s.range_inclusive(1, 16);
            assert!((1..=16).contains(&v));
            seen[(v - 1) as usize] = true;
        }
        assert!(seen.iter().all(|x| *x));
    }

    #[test]
    fn chance_consumes_one_draw_regardless_of_p() {
        let mut a = RngStream::new(3, "l");
        let mut b = RngStream::new(3, "l");
        a.chance(0.0);
        b.chance(0.5);
        assert_eq!(a.position(), b.position());
    }
}
