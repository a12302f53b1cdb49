//! Seeded, portable random streams.
//!
//! Every random decision in the pipeline flows through [`Stream`], a
//! xoshiro256++ generator seeded through SplitMix64. Both algorithms are
//! published, fixed-point-free integer recurrences, so a `(seed, tags)` pair
//! reproduces the same draws on any platform and in any implementation that
//! follows the same two reference algorithms.
//!
//! Independent substreams are derived by hashing a seed together with a list
//! of `u64` tags (domain constant, run index, episode index, ...) via
//! SplitMix64; see [`Stream::derived`]. This is what makes episode sampling
//! order-independent: episode `(run, e)` draws from its own stream no matter
//! which worker evaluates it.

use alloc::vec::Vec;

use crate::math;

/// Domain-separation tags for derived streams.
pub mod domain {
    pub const INIT: u64 = 0x01;
    pub const SHUFFLE: u64 = 0x02;
    pub const SINE: u64 = 0x03;
    pub const BLOBS: u64 = 0x04;
    pub const EPISODE: u64 = 0x05;
    pub const SUPPORT: u64 = 0x06;
    pub const MCMC: u64 = 0x07;
}

/// SplitMix64 step: advances `state` and returns the next output.
#[inline]
pub fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// xoshiro256++ stream with helpers for the draw shapes the pipeline needs.
#[derive(Debug, Clone)]
pub struct Stream {
    s: [u64; 4],
}

impl Stream {
    /// Seeds the state from `seed` with SplitMix64, as recommended by the
    /// xoshiro authors.
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Stream { s }
    }

    /// Derives an independent substream from `(seed, tags)`.
    ///
    /// Each tag is absorbed by one SplitMix64 round over the running state,
    /// so `derived(seed, &[a, b])` and `derived(seed, &[b, a])` differ.
    pub fn derived(seed: u64, tags: &[u64]) -> Self {
        let mut acc = seed;
        let _ = splitmix64(&mut acc);
        for &t in tags {
            acc ^= t.wrapping_mul(0xA24B_AED4_963E_E407);
            let _ = splitmix64(&mut acc);
        }
        Stream::new(acc)
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let result = self.s[0]
            .wrapping_add(self.s[3])
            .rotate_left(23)
            .wrapping_add(self.s[0]);
        let t = self.s[1] << 17;
        self.s[2] ^= self.s[0];
        self.s[3] ^= self.s[1];
        self.s[1] ^= self.s[2];
        self.s[0] ^= self.s[3];
        self.s[2] ^= t;
        self.s[3] = self.s[3].rotate_left(45);
        result
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Unbiased uniform integer in `[0, n)` by rejection on the modulus.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        loop {
            let x = self.next_u64();
            let r = x % n;
            if x - r <= u64::MAX - (n - 1) {
                return r;
            }
        }
    }

    /// Standard normal draw via the polar method. The second variate of each
    /// accepted pair is discarded to keep the stream stateless.
    pub fn normal(&mut self) -> f64 {
        loop {
            let u = 2.0 * self.unit() - 1.0;
            let v = 2.0 * self.unit() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                return u * math::sqrt(-2.0 * math::ln(s) / s);
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }

    /// Samples `k` distinct indices from `[0, n)` by partial Fisher-Yates.
    pub fn choose_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "choose_indices: k > n");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_range_and_determinism() {
        let mut a = Stream::new(7);
        let mut b = Stream::new(7);
        for _ in 0..1000 {
            let x = a.unit();
            assert!((0.0..1.0).contains(&x));
            assert_eq!(x, b.unit());
        }
    }

    #[test]
    fn derived_streams_differ_by_tag_and_order() {
        let a: Vec<u64> = {
            let mut s = Stream::derived(1, &[2, 3]);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut s = Stream::derived(1, &[3, 2]);
            (0..4).map(|_| s.next_u64()).collect()
        };
        let c: Vec<u64> = {
            let mut s = Stream::derived(1, &[2, 3]);
            (0..4).map(|_| s.next_u64()).collect()
        };
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn below_is_in_range() {
        let mut s = Stream::new(11);
        for _ in 0..10_000 {
            assert!(s.below(7) < 7);
        }
    }

    #[test]
    fn normal_moments() {
        let mut s = Stream::new(3);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = s.normal();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn choose_indices_distinct() {
        let mut s = Stream::new(5);
        let picked = s.choose_indices(10, 6);
        assert_eq!(picked.len(), 6);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 6);
    }
}
