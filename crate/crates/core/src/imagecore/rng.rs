use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes a root seed together with a path of stream coordinates
/// (for example `[stream_tag, image_index, epoch]`) into a child seed.
pub fn derive_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(seed), |h, &v| splitmix64(h ^ splitmix64(v)))
}

/// Deterministic random stream.
///
/// The generator is ChaCha8 keyed through `SeedableRng::seed_from_u64`, which is
/// specified bit-for-bit by `rand_core` and does not depend on platform word size.
/// Independent streams are obtained with [`SeededRng::derive`], so a worker that
/// handles image `i` in epoch `e` draws the same numbers no matter which thread
/// runs it or in which order.
#[derive(Clone, Debug)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Child stream for the coordinates in `path`.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        Self::new(derive_seed(seed, path))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw on `[lo, hi)`; returns `lo` when the interval is empty.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SeededRng::new(42);
        let mut b = SeededRng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = SeededRng::derive(7, &[1, 0]);
        let mut b = SeededRng::derive(7, &[0, 1]);
        assert_ne!(a.next_u64(), b.next_u64());
        assert_ne!(derive_seed(7, &[]), derive_seed(8, &[]));
    }

    #[test]
    fn uniform_stays_in_range() {
        let mut r = SeededRng::new(3);
        for _ in 0..1000 {
            let v = r.uniform(-10.0, 10.0);
            assert!((-10.0..10.0).contains(&v));
        }
        assert_eq!(r.uniform(1.0, 1.0), 1.0);
    }

    #[test]
    fn stream_is_pinned() {
        // Frozen first outputs; a change here breaks reproducibility of every stored run.
        let mut r = SeededRng::new(0);
        assert_eq!(r.next_u64(), 0xb585_f767_a79a_3b6c);
        assert_eq!(r.next_u64(), 0x7746_a55f_bad8_c037);
        assert_eq!(derive_seed(7, &[1, 2]), 0xf239_3773_88b0_1d44);
        assert_eq!(derive_seed(0, &[]), splitmix64(0));
    }
}
