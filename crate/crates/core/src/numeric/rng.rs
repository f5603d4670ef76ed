use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Counter-based random stream: the draw sequence is a pure function of
/// `(seed, stream)`, independent of which thread consumes it or when.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, stream, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Independent stream derived from this one's identity and `parts`.
    pub fn derive(&self, parts: &[u64]) -> Self {
        let mut all = Vec::with_capacity(parts.len() + 1);
        all.push(self.stream);
        all.extend_from_slice(parts);
        Self::new(self.seed, stream_id(&all))
    }

    pub fn gaussian(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; returns 0 when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        if n == 0 {
            0
        } else {
            self.inner.random_range(0..n)
        }
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

/// Mixes a list of integers into one stream id (splitmix64 finalizer chain).
pub fn stream_id(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15_u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.gaussian().to_bits(), b.gaussian().to_bits());
        }
    }

    #[test]
    fn distinct_streams_differ() {
        let mut a = RngStream::new(7, 0);
        let mut b = RngStream::new(7, 1);
        let xs: Vec<f64> = (0..8).map(|_| a.gaussian()).collect();
        let ys: Vec<f64> = (0..8).map(|_| b.gaussian()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn gaussian_moments() {
        let mut r = RngStream::new(2024, 0);
        let n = 1_000_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = r.gaussian();
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn stream_id_is_order_sensitive() {
        assert_ne!(stream_id(&[1, 2]), stream_id(&[2, 1]));
        assert_eq!(stream_id(&[5, 9, 11]), stream_id(&[5, 9, 11]));
    }

    #[test]
    fn below_handles_zero() {
        let mut r = RngStream::new(1, 1);
        assert_eq!(r.below(0), 0);
        assert!((0..1000).all(|_| r.below(5) < 5));
    }
}
