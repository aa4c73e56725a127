//! Deterministic random streams for the numeric experiments.
//!
//! SplitMix64 state advance, mapped to standard normals (mean 0, sigma 1)
//! through the Box-Muller transform. Every trial runs on its own substream
//! seeded `base_seed ^ trial_index`, so results do not depend on execution
//! order and trials can run in parallel.

/// A deterministic stream of standard-normal draws.
#[derive(Debug, Clone)]
pub struct RandomStream {
    state: u64,
    cached: Option<f64>,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        RandomStream { state: seed, cached: None }
    }

    /// The per-trial substream of a base seed.
    pub fn substream(base_seed: u64, trial_index: u64) -> Self {
        RandomStream::new(base_seed ^ trial_index)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in (0, 1]; never zero, so ln() below stays finite.
    fn next_unit_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 / (1u64 << 53) as f64
    }

    /// Uniform in [0, 1).
    fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// One standard-normal draw (Box-Muller; the second value of each pair
    /// is cached).
    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.cached.take() {
            return z;
        }
        let u = self.next_unit_open();
        let v = self.next_unit();
        let r = (-2.0 * u.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * v;
        self.cached = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn fill_normal(&mut self, count: usize) -> Vec<f64> {
        (0..count).map(|_| self.next_normal()).collect()
    }
}

/// Convenience wrapper matching the experiment surface: `count` draws from
/// a fresh stream.
pub fn generate_normal(stream: &mut RandomStream, count: usize) -> Vec<f64> {
    stream.fill_normal(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_sequence() {
        let a = RandomStream::new(42).fill_normal(64);
        let b = RandomStream::new(42).fill_normal(64);
        assert_eq!(a, b);
        let c = RandomStream::new(43).fill_normal(64);
        assert_ne!(a, c);
    }

    #[test]
    fn splitmix_known_vector() {
        // reference outputs of seed 1234567
        let mut s = RandomStream::new(1234567);
        assert_eq!(s.next_u64(), 0x599ed017fb08fc85);
        assert_eq!(s.next_u64(), 0x2c73f08458540fa5);
    }

    #[test]
    fn sample_moments_match_standard_normal() {
        let mut s = RandomStream::new(42);
        let n = 1_000_000usize;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let z = s.next_normal();
            sum += z;
            sq += z * z;
        }
        let mean = sum / n as f64;
        let sigma = (sq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((sigma - 1.0).abs() < 0.01, "sigma {sigma}");
    }

    /// Substreams must not collide: a birthday scan over the first draws of
    /// 10^4 substreams.
    #[test]
    fn substream_collision_scan() {
        let mut seen = HashSet::new();
        for trial in 0..10_000u64 {
            let mut s = RandomStream::substream(42, trial);
            let window: Vec<u64> = (0..4).map(|_| s.next_u64()).collect();
            assert!(seen.insert(window), "substream {trial} collides");
        }
    }
}
