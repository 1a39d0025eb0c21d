//! Counter-based, splittable pseudo-random number generation.
//!
//! Every consumer of randomness in the simulator draws from a [`StreamRng`]
//! whose output is a pure function of (key, counter). Keys are derived from
//! the experiment seed by hashing a path of labels, so independent streams
//! exist per (purpose, client, round) without any shared state. This makes
//! the whole simulation reproducible regardless of execution order or
//! parallelism.
//!
//! The mixing function is the SplitMix64 finalizer (Vigna), which has full
//! 64-bit avalanche. Not cryptographic.

/// SplitMix64 finalizer.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// FNV-1a over a byte string, used to turn labels into derivation constants.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// A derivation point in the key tree. Child keys are independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamKey(u64);

impl StreamKey {
    pub fn root(seed: u64) -> Self {
        StreamKey(mix64(seed ^ GOLDEN))
    }

    /// Derive a child key from an integer label.
    pub fn child(self, label: u64) -> Self {
        StreamKey(mix64(self.0 ^ mix64(label.wrapping_add(GOLDEN))))
    }

    /// Derive a child key from a string label.
    pub fn child_str(self, label: &str) -> Self {
        self.child(fnv1a(label.as_bytes()))
    }

    /// Open the stream at this key, starting at counter 0.
    pub fn stream(self) -> StreamRng {
        StreamRng {
            key: self.0,
            counter: 0,
        }
    }
}

/// Counter-based generator: output i is `mix64(key + (i+1)*GOLDEN)`.
#[derive(Clone, Debug)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter += 1;
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform f64 in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        ((self.next_u64() >> 11) as f64) / DEN
    }

    /// Uniform f64 in (0, 1]; safe argument for ln().
    #[inline]
    pub fn next_f64_open(&mut self) -> f64 {
        const DEN: f64 = (1u64 << 53) as f64;
        (((self.next_u64() >> 11) + 1) as f64) / DEN
    }

    /// Uniform f64 in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in [0, n). Uses a 128-bit multiply-shift; the O(2^-64)
    /// bias is irrelevant for simulation purposes.
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Standard normal via Box-Muller (cosine branch only, so each draw
    /// consumes exactly two uniforms and carries no hidden state).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }

    /// Draw an index from a probability vector by CDF inversion. The last
    /// category absorbs any residual mass from rounding.
    pub fn categorical(&mut self, probs: &[f64]) -> usize {
        debug_assert!(!probs.is_empty());
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<u64> = StreamKey::root(7).child_str("x").stream().take_n(8);
        let b: Vec<u64> = StreamKey::root(7).child_str("x").stream().take_n(8);
        assert_eq!(a, b);
    }

    #[test]
    fn sibling_streams_differ() {
        let a = StreamKey::root(7).child(0).stream().take_n(8);
        let b = StreamKey::root(7).child(1).stream().take_n(8);
        assert_ne!(a, b);
    }

    #[test]
    fn label_order_matters() {
        let a = StreamKey::root(1).child(2).child(3);
        let b = StreamKey::root(1).child(3).child(2);
        assert_ne!(a, b);
    }

    #[test]
    fn f64_range() {
        let mut rng = StreamKey::root(123).stream();
        for _ in 0..10_000 {
            let x = rng.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn index_bounds_and_coverage() {
        let mut rng = StreamKey::root(9).stream();
        let mut seen = [false; 5];
        for _ in 0..1000 {
            seen[rng.index(5)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn categorical_rough_frequencies() {
        let probs = [0.5, 0.3, 0.2];
        let mut rng = StreamKey::root(42).stream();
        let mut counts = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            counts[rng.categorical(&probs)] += 1;
        }
        for (c, p) in counts.iter().zip(probs.iter()) {
            let freq = *c as f64 / n as f64;
            assert!((freq - p).abs() < 0.01, "freq {freq} vs p {p}");
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = StreamKey::root(5).stream();
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

    impl StreamRng {
        fn take_n(mut self, n: usize) -> Vec<u64> {
            (0..n).map(|_| self.next_u64()).collect()
        }
    }
}
