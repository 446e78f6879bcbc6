//! Deterministic counter-based random numbers and content hashing.
//!
//! Every random decision in the pipeline is a pure function of a 64-bit key
//! and a counter, so results are reproducible across runs, platforms, and
//! thread counts. Keys are derived from the user seed plus a short label,
//! which keeps independent sampling stages decorrelated without any shared
//! mutable state.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a hash of a byte slice. Used for key derivation and for content
/// fingerprints in run manifests.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Extends an FNV-1a hash with more bytes, for incremental fingerprinting.
pub fn fnv1a64_extend(mut h: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stateless counter RNG: a bijective mix of `key` and `counter`.
///
/// Two finalizer rounds over the sum with a Weyl increment give full 64-bit
/// diffusion; equal keys with consecutive counters produce independent-looking
/// streams.
#[inline]
pub fn counter_u64(key: u64, counter: u64) -> u64 {
    let x = key.wrapping_add(counter.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    mix64(mix64(x).wrapping_add(0x6a09_e667_f3bc_c909))
}

/// Derives an independent stream key from a user seed and a stage label.
pub fn derive_key(seed: u64, label: &str) -> u64 {
    let mut h = fnv1a64(&seed.to_le_bytes());
    h = fnv1a64_extend(h, label.as_bytes());
    // Avoid the degenerate all-zero key; any fixed non-zero constant works.
    if h == 0 {
        FNV_OFFSET
    } else {
        h
    }
}

/// Sequential view over a counter stream, for call sites that consume an
/// unpredictable number of draws (rejection sampling, shuffles).
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
    cached_gauss: Option<f64>,
}

impl StreamRng {
    pub fn new(key: u64) -> Self {
        StreamRng {
            key,
            counter: 0,
            cached_gauss: None,
        }
    }

    pub fn from_seed(seed: u64, label: &str) -> Self {
        StreamRng::new(derive_key(seed, label))
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        let v = counter_u64(self.key, self.counter);
        self.counter = self.counter.wrapping_add(1);
        v
    }

    /// Uniform in [0, 1) with 53 bits of precision.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, bound) without modulo bias (Lemire rejection).
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        loop {
            let x = self.next_u64();
            let m = u128::from(x) * u128::from(bound);
            let low = m as u64;
            if low >= bound.wrapping_neg() % bound {
                return (m >> 64) as u64;
            }
        }
    }

    /// Standard normal draw via Box-Muller; draws in pairs and caches the
    /// second value.
    pub fn next_gauss(&mut self) -> f64 {
        if let Some(v) = self.cached_gauss.take() {
            return v;
        }
        loop {
            let u1 = self.next_f64();
            if u1 <= f64::MIN_POSITIVE {
                continue;
            }
            let u2 = self.next_f64();
            let r = (-2.0 * u1.ln()).sqrt();
            let theta = 2.0 * std::f64::consts::PI * u2;
            self.cached_gauss = Some(r * theta.sin());
            return r * theta.cos();
        }
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}
