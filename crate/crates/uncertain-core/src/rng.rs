//! The artifact's named deterministic generator: **SplitMix64, version 1**
//! (Steele, Lea & Flood's `splitmix64` finalizer over a Weyl sequence with
//! increment 0x9E3779B97F4A7C15).
//!
//! Reproducibility contract (documented so independent implementations can
//! replicate decision logs bit-exactly):
//! - `next_u64`: state += 0x9E3779B97F4A7C15, then the 30/27/31
//!   xorshift-multiply finalizer ([`mix`]). Seed 0 produces the published
//!   reference sequence starting 0xE220A8397B1DCDAF.
//! - `next_f64` = `(next_u64() >> 11) · 2⁻⁵³` ∈ [0, 1).
//! - `next_bounded(n)` uses Lemire's multiply-shift method with rejection —
//!   unbiased uniform over [0, n); may consume more than one `next_u64`.
//! - Stream derivation: [`derive_stream`]`(base, tag) = mix(base ^ mix(tag))`.
//!   Per-process streams use `tag = pid`; named streams hash the name with
//!   [`fnv1a64`] first.

/// The SplitMix64 finalizer (also the stream-derivation mixer).
#[inline]
pub const fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive an independent stream seed from a base seed and a tag
/// (pid, rep index, or a name hash).
#[inline]
pub const fn derive_stream(base: u64, tag: u64) -> u64 {
    mix(base ^ mix(tag))
}

/// FNV-1a 64-bit hash, for tagging streams by name.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Counter-based deterministic generator; see the module docs for the
/// exact contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub const fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        mix(self.state)
    }

    /// Uniform in [0, 1): the top 53 bits of one draw.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / ((1u64 << 53) as f64))
    }

    /// Unbiased uniform in [0, n). `n` must be nonzero.
    pub fn next_bounded(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0, "next_bounded(0)");
        if n == 0 {
            return 0;
        }
        // Lemire's multiply-shift with rejection of the biased low fringe.
        let mut x = self.next_u64();
        let mut m = (x as u128) * (n as u128);
        let mut low = m as u64;
        if low < n {
            let threshold = n.wrapping_neg() % n;
            while low < threshold {
                x = self.next_u64();
                m = (x as u128) * (n as u128);
                low = m as u64;
            }
        }
        (m >> 64) as u64
    }

    /// Uniform over the inclusive signed range [lo, hi].
    pub fn next_range_i64(&mut self, lo: i64, hi: i64) -> i64 {
        debug_assert!(lo <= hi);
        let span = (hi as i128 - lo as i128 + 1) as u64;
        lo.wrapping_add(self.next_bounded(span) as i64)
    }
}
