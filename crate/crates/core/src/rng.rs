//! Counter-based random numbers.
//!
//! Every draw is a pure function of `(master_seed, stream, realization, layer, index)`,
//! so any single bond of any realization can be regenerated in isolation and the
//! output of a run does not depend on how realizations are spread over threads.

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// Stream tags keep independent consumers of randomness apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    /// Bond openness of the percolation model.
    Bonds = 0x62_6f6e_6473,
    /// Gate-level choices (hyperbolic gate patterns, Dyck gate types, offsets).
    Gates = 0x67_6174_6573,
    /// Measurement outcome signs in the stabilizer oracle.
    Outcomes = 0x6f75_7463_6f6d,
}

#[inline(always)]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Keyed counter-based generator (SplitMix64 finalizer over a hashed key).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

impl CounterRng {
    pub fn new(master_seed: u64) -> Self {
        Self { seed: mix64(master_seed ^ 0x6d69_7074_2d73_6565) }
    }

    pub fn master_key(&self) -> u64 {
        self.seed
    }

    /// Key shared by every draw of one `(stream, realization, layer)` triple.
    #[inline]
    pub fn layer_key(&self, stream: Stream, realization: u64, layer: u64) -> LayerKey {
        let k = mix64(self.seed ^ (stream as u64).wrapping_mul(GOLDEN_GAMMA));
        let k = mix64(k.wrapping_add(realization.wrapping_mul(GOLDEN_GAMMA)));
        LayerKey(mix64(k ^ layer.wrapping_mul(0xd6e8_feb8_6659_fd93)))
    }

    #[inline]
    pub fn u64_at(&self, stream: Stream, realization: u64, layer: u64, index: u64) -> u64 {
        self.layer_key(stream, realization, layer).u64_at(index)
    }

    #[inline]
    pub fn f64_at(&self, stream: Stream, realization: u64, layer: u64, index: u64) -> f64 {
        to_unit(self.u64_at(stream, realization, layer, index))
    }
}

/// Per-layer key; draws within the layer are indexed by a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerKey(u64);

impl LayerKey {
    #[inline(always)]
    pub fn u64_at(self, index: u64) -> u64 {
        mix64(self.0.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
    }

    #[inline(always)]
    pub fn f64_at(self, index: u64) -> f64 {
        to_unit(self.u64_at(index))
    }

    #[inline(always)]
    pub fn bernoulli(self, index: u64, threshold: Threshold) -> bool {
        threshold.accepts(self.u64_at(index))
    }
}

#[inline(always)]
fn to_unit(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Integer acceptance threshold for a probability: `accepts(u)` is true with
/// probability `p` when `u` is uniform on 64 bits. Exact at `p = 0` and `p = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Threshold(u64);

impl Threshold {
    pub fn new(p: f64) -> Self {
        let p = p.clamp(0.0, 1.0);
        Self((p * (1u64 << 53) as f64).ceil() as u64)
    }

    #[inline(always)]
    pub fn accepts(self, u: u64) -> bool {
        (u >> 11) < self.0
    }
}
