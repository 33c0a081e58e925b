//! Keyed random substreams.
//!
//! Every random draw in the library comes from a ChaCha8 stream selected by
//! `(seed, domain, a, b)`: the user seed and a per-purpose domain constant
//! form the 256-bit key, and `(a, b)` (typically a replicate and a year)
//! select one of 2^64 streams under that key. Results therefore do not depend
//! on thread count or execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain constants separating the purposes a seed is used for.
pub mod domain {
    pub const STANDARD: u64 = 0x5354_414e_4441_5244;
    pub const DIRECT: u64 = 0x4449_5245_4354_0000;
    pub const SIR_UPPER: u64 = 0x5349_5255_5050_4552;
    pub const SIR_LOWER: u64 = 0x5349_524c_4f57_4552;
    pub const SIR_PERM: u64 = 0x5349_5250_4552_4d00;
    pub const COIN: u64 = 0x434f_494e_0000_0000;
    pub const REFLECT: u64 = 0x5245_464c_4543_5400;
    pub const SENSITIVITY: u64 = 0x5345_4e53_0000_0000;
    pub const TOY: u64 = 0x544f_5900_0000_0000;
    pub const BOOTSTRAP: u64 = 0x424f_4f54_0000_0000;
    pub const SYNTHETIC: u64 = 0x5359_4e54_4845_5449;
    pub const WIDTH_BOOTSTRAP: u64 = 0x5749_4454_4842_4f4f;
}

/// SplitMix64 finaliser.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn key(seed: u64, domain: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut state = mix64(seed) ^ domain;
    for chunk in out.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    out
}

/// The stream for `(seed, domain, a, b)`; `a` and `b` must fit in 32 bits.
pub fn substream(seed: u64, domain: u64, a: u64, b: u64) -> ChaCha8Rng {
    debug_assert!(a <= u32::MAX as u64 && b <= u32::MAX as u64);
    let mut rng = ChaCha8Rng::from_seed(key(seed, domain));
    rng.set_stream((a << 32) | (b & 0xffff_ffff));
    rng
}

/// A new seed derived from `seed` for the `index`-th sub-study.
pub fn derive_seed(seed: u64, domain: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ domain).wrapping_add(index))
}
