//! Counter-based seed derivation.
//!
//! Every random stream in the pipeline is keyed by `(master, stream, index)`
//! so that results never depend on the order in which tasks execute.

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let keyed = splitmix64(master ^ stream.wrapping_mul(GOLDEN_GAMMA));
    splitmix64(keyed.wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}
