//! Deterministic splitting of one root seed into per-purpose streams.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `purpose` (e.g. `"init"`, `"data"`, `"sampling"`) derived from `root`.
pub fn derive_seed(root: u64, purpose: &str) -> u64 {
    // FNV-1a over the purpose tag.
    let tag = purpose.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    });
    splitmix64(splitmix64(root) ^ tag)
}

/// Seed for the `index`-th item of a stream.
pub fn derive_indexed(root: u64, purpose: &str, index: u64) -> u64 {
    splitmix64(derive_seed(root, purpose) ^ splitmix64(index))
}
