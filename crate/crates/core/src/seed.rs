//! Deterministic seed streams. Every random component derives its generator
//! from a master seed plus a path of integer tags, so results do not depend
//! on scheduling order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `tags` into `base` one at a time.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(base.wrapping_add(GOLDEN)), |acc, &t| {
        splitmix(acc ^ splitmix(t.wrapping_add(GOLDEN).wrapping_mul(3)))
    })
}
