use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a path of tags into an independent sub-seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

// Stream tags.
pub(crate) const TAG_NAV: u64 = 0x006e_6176;
pub(crate) const TAG_PHASE: u64 = 0x7068_6173;
pub(crate) const TAG_NOISE: u64 = 0x6e6f_6973;
pub(crate) const TAG_SPOOF: u64 = 0x7370_6f6f;
pub(crate) const TAG_SPLIT: u64 = 0x7370_6c74;
