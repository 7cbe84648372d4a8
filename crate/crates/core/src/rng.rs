use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for an independent stream named `label` under the scenario seed.
///
/// FNV-1a over the label keeps the derivation stable across toolchains.
pub fn stream_seed(scenario_seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(scenario_seed ^ splitmix64(h))
}

pub fn stream(scenario_seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(scenario_seed, label))
}
