//! Deterministic random streams.
//!
//! Every consumer of randomness derives its own ChaCha stream from a run
//! seed, a purpose tag and an item index, so results never depend on the
//! order in which items are processed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type Stream = ChaCha8Rng;

/// Purpose tags. Distinct tags give statistically independent streams for
/// the same `(seed, index)`.
pub mod tag {
    pub const TRAIN_SET: u64 = 0x7472_6169_6e00_0001;
    pub const TEST_SET: u64 = 0x7465_7374_0000_0002;
    pub const EXPERIMENT: u64 = 0x6578_7065_7200_0003;
    pub const INIT: u64 = 0x696e_6974_0000_0004;
    pub const TRAINING: u64 = 0x7472_6169_6e00_0005;
    pub const SAMPLING: u64 = 0x7361_6d70_6c00_0006;
    pub const SOLVER: u64 = 0x736f_6c76_6500_0007;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed with a tag into a new 64-bit seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag)
}

/// Independent stream for item `index` of the purpose `tag`.
pub fn stream(seed: u64, tag: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag));
    rng.set_stream(index);
    rng
}

pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn fill_normal(rng: &mut impl Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

pub fn normal_vec(rng: &mut impl Rng, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    fill_normal(rng, &mut v);
    v
}

/// Uniform draw in `[-half_width, half_width]`.
pub fn symmetric_uniform(rng: &mut impl Rng, half_width: f64) -> f64 {
    half_width * (2.0 * rng.random::<f64>() - 1.0)
}
