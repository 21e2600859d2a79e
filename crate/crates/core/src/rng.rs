//! Hierarchical seeding. Every random decision in the pipeline is drawn from a
//! generator seeded by `derive_seed(master, stream, index)`, so results depend
//! only on the master seed and never on call order across streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers for [`derive_seed`].
pub mod stream {
    pub const INIT: u64 = 1;
    pub const MASK_WINDOW: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const UTTERANCE_PICK: u64 = 4;
    pub const STEP: u64 = 5;
    pub const PROBE_PICK: u64 = 6;
    pub const UTTERANCE: u64 = 7;
    pub const SYNTH: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream) ^ index)
}

pub fn rng_for(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, stream: u64, index: u64) -> Rng {
    rng_for(derive_seed(master, stream, index))
}
