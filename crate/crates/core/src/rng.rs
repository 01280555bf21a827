//! Seed derivation for reproducible parallel work.
//!
//! Every stochastic unit of work (a training roll, a baseline trial, a
//! synthetic column) gets its own generator whose seed is a pure function of
//! the master seed and the unit's index, so results never depend on which
//! worker ran what.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mix a master seed with a stream tag and a counter into a child seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream.rotate_left(17)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn child_rng(master: u64, stream: u64, index: u64) -> SeededRng {
    rng_from_seed(derive_seed(master, stream, index))
}
