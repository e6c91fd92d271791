//! Seed derivation.
//!
//! Every random stream in the lab is a ChaCha8 generator seeded from a
//! `(master seed, stream, index)` triple. The split rule is SplitMix64 applied
//! to the master seed, then folded with the stream tag and the index, so any
//! sample can be regenerated independently of its neighbours.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Named random streams. The discriminant is part of the seed derivation and
/// must never be renumbered.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Trajectory = 1,
    Channel = 2,
    Clutter = 3,
    Degradation = 4,
    Init = 5,
    Shuffle = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master);
    let b = splitmix64(a ^ (stream as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
    splitmix64(b ^ index)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> LabRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, index))
}
