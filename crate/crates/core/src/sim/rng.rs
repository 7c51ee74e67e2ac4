//! Independent, portable random streams per stochastic entity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Instance = 1,
    Client = 2,
    Policy = 3,
    TrueMu = 4,
    Topology = 5,
    Events = 6,
    Phase = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha8 stream keyed by `(seed, kind, entity)`.
pub fn stream(seed: u64, kind: Stream, entity: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(((kind as u64) << 48) ^ entity));
    ChaCha8Rng::seed_from_u64(key)
}
