//! Keyed random streams.
//!
//! ChaCha is counter based: a `(seed, stream)` pair addresses an independent
//! sequence, so frame `k` can be generated without generating frames `< k`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::RigidTransform;

pub fn keyed(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// splitmix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn combine(a: u64, b: u64) -> u64 {
    mix(a ^ mix(b))
}

/// Stable 64-bit digest of a pose's exact bit pattern.
pub fn pose_key(pose: &RigidTransform) -> u64 {
    pose.rotation
        .iter()
        .chain(pose.translation.iter())
        .fold(0x5eed_u64, |h, v| combine(h, v.to_bits()))
}
