//! Reproducible random substreams.
//!
//! Every replica of an experiment draws from its own ChaCha8 stream, keyed by
//! the master seed and a 64-bit stream id. ChaCha is a counter-based cipher, so
//! streams are independent and a replica's draws do not depend on which thread
//! runs it or in which order replicas are scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Generator for `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replica `replica` of experiment arm `arm` (e.g. the index into an N list).
pub fn replica_stream(arm: u64, replica: u64) -> u64 {
    splitmix64(arm.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ splitmix64(replica))
}

/// Shorthand for `substream(seed, replica_stream(arm, replica))`.
pub fn replica_rng(seed: u64, arm: u64, replica: u64) -> SimRng {
    substream(seed, replica_stream(arm, replica))
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
