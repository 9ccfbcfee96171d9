//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator, so a given seed produces the same
//! sequence on every platform. Streams that must not interfere with each other
//! (per-session dynamics, per-session exploration, learner minibatches) are
//! derived from the master seed by a purpose tag and a stream id, which keeps
//! results independent of how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Purpose tags for derived streams.
pub mod purpose {
    pub const POPULATION: u64 = 0x706f_7075;
    pub const PROFILE: u64 = 0x7072_6f66;
    pub const SESSION: u64 = 0x7365_7373;
    pub const DYNAMICS: u64 = 0x6479_6e61;
    pub const POLICY: u64 = 0x706f_6c69;
    pub const LEARNER: u64 = 0x6c65_6172;
    pub const INIT: u64 = 0x696e_6974;
    pub const EVAL: u64 = 0x6576_616c;
}

pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `(seed, purpose)`.
pub fn stream_rng(seed: u64, purpose: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(purpose)));
    rng.set_stream(stream);
    rng
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a, used to bucket identifiers stably across runs.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
