//! Deterministic random streams split from one master seed.
//!
//! Every stream is a ChaCha8 generator keyed by the master seed with the
//! stream id selecting an independent 64-bit stream of the cipher. Streams
//! can be created in any order and on any thread without coordination.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream-id namespaces, so that simulation rows and sampler chunks never
/// share a stream under the same seed.
pub mod domain {
    pub const SIMULATION_ROW: u64 = 1 << 48;
    pub const CHUNK: u64 = 2 << 48;
    pub const PRIOR: u64 = 3 << 48;
}

pub fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
