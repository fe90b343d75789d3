//! Seeded random streams.
//!
//! Every simulator draws from ChaCha8 keyed by the user seed. Independent
//! substreams are selected with the ChaCha stream counter: stream `k` of seed
//! `s` is `ChaCha8Rng::seed_from_u64(s)` followed by `set_stream(k)`. The
//! output is platform independent, so a (seed, stream) pair always yields the
//! same sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream used by the flow-level simulator for holding times.
pub const STREAM_HOLDING: u64 = 0;
/// Stream used by the flow-level simulator for picking the next event.
pub const STREAM_EVENT: u64 = 1;
/// Stream used by the SRBM stepper for Brownian increments.
pub const STREAM_NOISE: u64 = 2;
/// Stream handed to user-supplied initial-state samplers.
pub const STREAM_INITIAL: u64 = 3;
/// Stream used by the stationary approximation sampler.
pub const STREAM_APPROX: u64 = 4;

pub fn substream(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
