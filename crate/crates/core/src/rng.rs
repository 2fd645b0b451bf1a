//! Seeded random streams. Each stage of a run draws from its own ChaCha
//! stream so that changing one stage never shifts the numbers seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Emitter = 1,
    Channel = 2,
    Receiver = 3,
    Detection = 4,
    Sampling = 5,
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
