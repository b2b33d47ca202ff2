//! Seeded random streams.
//!
//! Every random decision flows from one user seed through named sub-streams so
//! that data generation, initialization and shuffling are independently
//! reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data,
    BackboneInit,
    PrefixInit,
    InstructorInit,
    Shuffle,
    Test,
    Pretrain,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::BackboneInit => 2,
            Stream::PrefixInit => 3,
            Stream::InstructorInit => 4,
            Stream::Shuffle => 5,
            Stream::Test => 6,
            Stream::Pretrain => 7,
        }
    }
}

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, stream: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

pub fn shuffle<T>(items: &mut [T], rng: &mut StreamRng) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}
