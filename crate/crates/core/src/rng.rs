//! Seeded RNG streams. Every stochastic component draws from its own ChaCha
//! stream so that runs are reproducible and components stay independent.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub enum Stream {
    Demand,
    LegDistance,
    WeightInit(usize),
    Explore(usize),
    Replay(usize),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Demand => 1,
            Stream::LegDistance => 2,
            Stream::WeightInit(i) => 1_000 + i as u64,
            Stream::Explore(i) => 2_000 + i as u64,
            Stream::Replay(i) => 3_000 + i as u64,
        }
    }
}

pub fn seeded_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
