//! Named random streams.
//!
//! Every source of randomness in a run is derived from one `u64` seed and a
//! [`Stream`] label. Each label selects an independent ChaCha stream, so the
//! number of draws taken from one stream never shifts the values seen by
//! another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stream {
    WorkerLatency,
    DataGeneration,
    BatchSampling,
    MeanAssignment,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::WorkerLatency => 1,
            Stream::DataGeneration => 2,
            Stream::BatchSampling => 3,
            Stream::MeanAssignment => 4,
        }
    }
}

pub fn stream_rng(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
