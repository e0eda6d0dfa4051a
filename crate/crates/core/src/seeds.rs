//! Per-component random streams derived from one master seed, so swapping
//! one component does not perturb the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Corners,
    AgentInit,
    Minibatch,
    Reuse,
    Policy,
    Partner,
    Qualification,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Corners => 1,
            Stream::AgentInit => 2,
            Stream::Minibatch => 3,
            Stream::Reuse => 4,
            Stream::Policy => 5,
            Stream::Partner => 6,
            Stream::Qualification => 7,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(master: u64, stream: Stream) -> u64 {
    splitmix64(master ^ splitmix64(stream.id()))
}

pub fn stream_rng(master: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream))
}

/// The generators a learner consumes while playing and training.
#[derive(Debug, Clone)]
pub struct Streams {
    pub corners: ChaCha8Rng,
    pub minibatch: ChaCha8Rng,
    pub reuse: ChaCha8Rng,
    pub policy: ChaCha8Rng,
}

impl Streams {
    pub fn new(master: u64) -> Self {
        Self {
            corners: stream_rng(master, Stream::Corners),
            minibatch: stream_rng(master, Stream::Minibatch),
            reuse: stream_rng(master, Stream::Reuse),
            policy: stream_rng(master, Stream::Policy),
        }
    }
}
