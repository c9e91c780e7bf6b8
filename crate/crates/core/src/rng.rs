//! Named, independent random streams derived from one scenario seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Fleet,
    Churn,
    Workload,
    Network,
    Scheduling,
    AgentSampling,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Fleet => 1,
            Stream::Churn => 2,
            Stream::Workload => 3,
            Stream::Network => 4,
            Stream::Scheduling => 5,
            Stream::AgentSampling => 6,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
