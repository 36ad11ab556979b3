//! Named sub-seeds.
//!
//! Every random draw in a run derives from one configured seed. Each consumer
//! gets its own ChaCha stream so that, for example, changing the dropout
//! pattern never perturbs the weight initialisation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Split = 1,
    Init = 2,
    Dropout = 3,
    Shuffle = 4,
    Cluster = 5,
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
