//! Seeded, domain-separated random streams.
//!
//! ChaCha8 output is stable across platforms and crate versions; each consumer
//! draws from its own stream so adding a draw in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    HyperNetInit,
    HeadInit,
    Subset,
    /// Mini-batch order for one epoch.
    Shuffle { epoch: u64 },
    /// Augmentation draw for one sample in one epoch.
    Augment { epoch: u64, sample: u64 },
    Synthetic,
    Gradcheck,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::HyperNetInit => 1,
            Stream::HeadInit => 2,
            Stream::Subset => 3,
            Stream::Synthetic => 4,
            Stream::Gradcheck => 5,
            Stream::Shuffle { epoch } => (1 << 40) | epoch,
            Stream::Augment { epoch, sample } => (2 << 40) | (epoch << 24) | sample,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
