//! Explicitly threaded, seedable random number generation.
//!
//! Everything stochastic in the crate (initialisation, dropout, scene
//! synthesis, augmentation, shuffling) draws from a [`Rng`] handed in by the
//! caller. ChaCha is counter based, so a generator's full state is its seed,
//! stream id and word position, which is what [`RngState`] stores in
//! checkpoints.

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

pub type Rng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Independent generator for sub-task `stream` of a run seeded with `seed`.
pub fn substream(seed: u64, stream: u64) -> Rng {
    let mut rng = Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// Word position as a decimal string; the value is 68 bits wide.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> crate::Result<Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| crate::Error::Config(format!("bad rng word position {:?}", self.word_pos)))?;
        let mut rng = Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}
