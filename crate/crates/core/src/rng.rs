//! Reproducible random streams.
//!
//! Every stochastic quantity is drawn from a ChaCha stream keyed by
//! `(master_seed, purpose, index)`. The purpose tag separates, for example,
//! the microstructure of replicate 7 from its observation noise, and the
//! index selects an independent ChaCha stream, so replicates can run in any
//! order on any thread and still reproduce bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Microstructure,
    Prior,
    ObservationNoise,
    Brownian,
    Importance,
    Generic,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Microstructure => 0x6d69_6372_6f73_7472,
            Purpose::Prior => 0x7072_696f_7200_0000,
            Purpose::ObservationNoise => 0x6e6f_6973_6500_0000,
            Purpose::Brownian => 0x6272_6f77_6e00_0000,
            Purpose::Importance => 0x696d_706f_7274_0000,
            Purpose::Generic => 0x6765_6e65_7269_6300,
        }
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(master, purpose, index)`.
pub fn stream(master: u64, purpose: Purpose, index: u64) -> StreamRng {
    let mut state = master ^ purpose.tag().rotate_left(17);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(index);
    rng
}

/// A 64-bit child seed, for APIs that take a plain seed.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    let mut state = master ^ purpose.tag() ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    splitmix64(&mut state);
    splitmix64(&mut state)
}
