//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha stream whose 256-bit key is
//! derived from the master seed and a path of integer tags (run, level,
//! sample index, component). Streams for different tag paths are
//! independent, and none depends on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream component tags for the pieces of one coefficient draw.
pub mod component {
    pub const W1: u64 = 1;
    pub const W2: u64 = 2;
    pub const PATH_X: u64 = 3;
    pub const PATH_Y: u64 = 4;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub master: u64,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeedSchedule {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    /// A child schedule whose streams are disjoint from the parent's other children.
    pub fn child(&self, tag: u64) -> Self {
        let mut state = self.master ^ 0xD1B5_4A32_D192_ED03;
        let a = splitmix64(&mut state);
        let mut s2 = a ^ tag.wrapping_mul(0xA24B_AED4_963E_E407);
        Self {
            master: splitmix64(&mut s2),
        }
    }

    pub fn stream(&self, tags: &[u64]) -> ChaCha8Rng {
        let mut state = self.master;
        let mut acc = splitmix64(&mut state);
        for &t in tags {
            let mut s = acc ^ t.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
            acc = splitmix64(&mut s) ^ splitmix64(&mut state);
        }
        let mut seed = [0u8; 32];
        let mut s = acc;
        for chunk in seed.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        ChaCha8Rng::from_seed(seed)
    }
}
