//! Deterministic stream splitting.
//!
//! Every random draw in a run is keyed by `(seed, purpose, step, index)`, so the
//! value an agent sees does not depend on thread scheduling or on how many other
//! agents were simulated before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AgentRng = ChaCha8Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Types,
    Perturbation,
    Evaluation,
    NaiveFit,
    Oracle,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Types => 0x7479_7065,
            Purpose::Perturbation => 0x7065_7274,
            Purpose::Evaluation => 0x6576_616c,
            Purpose::NaiveFit => 0x6e61_6976,
            Purpose::Oracle => 0x6f72_636c,
        }
    }
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A family of per-index generators for one `(seed, purpose, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    key: u64,
}

impl SeedStream {
    pub fn new(seed: u64, purpose: Purpose, step: u64) -> Self {
        let mut key = mix(seed ^ 0x9e37_79b9_7f4a_7c15);
        key = mix(key ^ purpose.tag());
        key = mix(key.wrapping_add(step.wrapping_mul(0x9e37_79b9_7f4a_7c15)));
        SeedStream { key }
    }

    pub fn agent(&self, index: usize) -> AgentRng {
        let s = mix(self.key ^ mix(index as u64 ^ 0xd1b5_4a32_d192_ed03));
        ChaCha8Rng::seed_from_u64(s)
    }
}
