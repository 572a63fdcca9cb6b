//! Counter-based random streams.
//!
//! Every random quantity in an estimate is drawn from its own ChaCha stream
//! whose key is the tuple `(seed, run, index, purpose)`. Two draws that must
//! be independent therefore never share a generator, and a sample can be
//! regenerated in isolation from its key, independent of evaluation order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The generator used for every stream.
pub type StreamRng = ChaCha8Rng;

/// What a stream is used for. Each variant maps to a distinct key word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Purpose {
    /// Occupancy horizon `T ~ Geom(1-γ)`.
    OccupancyHorizon,
    /// Actions and transitions of the outer trajectory up to `(s_T, a_T)`.
    OuterTrajectory,
    /// Horizon `T'` of the Q rollout.
    QHorizon,
    /// Actions and transitions of the Q rollout.
    QRollout,
    /// Horizon of the value rollout started at `s_T`.
    VHorizon,
    /// Actions and transitions of the value rollout started at `s_T`.
    VRollout,
    /// Horizon `T''` of the value rollout started at `s'_T`.
    VNextHorizon,
    /// Actions and transitions of the value rollout started at `s'_T`.
    VNextRollout,
    /// The single transition `s'_T ~ P(.|s_T, a_T)`.
    NextState,
    /// Uniform draw of the returned checkpoint in MRPG.
    CheckpointDraw,
    /// Start-state draws for environments with a random start.
    StartState,
    /// Parameter initialisation.
    Init,
    /// Anything else (probing, auxiliary experiments).
    Auxiliary(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::OccupancyHorizon => 1,
            Purpose::OuterTrajectory => 2,
            Purpose::QHorizon => 3,
            Purpose::QRollout => 4,
            Purpose::VHorizon => 5,
            Purpose::VRollout => 6,
            Purpose::VNextHorizon => 7,
            Purpose::VNextRollout => 8,
            Purpose::NextState => 9,
            Purpose::CheckpointDraw => 10,
            Purpose::StartState => 11,
            Purpose::Init => 12,
            Purpose::Auxiliary(k) => (1 << 32) | k as u64,
        }
    }
}

/// Identifies one sample (or one iteration) of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub seed: u64,
    pub run: u64,
    pub index: u64,
}

impl StreamKey {
    pub fn new(seed: u64, run: u64, index: u64) -> Self {
        StreamKey { seed, run, index }
    }

    pub fn with_index(self, index: u64) -> Self {
        StreamKey { index, ..self }
    }

    /// The 32-byte key of the stream for `purpose`.
    pub fn stream_seed(&self, purpose: Purpose) -> [u8; 32] {
        let mut bytes = [0u8; 32];
        bytes[0..8].copy_from_slice(&self.seed.to_le_bytes());
        bytes[8..16].copy_from_slice(&self.run.to_le_bytes());
        bytes[16..24].copy_from_slice(&self.index.to_le_bytes());
        bytes[24..32].copy_from_slice(&purpose.tag().to_le_bytes());
        bytes
    }

    pub fn rng(&self, purpose: Purpose) -> StreamRng {
        StreamRng::from_seed(self.stream_seed(purpose))
    }
}

/// A standalone generator for tests and ad-hoc sampling.
pub fn seeded(seed: u64) -> StreamRng {
    StreamKey::new(seed, 0, 0).rng(Purpose::Auxiliary(0))
}
