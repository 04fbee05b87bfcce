//! Binary checkpoints: full trainer state including generator positions, so a
//! resumed run replays bit-for-bit.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::harness::config::RunConfig;
use crate::harness::RunError;
use crate::linalg::Matrix;
use crate::optim::{FullAdamState, FullSgdmState, LowRankOptimizerState};

const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha generator: key, stream, and word offset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Optimizer state for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LayerOptState {
    FullAdam(FullAdamState),
    FullSgdm(FullSgdmState),
    LowRank(LowRankOptimizerState),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCheckpoint {
    pub name: String,
    pub w: Matrix,
    pub state: LayerOptState,
    pub rng: RngState,
}

/// Everything needed to continue a run exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: RunConfig,
    pub step: u64,
    pub data_rng: RngState,
    pub noise_rng: RngState,
    pub layers: Vec<LayerCheckpoint>,
}

impl Checkpoint {
    pub fn new(
        config: RunConfig,
        step: u64,
        data_rng: RngState,
        noise_rng: RngState,
        layers: Vec<LayerCheckpoint>,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config,
            step,
            data_rng,
            noise_rng,
            layers,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RunError> {
        let bytes = bincode::serialize(self)
            .map_err(|e| RunError::Io(format!("checkpoint encoding: {e}")))?;
        std::fs::write(path, bytes)
            .map_err(|e| RunError::Io(format!("cannot write {}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let bytes = std::fs::read(path)
            .map_err(|e| RunError::Io(format!("cannot read {}: {e}", path.display())))?;
        let ckpt: Checkpoint = bincode::deserialize(&bytes)
            .map_err(|e| RunError::Io(format!("{}: bad checkpoint: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(RunError::Io(format!(
                "{}: checkpoint version {} unsupported (expected {})",
                path.display(),
                ckpt.version,
                CHECKPOINT_VERSION
            )));
        }
        Ok(ckpt)
    }
}
