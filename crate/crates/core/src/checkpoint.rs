//! Versioned checkpoint container.
//!
//! A checkpoint is a JSON document holding the model state (config snapshot,
//! ensemble storage, classifier, memory, session index), the accuracy history
//! so far, and the PRNG cursor. Floats are written in shortest round-trip
//! form, so loading reproduces every parameter bit for bit.
//!
//! All random draws are keyed by `(seed, purpose, session)`, so the cursor is
//! the pair (seed, next session): resuming from it replays exactly the draws
//! an uninterrupted run would make.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::AccuracyMatrix;
use crate::trainer::ModelState;

pub const CHECKPOINT_FORMAT: &str = "pki-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    pub next_session: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub rng: RngCursor,
    pub state: ModelState,
    pub accuracy: AccuracyMatrix,
}

impl Checkpoint {
    pub fn new(state: ModelState, accuracy: AccuracyMatrix) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            rng: RngCursor {
                seed: state.config.seed,
                next_session: state.session + 1,
            },
            state,
            accuracy,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Self = serde_json::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Serde(format!("not a checkpoint (format {:?})", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        ckpt.state.validate()?;
        if ckpt.rng.seed != ckpt.state.config.seed || ckpt.rng.next_session != ckpt.state.session + 1 {
            return Err(Error::state("checkpoint PRNG cursor does not match its state"));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
