use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {len} samples, need at least {need}")]
    InputTooShort { len: usize, need: usize },

    #[error("empty spectrogram")]
    EmptySpectrogram,

    #[error("wav {path}: {reason}")]
    Wav { path: PathBuf, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("causality violation: key frame {r} is after query frame {t}")]
    Causality { t: usize, r: usize },

    #[error("all attention masks are zero")]
    AllMasked,

    #[error("backward called without a recorded forward pass")]
    NoForward,

    #[error("loss became NaN; first non-finite tensor: {0}")]
    NanLoss(String),

    #[error("unknown variant `{0}`; expected one of baseline_cat, baseline_ta, ta_das, gtsa_das, all_das")]
    UnknownVariant(String),

    #[error("invalid scene: {0}")]
    Scene(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("frame {frame} out of range (utterance has {frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Metric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
