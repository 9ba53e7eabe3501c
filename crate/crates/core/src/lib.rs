//! Causal streaming echo cancellation and noise suppression on 16 kHz
//! audio, with attention whose temporal span is predicted per frame.
//!
//! The pipeline runs STFT frames (20 ms window, 10 ms hop) through two
//! frequency encoders, a time-alignment merge that attends from the
//! microphone to past reference frames, repeated temporal convolution and
//! grouped self-attention modules, and a decoder predicting a complex ratio
//! mask. Every attention module can replace its fixed window with a learned
//! span `z_t` and a soft ramp, which skips keys beyond the span.
//!
//! ```no_run
//! use dynspan::dsp::{istft, stft, read_wav};
//! use dynspan::model::Model;
//!
//! # fn main() -> dynspan::Result<()> {
//! let model = Model::load("model.ckpt")?;
//! let mic = stft(&read_wav("mic.wav")?)?;
//! let reference = stft(&read_wav("ref.wav")?)?;
//! let mut state = model.stream_state();
//! for t in 0..mic.frames() {
//!     let _frame = model.stream_step(&mut state, mic.frame(t).view(), reference.frame(t).view())?;
//! }
//! let offline = istft(&model.forward(&mic, &reference)?)?;
//! # let _ = offline;
//! # Ok(())
//! # }
//! ```

pub mod attention;
pub mod cli;
pub mod dsp;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scene;
pub mod train;

pub use error::{Error, Result};
