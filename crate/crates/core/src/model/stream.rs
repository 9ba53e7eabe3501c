use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, Axis};

use super::{mask, Merge, Model};
use crate::attention::KvRing;
use crate::error::{Error, Result};
use crate::nn::tensor::concat_channels;
use crate::nn::Feature;

/// Per-stream memory: key/value rings of at most `T_w` frames for every
/// attention module and the depthwise-conv input history of every TCM.
#[derive(Debug, Clone, Default)]
pub struct StreamState {
    ta: KvRing,
    gtsa: Vec<KvRing>,
    tcm: Vec<VecDeque<Feature>>,
    frames: usize,
}

impl StreamState {
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Occupancy of every key/value ring (TA first when present).
    pub fn ring_lengths(&self) -> Vec<usize> {
        std::iter::once(self.ta.len())
            .filter(|&n| n > 0)
            .chain(self.gtsa.iter().map(KvRing::len))
            .collect()
    }

    /// Total buffered `f64` values.
    pub fn buffered_values(&self, model: &Model) -> usize {
        let width = model.config.attention_width();
        let rings: usize = self.ring_lengths().iter().map(|n| 2 * n * width).sum();
        let tcm: usize = self.tcm.iter().flatten().map(|f| f.len()).sum();
        rings + tcm
    }
}

impl Model {
    pub fn stream_state(&self) -> StreamState {
        StreamState {
            ta: KvRing::new(),
            gtsa: vec![KvRing::new(); self.modules.len()],
            tcm: vec![VecDeque::new(); self.modules.len()],
            frames: 0,
        }
    }

    /// Processes one `2 × F` frame pair and returns the matching `2 × F`
    /// estimate frame.
    pub fn stream_step(
        &self,
        state: &mut StreamState,
        mic: ArrayView2<'_, f64>,
        reference: ArrayView2<'_, f64>,
    ) -> Result<Array2<f64>> {
        let want = (2, self.config.freq_bins);
        if mic.dim() != want || reference.dim() != want {
            return Err(Error::Shape(format!(
                "stream frames must be {}x{}, got {:?} and {:?}",
                want.0,
                want.1,
                mic.dim(),
                reference.dim()
            )));
        }
        if state.gtsa.len() != self.modules.len() {
            return Err(Error::Shape("stream state belongs to a different model".into()));
        }
        if mic.iter().chain(reference.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input frame".into()));
        }
        let u = self.config.usable_bins();
        let lift = |x: ArrayView2<'_, f64>| -> Feature {
            x.slice(ndarray::s![.., ..u]).to_owned().insert_axis(Axis(1))
        };
        let mut m = lift(mic);
        for b in &self.mic_encoder {
            m = b.eval(&m)?;
        }
        let mut r = lift(reference);
        for b in &self.ref_encoder {
            r = b.eval(&r)?;
        }
        let mut h = match &self.merge {
            Merge::Concat(b) => b.eval(&concat_channels(&m, &r))?,
            Merge::Align(ta) => ta.step(&m, &r, &mut state.ta)?,
        };
        for (i, module) in self.modules.iter().enumerate() {
            let u = module.tcm.step(&h, &mut state.tcm[i])?;
            h = module.gtsa.step(&u, &h, &mut state.gtsa[i])?;
        }
        for b in &self.decoder {
            h = b.eval(&h)?;
        }
        let raw = self.head.forward(&h)?;
        let est = mask::apply(&raw, mic.insert_axis(Axis(1)));
        state.frames += 1;
        Ok(est.index_axis_move(Axis(1), 0))
    }
}
