//! Causal attention with a learnable per-frame span.
//!
//! Two modules share one kernel: [`TaMerge`] aligns the far-end reference to
//! the microphone, and [`Gtsa`] attends over past frames of its own input in
//! several channel groups. Each can run with a fixed window of `T_w` frames
//! or with a [`DasHead`] that shrinks the window frame by frame.

mod das;
mod gtsa;
mod kernel;
mod ta;
mod trace;

use std::collections::VecDeque;

pub use das::{
    das_span, effective_span, logit, sigmoid, soft_mask, DasHead, DEFAULT_MAX_SPAN, DEFAULT_RAMP,
    INIT_SPAN_FRACTION,
};
pub use gtsa::{Gtsa, GtsaCache};
pub use kernel::{masked_softmax, RowCache, Window};
pub use ta::{TaCache, TaMerge};
pub use trace::{AttentionTrace, GroupTrace, ModuleTrace, RowDump};

/// Keys and values of the most recent `T_w` frames for streaming inference.
#[derive(Debug, Clone, Default)]
pub struct KvRing {
    keys: VecDeque<Vec<f64>>,
    values: VecDeque<Vec<f64>>,
    seen: usize,
}

impl KvRing {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a frame and returns its index.
    pub(crate) fn push(&mut self, key: Vec<f64>, value: Vec<f64>, cap: usize) -> usize {
        if self.keys.len() == cap {
            self.keys.pop_front();
            self.values.pop_front();
        }
        self.keys.push_back(key);
        self.values.push_back(value);
        self.seen += 1;
        self.seen - 1
    }

    pub(crate) fn by_lag(&self, n: usize) -> (Vec<&[f64]>, Vec<&[f64]>) {
        let last = self.keys.len() - 1;
        (
            (0..n).map(|l| self.keys[last - l].as_slice()).collect(),
            (0..n).map(|l| self.values[last - l].as_slice()).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn frames_seen(&self) -> usize {
        self.seen
    }
}
