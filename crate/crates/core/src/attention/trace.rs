//! Per-frame record of spans and attention rows for inspection.

use std::io::Write;

use ndarray::Array2;

use super::das::mask_at_lag;
use super::kernel::{RowCache, Window};
use crate::error::Result;
use crate::nn::tensor::dot;

/// One attention row over the full window `0..min(T_w, t + 1)`.
///
/// Keys beyond the effective span are scored for display only; their
/// weight is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct RowDump {
    pub frame: usize,
    pub lags: Vec<usize>,
    pub masks: Vec<f64>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupTrace {
    /// `z_t` for dynamic groups, `T_w` otherwise.
    pub spans: Vec<f64>,
    /// Keys actually scored at each frame.
    pub keys: Vec<usize>,
    pub rows: Vec<RowDump>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleTrace {
    pub name: String,
    pub dynamic: bool,
    /// Query/key width per group.
    pub width: usize,
    /// Input width of each span head (0 without heads).
    pub head_dim: usize,
    pub groups: Vec<GroupTrace>,
}

impl ModuleTrace {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn build(
        name: &str,
        window: &Window,
        q: &Array2<f64>,
        k: &Array2<f64>,
        groups: &[Vec<RowCache>],
        scale: f64,
        head_dim: usize,
        frames: &[usize],
    ) -> Self {
        let width = q.ncols() / groups.len();
        let dynamic = groups.iter().any(|g| g.iter().any(|r| r.z.is_some()));
        let groups = groups
            .iter()
            .enumerate()
            .map(|(g, rows)| {
                let cols = g * width..(g + 1) * width;
                let spans = rows
                    .iter()
                    .map(|r| r.z.unwrap_or(window.max_span as f64))
                    .collect();
                let keys = rows.iter().map(RowCache::n_keys).collect();
                let dumps = frames
                    .iter()
                    .filter(|&&t| t < rows.len())
                    .map(|&t| {
                        let row = &rows[t];
                        let n = window.max_span.min(t + 1);
                        let qt = &q.row(t).to_slice().expect("standard layout")[cols.clone()];
                        let lags: Vec<usize> = (0..n).collect();
                        RowDump {
                            frame: t,
                            masks: lags
                                .iter()
                                .map(|&l| row.z.map_or(1.0, |z| mask_at_lag(z, l, window.ramp)))
                                .collect(),
                            scores: lags
                                .iter()
                                .map(|&l| {
                                    let kr = k.row(t - l);
                                    dot(qt, &kr.to_slice().expect("standard layout")[cols.clone()]) * scale
                                })
                                .collect(),
                            weights: lags
                                .iter()
                                .map(|&l| row.weights.get(l).copied().unwrap_or(0.0))
                                .collect(),
                            lags,
                        }
                    })
                    .collect();
                GroupTrace {
                    spans,
                    keys,
                    rows: dumps,
                }
            })
            .collect();
        Self {
            name: name.to_string(),
            dynamic,
            width,
            head_dim: if dynamic { head_dim } else { 0 },
            groups,
        }
    }

    /// Query-key and weight-value multiply-accumulates over the sequence.
    pub fn attention_macs(&self) -> u64 {
        self.groups
            .iter()
            .map(|g| g.keys.iter().map(|&n| 2 * (n * self.width) as u64).sum::<u64>())
            .sum()
    }

    /// Span-head multiply-accumulates over the sequence.
    pub fn span_head_macs(&self) -> u64 {
        self.groups
            .iter()
            .map(|g| (g.spans.len() * self.head_dim) as u64)
            .sum()
    }

    /// Multiply-accumulates for the same module with every span at `T_w`.
    pub fn full_window_macs(&self, max_span: usize) -> u64 {
        self.groups
            .iter()
            .map(|g| {
                (0..g.keys.len())
                    .map(|t| 2 * (max_span.min(t + 1) * self.width) as u64)
                    .sum::<u64>()
            })
            .sum()
    }
}

/// Attention record for one utterance.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionTrace {
    pub frames: usize,
    pub modules: Vec<ModuleTrace>,
}

impl AttentionTrace {
    pub fn module(&self, name: &str) -> Option<&ModuleTrace> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn attention_macs(&self) -> u64 {
        self.modules.iter().map(ModuleTrace::attention_macs).sum()
    }

    pub fn span_head_macs(&self) -> u64 {
        self.modules.iter().map(ModuleTrace::span_head_macs).sum()
    }

    /// `frame,module,group,z_t,keys`
    pub fn write_spans_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "frame,module,group,z_t,keys")?;
        for t in 0..self.frames {
            for m in &self.modules {
                for (g, group) in m.groups.iter().enumerate() {
                    writeln!(w, "{t},{},{g},{},{}", m.name, group.spans[t], group.keys[t])?;
                }
            }
        }
        Ok(())
    }

    /// `lag,mask,score,a` for one dumped row.
    pub fn write_row_csv(row: &RowDump, mut w: impl Write) -> Result<()> {
        writeln!(w, "lag,mask,score,a")?;
        for i in 0..row.lags.len() {
            writeln!(
                w,
                "{},{},{},{}",
                row.lags[i], row.masks[i], row.scores[i], row.weights[i]
            )?;
        }
        Ok(())
    }
}
