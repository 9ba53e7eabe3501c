use std::fmt::Write as _;

use crate::attention::AttentionTrace;
use crate::dsp::{HOP, SAMPLE_RATE};
use crate::model::{Model, Variant};

/// Attention cost of one module over an utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMacs {
    pub module: String,
    /// Query-key products.
    pub scores: u64,
    /// Weight-value products.
    pub weighted_sum: u64,
    pub span_heads: u64,
    /// The same module with every span at `T_w`.
    pub full_window: u64,
}

impl AttentionMacs {
    pub fn total(&self) -> u64 {
        self.scores + self.weighted_sum
    }
}

/// Multiply-accumulate counts for one utterance. One MAC is one
/// multiply-add; normalization and activations are not counted.
#[derive(Debug, Clone, PartialEq)]
pub struct MacReport {
    pub variant: Variant,
    pub frames: usize,
    /// Convolution and projection MACs per component over the utterance.
    pub conv: Vec<(String, u64)>,
    pub attention: Vec<AttentionMacs>,
}

impl MacReport {
    pub fn seconds(&self) -> f64 {
        (self.frames * HOP) as f64 / SAMPLE_RATE as f64
    }

    pub fn conv_total(&self) -> u64 {
        self.conv.iter().map(|(_, m)| m).sum()
    }

    pub fn attention_total(&self) -> u64 {
        self.attention.iter().map(AttentionMacs::total).sum()
    }

    pub fn span_head_total(&self) -> u64 {
        self.attention.iter().map(|a| a.span_heads).sum()
    }

    pub fn full_window_total(&self) -> u64 {
        self.attention.iter().map(|a| a.full_window).sum()
    }

    pub fn total(&self) -> u64 {
        self.conv_total() + self.attention_total() + self.span_head_total()
    }

    fn per_second(&self, macs: u64) -> f64 {
        macs as f64 / self.seconds()
    }

    /// Total MACs per second of audio.
    pub fn macs_per_second(&self) -> f64 {
        self.per_second(self.total())
    }

    /// `component,kind,macs,macs_per_second`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("component,kind,macs,macs_per_second\n");
        let mut row = |name: &str, kind: &str, m: u64| {
            writeln!(s, "{name},{kind},{m},{}", self.per_second(m)).expect("string write");
        };
        for (name, m) in &self.conv {
            row(name, "conv", *m);
        }
        for a in &self.attention {
            row(&a.module, "attention_scores", a.scores);
            row(&a.module, "attention_weighted_sum", a.weighted_sum);
            row(&a.module, "span_heads", a.span_heads);
            row(&a.module, "attention_full_window", a.full_window);
        }
        row("total", "all", self.total());
        s
    }

    /// Human-readable summary in millions of MACs per second.
    pub fn to_table(&self) -> String {
        let m = |x: u64| self.per_second(x) / 1e6;
        let mut s = String::new();
        writeln!(s, "{:<14} {:>12} {:>12} {:>12} {:>12} {:>12}", "variant", "total M/s", "conv M/s", "attn M/s", "attn@T_w M/s", "heads M/s")
            .expect("string write");
        writeln!(
            s,
            "{:<14} {:>12.3} {:>12.3} {:>12.3} {:>12.3} {:>12.4}",
            self.variant.to_string(),
            m(self.total()),
            m(self.conv_total()),
            m(self.attention_total()),
            m(self.full_window_total()),
            m(self.span_head_total())
        )
        .expect("string write");
        s
    }
}

/// Counts MACs for `frames` frames given the attention trace of that
/// utterance.
pub fn count_macs(model: &Model, frames: usize, trace: &AttentionTrace) -> MacReport {
    let conv = model
        .conv_macs_per_frame()
        .into_iter()
        .map(|(n, m)| (n, m * frames as u64))
        .collect();
    let attention = trace
        .modules
        .iter()
        .map(|t| {
            let half = t.attention_macs() / 2;
            AttentionMacs {
                module: t.name.clone(),
                scores: half,
                weighted_sum: half,
                span_heads: t.span_head_macs(),
                full_window: t.full_window_macs(model.config.max_span),
            }
        })
        .collect();
    MacReport {
        variant: model.config.variant,
        frames,
        conv,
        attention,
    }
}
