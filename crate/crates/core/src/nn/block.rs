use rand::Rng;

use super::conv::{Conv1x1, FreqConv, FreqConvTranspose};
use super::norm::{BatchNorm, NormCache};
use super::{join, Feature, Mode, PRelu, Param, Params};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub enum ConvKind {
    Pointwise(Conv1x1),
    Freq(FreqConv),
    FreqUp(FreqConvTranspose),
}

impl ConvKind {
    fn forward(&self, x: &Feature) -> Result<Feature> {
        match self {
            ConvKind::Pointwise(c) => c.forward(x),
            ConvKind::Freq(c) => c.forward(x),
            ConvKind::FreqUp(c) => c.forward(x),
        }
    }

    fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        match self {
            ConvKind::Pointwise(c) => c.backward(x, dy),
            ConvKind::Freq(c) => c.backward(x, dy),
            ConvKind::FreqUp(c) => c.backward(x, dy),
        }
    }

    fn macs_per_frame(&self, f_in: usize) -> u64 {
        match self {
            ConvKind::Pointwise(c) => c.macs_per_frame(f_in),
            ConvKind::Freq(c) => c.macs_per_frame(f_in),
            ConvKind::FreqUp(c) => c.macs_per_frame(f_in),
        }
    }

    fn out_len(&self, f_in: usize) -> usize {
        match self {
            ConvKind::Pointwise(_) => f_in,
            ConvKind::Freq(c) => c.out_len(f_in),
            ConvKind::FreqUp(_) => 2 * f_in,
        }
    }
}

impl Params for ConvKind {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        match self {
            ConvKind::Pointwise(c) => c.visit(prefix, f),
            ConvKind::Freq(c) => c.visit(prefix, f),
            ConvKind::FreqUp(c) => c.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        match self {
            ConvKind::Pointwise(c) => c.visit_mut(prefix, f),
            ConvKind::Freq(c) => c.visit_mut(prefix, f),
            ConvKind::FreqUp(c) => c.visit_mut(prefix, f),
        }
    }
}

/// Convolution followed by batch normalization and PReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub conv: ConvKind,
    pub norm: BatchNorm,
    pub act: PRelu,
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    inputs: Vec<Feature>,
    norm: NormCache,
    pre_act: Vec<Feature>,
}

impl BlockCache {
    pub fn kinks(&self, h: &mut impl std::hash::Hasher) {
        for x in &self.pre_act {
            PRelu::kink_pattern(x, h);
        }
    }
}

impl ConvBlock {
    pub fn pointwise(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self::with(ConvKind::Pointwise(Conv1x1::new(c_in, c_out, rng)), c_out)
    }

    pub fn freq(c_in: usize, c_out: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self::with(ConvKind::Freq(FreqConv::new(c_in, c_out, 3, stride, rng)), c_out)
    }

    pub fn freq_up(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self::with(ConvKind::FreqUp(FreqConvTranspose::new(c_in, c_out, rng)), c_out)
    }

    fn with(mut conv: ConvKind, c_out: usize) -> Self {
        // Normalization cancels a convolution bias; keep it fixed at zero.
        conv.visit_mut("", &mut |name, p| {
            if name == "bias" {
                p.trainable = false;
            }
        });
        Self {
            conv,
            norm: BatchNorm::new(c_out),
            act: PRelu::new(c_out),
        }
    }

    pub fn forward(&self, xs: &[Feature], mode: Mode) -> Result<(Vec<Feature>, BlockCache)> {
        let conv_out = xs
            .iter()
            .map(|x| self.conv.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let (pre_act, norm) = self.norm.forward(&conv_out, mode);
        let ys = pre_act.iter().map(|x| self.act.forward(x)).collect();
        Ok((
            ys,
            BlockCache {
                inputs: xs.to_vec(),
                norm,
                pre_act,
            },
        ))
    }

    /// Single-input evaluation-mode forward.
    pub fn eval(&self, x: &Feature) -> Result<Feature> {
        let y = self.conv.forward(x)?;
        let (mut pre, _) = self.norm.forward(std::slice::from_ref(&y), Mode::Eval);
        Ok(self.act.forward(&pre.remove(0)))
    }

    pub fn backward(&mut self, cache: BlockCache, dys: Vec<Feature>) -> Vec<Feature> {
        let d_pre: Vec<Feature> = cache
            .pre_act
            .iter()
            .zip(&dys)
            .map(|(x, dy)| self.act.backward(x, dy))
            .collect();
        let d_conv = self.norm.backward(&cache.norm, &d_pre);
        cache
            .inputs
            .iter()
            .zip(&d_conv)
            .map(|(x, dy)| self.conv.backward(x, dy))
            .collect()
    }

    /// Makes a square pointwise block pass its input through unchanged, up
    /// to the normalization epsilon. Evaluation mode only.
    pub fn set_identity(&mut self) {
        let ConvKind::Pointwise(c) = &mut self.conv else {
            panic!("identity is defined for pointwise blocks only");
        };
        let n = c.c_out();
        assert_eq!(n, c.c_in(), "identity needs a square block");
        for o in 0..n {
            for i in 0..n {
                c.weight.value[o * n + i] = if o == i { 1.0 } else { 0.0 };
            }
        }
        c.bias.value.fill(0.0);
        self.norm.gamma.value.fill(1.0);
        self.norm.beta.value.fill(0.0);
        self.norm.running_mean.value.fill(0.0);
        self.norm.running_var.value.fill(1.0);
        self.act.slope.value.fill(1.0);
    }

    pub fn macs_per_frame(&self, f_in: usize) -> u64 {
        self.conv.macs_per_frame(f_in)
    }

    pub fn out_len(&self, f_in: usize) -> usize {
        self.conv.out_len(f_in)
    }
}

impl Params for ConvBlock {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.norm.visit(&join(prefix, "norm"), f);
        self.act.visit(&join(prefix, "act"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
        self.act.visit_mut(&join(prefix, "act"), f);
    }
}
