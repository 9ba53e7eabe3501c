//! The enhancement network: two frequency encoders, a merge (channel
//! concatenation or time alignment), `N` repeated TCM + GTSA modules and a
//! decoder that predicts a bounded complex ratio mask for the microphone
//! spectrum.

mod config;
mod enhance;
mod mask;
mod stream;

use std::hash::Hasher;
use std::path::Path;

use ndarray::{s, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{ModelConfig, Variant};
pub use enhance::{enhance, enhance_file};
pub use stream::StreamState;

use crate::attention::{AttentionTrace, Gtsa, GtsaCache, TaCache, TaMerge, Window};
use crate::dsp::{ComplexSpectrogram, HOP, WINDOW_LEN, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::nn::checkpoint::Checkpoint;
use crate::nn::tensor::{concat_channels, split_channels};
use crate::nn::{join, num_params, BlockCache, Conv1x1, ConvBlock, Feature, Mode, Param, Params, Tcm, TcmCache};

/// Look-ahead of the pipeline in milliseconds: one analysis window plus one
/// hop. The network itself adds none.
pub const ALGORITHMIC_LATENCY_MS: f64 = (WINDOW_LEN + HOP) as f64 * 1000.0 / SAMPLE_RATE as f64;

#[derive(Debug, Clone, PartialEq)]
pub enum Merge {
    Concat(ConvBlock),
    Align(TaMerge),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedModule {
    pub tcm: Tcm,
    pub gtsa: Gtsa,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub mic_encoder: Vec<ConvBlock>,
    pub ref_encoder: Vec<ConvBlock>,
    pub merge: Merge,
    pub modules: Vec<RepeatedModule>,
    pub decoder: Vec<ConvBlock>,
    pub head: Conv1x1,
}

#[derive(Debug, Clone)]
enum MergeCache {
    Concat(BlockCache),
    Align(TaCache),
}

#[derive(Debug, Clone)]
struct Tape {
    mic: Vec<Array3<f64>>,
    mic_encoder: Vec<BlockCache>,
    ref_encoder: Vec<BlockCache>,
    merge: MergeCache,
    modules: Vec<(Vec<TcmCache>, GtsaCache)>,
    decoder: Vec<BlockCache>,
    head_in: Vec<Feature>,
    raw_mask: Vec<Feature>,
    first_non_finite: Option<String>,
}

/// Holds what a recorded forward pass needs for the matching backward pass.
#[derive(Debug, Clone, Default)]
pub struct Recording {
    tape: Option<Tape>,
    ramp: f64,
    groups: usize,
}

impl Recording {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.tape.is_none()
    }

    /// Hash of every piecewise-linear branch taken in the recorded pass
    /// (PReLU signs, effective spans and mask-ramp membership).
    pub fn kink_signature(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        if let Some(t) = &self.tape {
            for c in t.mic_encoder.iter().chain(&t.ref_encoder).chain(&t.decoder) {
                c.kinks(&mut h);
            }
            match &t.merge {
                MergeCache::Concat(c) => c.kinks(&mut h),
                MergeCache::Align(c) => c.kinks(self.ramp, &mut h),
            }
            for (tcm, gtsa) in &t.modules {
                for c in tcm {
                    c.kinks(&mut h);
                }
                gtsa.kinks(self.ramp, &mut h);
            }
        }
        h.finish()
    }

    /// Name of the first intermediate tensor that contained NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tape.as_ref()?.first_non_finite.as_deref()
    }

    /// Mean span per attention module and group over the recorded batch;
    /// `None` for fixed-span modules.
    pub fn mean_spans(&self) -> Vec<(String, usize, Option<f64>)> {
        let Some(t) = &self.tape else {
            return Vec::new();
        };
        let batch = t.mic.len();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len().max(1) as f64;
        let mut out = Vec::new();
        if let MergeCache::Align(c) = &t.merge {
            let zs: Option<Vec<f64>> = (0..batch).map(|i| c.spans(i)).collect::<Option<Vec<_>>>().map(|v| v.concat());
            out.push(("ta".to_string(), 0, zs.map(mean)));
        }
        for (m, (_, c)) in t.modules.iter().enumerate() {
            let per: Option<Vec<Vec<Vec<f64>>>> = (0..batch).map(|i| c.spans(i)).collect();
            for g in 0..self.groups {
                let z = per
                    .as_ref()
                    .map(|p| mean(p.iter().flat_map(|s| s[g].iter().copied()).collect()));
                out.push((format!("gtsa{m}"), g, z));
            }
        }
        out
    }
}

fn non_finite(xs: &[Feature]) -> bool {
    xs.iter().any(|x| x.iter().any(|v| !v.is_finite()))
}

impl Model {
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = config.channels;
        let down = config.downsampling_blocks();
        let depth = config::ENCODER_DEPTH;
        let stride = |i: usize| if i >= depth - down { 2 } else { 1 };
        let encoder = |rng: &mut ChaCha8Rng| -> Vec<ConvBlock> {
            (0..depth)
                .map(|i| ConvBlock::freq(if i == 0 { 2 } else { c }, c, stride(i), rng))
                .collect()
        };
        let mic_encoder = encoder(&mut rng);
        let ref_encoder = encoder(&mut rng);
        let window = Window {
            max_span: config.max_span,
            ramp: config.ramp,
        };
        let flat = config.attention_width();
        let merge = if config.variant.has_ta() {
            Merge::Align(TaMerge::new(c, flat, window, config.variant.ta_dynamic(), &mut rng))
        } else {
            Merge::Concat(ConvBlock::pointwise(2 * c, c, &mut rng))
        };
        let modules = (0..config.repeated_modules)
            .map(|i| {
                Ok(RepeatedModule {
                    tcm: Tcm::new(
                        c,
                        c * config.tcm_expansion,
                        config.tcm_kernel,
                        1 << (i % 4),
                        &mut rng,
                    ),
                    gtsa: Gtsa::new(
                        c,
                        flat,
                        config.gtsa_groups,
                        window,
                        config.variant.gtsa_dynamic(),
                        &mut rng,
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder = (0..depth)
            .map(|i| {
                if i < down {
                    ConvBlock::freq_up(c, c, &mut rng)
                } else {
                    ConvBlock::freq(c, c, 1, &mut rng)
                }
            })
            .collect();
        let head = Conv1x1::new(c, 2, &mut rng);
        Ok(Self {
            config,
            mic_encoder,
            ref_encoder,
            merge,
            modules,
            decoder,
            head,
        })
    }

    /// Trainable parameter count.
    pub fn num_params(&self) -> usize {
        num_params(self)
    }

    /// `(name, shape, trainable)` for every tensor.
    pub fn manifest(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, p| out.push((n, p.shape.clone(), p.trainable)));
        out
    }

    pub fn ta(&self) -> Option<&TaMerge> {
        match &self.merge {
            Merge::Align(ta) => Some(ta),
            Merge::Concat(_) => None,
        }
    }

    pub fn ta_mut(&mut self) -> Option<&mut TaMerge> {
        match &mut self.merge {
            Merge::Align(ta) => Some(ta),
            Merge::Concat(_) => None,
        }
    }

    fn check_pair(&self, mic: &ComplexSpectrogram, reference: &ComplexSpectrogram) -> Result<()> {
        let f = self.config.freq_bins;
        if mic.bins() != f || reference.bins() != f {
            return Err(Error::Shape(format!(
                "model expects {f} bins, got {} (mic) and {} (reference)",
                mic.bins(),
                reference.bins()
            )));
        }
        if mic.frames() != reference.frames() {
            return Err(Error::Shape(format!(
                "mic has {} frames but reference has {}",
                mic.frames(),
                reference.frames()
            )));
        }
        if mic.frames() == 0 {
            return Err(Error::EmptySpectrogram);
        }
        if !mic.is_finite() || !reference.is_finite() {
            return Err(Error::NonFinite("input spectrogram".into()));
        }
        Ok(())
    }

    fn features(&self, spec: &ComplexSpectrogram) -> Feature {
        spec.data
            .slice(s![.., .., ..self.config.usable_bins()])
            .to_owned()
    }

    fn run(
        &self,
        mics: &[ComplexSpectrogram],
        refs: &[ComplexSpectrogram],
        mode: Mode,
    ) -> Result<(Vec<ComplexSpectrogram>, Tape)> {
        if mics.is_empty() || mics.len() != refs.len() {
            return Err(Error::Shape("need equally many mic and reference spectrograms".into()));
        }
        for (m, r) in mics.iter().zip(refs) {
            self.check_pair(m, r)?;
        }
        let mut first: Option<String> = None;
        let mut note = |name: &str, xs: &[Feature]| {
            if first.is_none() && non_finite(xs) {
                first = Some(name.to_string());
            }
        };
        let encode = |blocks: &[ConvBlock], xs: Vec<Feature>, name: &str, note: &mut dyn FnMut(&str, &[Feature])| {
            let mut caches = Vec::with_capacity(blocks.len());
            let mut h = xs;
            for (i, b) in blocks.iter().enumerate() {
                let (y, c) = b.forward(&h, mode)?;
                note(&format!("{name}.{i}"), &y);
                caches.push(c);
                h = y;
            }
            Ok::<_, Error>((h, caches))
        };
        let mic_in: Vec<Feature> = mics.iter().map(|m| self.features(m)).collect();
        let ref_in: Vec<Feature> = refs.iter().map(|r| self.features(r)).collect();
        let (mic_enc, mic_caches) = encode(&self.mic_encoder, mic_in, "mic_encoder", &mut note)?;
        let (ref_enc, ref_caches) = encode(&self.ref_encoder, ref_in, "ref_encoder", &mut note)?;

        let (mut h, merge_cache) = match &self.merge {
            Merge::Concat(block) => {
                let cat: Vec<Feature> = mic_enc
                    .iter()
                    .zip(&ref_enc)
                    .map(|(m, r)| concat_channels(m, r))
                    .collect();
                let (y, c) = block.forward(&cat, mode)?;
                (y, MergeCache::Concat(c))
            }
            Merge::Align(ta) => {
                let (y, c) = ta.forward(&mic_enc, &ref_enc, mode)?;
                (y, MergeCache::Align(c))
            }
        };
        note("merge", &h);

        let mut module_caches = Vec::with_capacity(self.modules.len());
        for (i, m) in self.modules.iter().enumerate() {
            let mut us = Vec::with_capacity(h.len());
            let mut tcm_caches = Vec::with_capacity(h.len());
            for x in &h {
                let (u, c) = m.tcm.forward(x)?;
                us.push(u);
                tcm_caches.push(c);
            }
            note(&format!("modules.{i}.tcm"), &us);
            let (y, gc) = m.gtsa.forward(&us, &h, mode)?;
            note(&format!("modules.{i}.gtsa"), &y);
            module_caches.push((tcm_caches, gc));
            h = y;
        }

        let (head_in, dec_caches) = encode(&self.decoder, h, "decoder", &mut note)?;
        let raw_mask = head_in
            .iter()
            .map(|x| self.head.forward(x))
            .collect::<Result<Vec<_>>>()?;
        note("head", &raw_mask);
        let est: Vec<ComplexSpectrogram> = raw_mask
            .iter()
            .zip(mics)
            .map(|(raw, mic)| ComplexSpectrogram::from_array(mask::apply(raw, mic.data.view())))
            .collect::<Result<_>>()?;
        let est_data: Vec<Feature> = est.iter().map(|e| e.data.clone()).collect();
        note("estimate", &est_data);
        let first_non_finite = first;
        Ok((
            est,
            Tape {
                mic: mics.iter().map(|m| m.data.clone()).collect(),
                mic_encoder: mic_caches,
                ref_encoder: ref_caches,
                merge: merge_cache,
                modules: module_caches,
                decoder: dec_caches,
                head_in,
                raw_mask,
                first_non_finite,
            },
        ))
    }

    /// Offline inference. Frame `t` of the estimate depends only on input
    /// frames `0..=t`.
    pub fn forward(&self, mic: &ComplexSpectrogram, reference: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
        let (mut est, _) = self.run(std::slice::from_ref(mic), std::slice::from_ref(reference), Mode::Eval)?;
        Ok(est.remove(0))
    }

    /// Offline inference that also records spans and the attention rows of
    /// `frames`.
    pub fn forward_traced(
        &self,
        mic: &ComplexSpectrogram,
        reference: &ComplexSpectrogram,
        frames: &[usize],
    ) -> Result<(ComplexSpectrogram, AttentionTrace)> {
        if let Some(&bad) = frames.iter().find(|&&t| t >= mic.frames()) {
            return Err(Error::FrameOutOfRange {
                frame: bad,
                frames: mic.frames(),
            });
        }
        let (mut est, tape) = self.run(std::slice::from_ref(mic), std::slice::from_ref(reference), Mode::Eval)?;
        let mut modules = Vec::new();
        if let (Merge::Align(ta), MergeCache::Align(c)) = (&self.merge, &tape.merge) {
            modules.push(ta.trace(c, 0, frames));
        }
        for (i, (m, (_, c))) in self.modules.iter().zip(&tape.modules).enumerate() {
            modules.push(m.gtsa.trace(&format!("gtsa{i}"), c, 0, frames));
        }
        Ok((
            est.remove(0),
            AttentionTrace {
                frames: mic.frames(),
                modules,
            },
        ))
    }

    /// Batch forward that records into `rec` for a later [`Model::backward`].
    pub fn forward_batch(
        &self,
        mics: &[ComplexSpectrogram],
        refs: &[ComplexSpectrogram],
        mode: Mode,
        rec: &mut Recording,
    ) -> Result<Vec<ComplexSpectrogram>> {
        let (est, tape) = self.run(mics, refs, mode)?;
        rec.tape = Some(tape);
        rec.ramp = self.config.ramp;
        rec.groups = self.config.gtsa_groups;
        Ok(est)
    }

    /// Accumulates parameter gradients for the recorded pass; `d_est` holds
    /// `dL/d(estimate)` per sample. Consumes the recording. In training mode
    /// normalization running statistics are updated here.
    pub fn backward(&mut self, rec: &mut Recording, d_est: &[Array3<f64>]) -> Result<()> {
        let tape = rec.tape.take().ok_or(Error::NoForward)?;
        if d_est.len() != tape.mic.len() {
            return Err(Error::Shape(format!(
                "{} gradients for a batch of {}",
                d_est.len(),
                tape.mic.len()
            )));
        }
        let mut dh: Vec<Feature> = Vec::with_capacity(d_est.len());
        for i in 0..d_est.len() {
            if d_est[i].dim() != tape.mic[i].dim() {
                return Err(Error::Shape("gradient shape differs from the estimate".into()));
            }
            let d_raw = mask::backward(&tape.raw_mask[i], tape.mic[i].view(), &d_est[i]);
            dh.push(self.head.backward(&tape.head_in[i], &d_raw));
        }
        for (block, cache) in self.decoder.iter_mut().zip(tape.decoder).rev() {
            dh = block.backward(cache, dh);
        }
        for (m, (tcm_caches, gc)) in self.modules.iter_mut().zip(tape.modules).rev() {
            let (du, d_span) = m.gtsa.backward(gc, dh);
            dh = tcm_caches
                .into_iter()
                .zip(&du)
                .zip(d_span)
                .map(|((c, du), ds)| m.tcm.backward(c, du) + ds)
                .collect();
        }
        let c = self.config.channels;
        let (d_mic, d_ref) = match (&mut self.merge, tape.merge) {
            (Merge::Concat(block), MergeCache::Concat(cache)) => {
                let d = block.backward(cache, dh);
                d.iter().map(|x| split_channels(x, c)).unzip()
            }
            (Merge::Align(ta), MergeCache::Align(cache)) => ta.backward(cache, dh),
            _ => unreachable!("tape recorded by this model"),
        };
        let mut d = d_mic;
        for (block, cache) in self.mic_encoder.iter_mut().zip(tape.mic_encoder).rev() {
            d = block.backward(cache, d);
        }
        let mut d = d_ref;
        for (block, cache) in self.ref_encoder.iter_mut().zip(tape.ref_encoder).rev() {
            d = block.backward(cache, d);
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.zero_grad());
    }

    /// Name of the first parameter holding NaN or infinity.
    pub fn first_non_finite_param(&self) -> Option<String> {
        let mut found = None;
        self.visit("", &mut |n, p| {
            if found.is_none() && p.value.iter().any(|v| !v.is_finite()) {
                found = Some(n);
            }
        });
        found
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut meta = KvConfig::default();
        self.config.write_kv(&mut meta);
        Checkpoint::from_params(self, meta)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ModelConfig::from_kv(&ckpt.meta)?;
        let mut model = Self::build(config, 0)?;
        ckpt.load_into(&mut model)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    /// Per-frame multiply-accumulates of everything except attention
    /// products and span heads, as `(component, MACs)`.
    pub fn conv_macs_per_frame(&self) -> Vec<(String, u64)> {
        let u = self.config.usable_bins();
        let f_enc = self.config.encoded_bins();
        let mut out = Vec::new();
        let chain = |blocks: &[ConvBlock], mut f: usize| {
            let mut total = 0;
            for b in blocks {
                total += b.macs_per_frame(f);
                f = b.out_len(f);
            }
            total
        };
        out.push(("mic_encoder".into(), chain(&self.mic_encoder, u)));
        out.push(("ref_encoder".into(), chain(&self.ref_encoder, u)));
        out.push((
            "merge".into(),
            match &self.merge {
                Merge::Concat(b) => b.macs_per_frame(f_enc),
                Merge::Align(ta) => ta.macs_per_frame(f_enc),
            },
        ));
        for (i, m) in self.modules.iter().enumerate() {
            out.push((format!("modules.{i}.tcm"), m.tcm.macs_per_frame(f_enc)));
            out.push((format!("modules.{i}.gtsa_proj"), m.gtsa.macs_per_frame(f_enc)));
        }
        out.push(("decoder".into(), chain(&self.decoder, f_enc)));
        out.push(("head".into(), self.head.macs_per_frame(u)));
        out
    }
}

impl Params for Merge {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        match self {
            Merge::Concat(b) => b.visit(prefix, f),
            Merge::Align(ta) => ta.visit(prefix, f),
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        match self {
            Merge::Concat(b) => b.visit_mut(prefix, f),
            Merge::Align(ta) => ta.visit_mut(prefix, f),
        }
    }
}

impl Params for Model {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, b) in self.mic_encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("mic_encoder.{i}")), f);
        }
        for (i, b) in self.ref_encoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("ref_encoder.{i}")), f);
        }
        self.merge.visit(&join(prefix, "merge"), f);
        for (i, m) in self.modules.iter().enumerate() {
            m.tcm.visit(&join(prefix, &format!("modules.{i}.tcm")), f);
            m.gtsa.visit(&join(prefix, &format!("modules.{i}.gtsa")), f);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, b) in self.mic_encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("mic_encoder.{i}")), f);
        }
        for (i, b) in self.ref_encoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("ref_encoder.{i}")), f);
        }
        self.merge.visit_mut(&join(prefix, "merge"), f);
        for (i, m) in self.modules.iter_mut().enumerate() {
            m.tcm.visit_mut(&join(prefix, &format!("modules.{i}.tcm")), f);
            m.gtsa.visit_mut(&join(prefix, &format!("modules.{i}.gtsa")), f);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("decoder.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}
