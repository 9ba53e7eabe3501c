//! Toy-scale supervised training and the gradient-check harness.

mod adam;
mod loss;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use adam::{clip_grad_norm, Adam};
pub use loss::{loss, loss_and_grad, LossWeights};

use crate::attention::logit;
use crate::dsp::{stft, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::kv::KvConfig;
use crate::model::{Model, ModelConfig, Recording, Variant};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::gradcheck::{check_params, GradCheckOptions, GradCheckReport};
use crate::nn::{Mode, Params};
use crate::scene::{read_scene_tree, GeneratedScene, SceneSignals};

/// One training pair in the STFT domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub name: String,
    pub mic: ComplexSpectrogram,
    pub reference: ComplexSpectrogram,
    pub target: ComplexSpectrogram,
}

impl Example {
    pub fn from_signals(name: impl Into<String>, s: &SceneSignals) -> Result<Self> {
        Ok(Self {
            name: name.into(),
            mic: stft(&s.mic)?,
            reference: stft(&s.reference)?,
            target: stft(&s.near_target)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn from_generated(scenes: &[GeneratedScene]) -> Result<Self> {
        let examples = scenes
            .iter()
            .enumerate()
            .map(|(i, s)| Example::from_signals(format!("scene_{i:03}"), &s.signals))
            .collect::<Result<_>>()?;
        Ok(Self { examples })
    }

    /// Reads every scene directory under `root`.
    pub fn load_dir(root: impl AsRef<Path>) -> Result<Self> {
        let examples = read_scene_tree(root)?
            .iter()
            .map(|s| {
                let name = s.dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
                Example::from_signals(name, &s.signals)
            })
            .collect::<Result<_>>()?;
        Ok(Self { examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub weights: LossWeights,
    pub clip_norm: f64,
    /// Written after every epoch, with optimizer state for resuming.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-3,
            seed: 0,
            weights: LossWeights::default(),
            clip_norm: 5.0,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 7] = [
        "epochs",
        "batch_size",
        "learning_rate",
        "seed",
        "complex_weight",
        "magnitude_weight",
        "clip_norm",
    ];

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let mut c = Self::default();
        if let Some(v) = kv.parse_key("epochs")? {
            c.epochs = v;
        }
        if let Some(v) = kv.parse_key("batch_size")? {
            c.batch_size = v;
        }
        if let Some(v) = kv.parse_key("learning_rate")? {
            c.learning_rate = v;
        }
        if let Some(v) = kv.parse_key("seed")? {
            c.seed = v;
        }
        if let Some(v) = kv.parse_key("complex_weight")? {
            c.weights.complex = v;
        }
        if let Some(v) = kv.parse_key("magnitude_weight")? {
            c.weights.magnitude = v;
        }
        if let Some(v) = kv.parse_key("clip_norm")? {
            c.clip_norm = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.epochs > 0
            && self.batch_size > 0
            && self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.weights.complex >= 0.0
            && self.weights.magnitude >= 0.0
            && self.weights.complex + self.weights.magnitude > 0.0
            && self.clip_norm > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training configuration {self:?}")))
        }
    }
}

/// Mean span of one attention group; fixed-span groups report `T_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanStat {
    pub module: String,
    pub group: usize,
    pub mean: f64,
    pub dynamic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub variant: Variant,
    /// Dataset loss before the first update.
    pub initial_loss: f64,
    /// Mean batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
    /// Dataset loss after the last update, measured like `initial_loss`.
    pub final_loss: f64,
    /// Per-epoch mean span per module (averaged over groups).
    pub epoch_spans: Vec<Vec<(String, f64)>>,
    pub spans: Vec<SpanStat>,
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    /// `epoch,loss,<module>...`; epoch 0 is the initial loss.
    pub fn to_csv(&self) -> String {
        let modules: Vec<&str> = self
            .epoch_spans
            .first()
            .map(|s| s.iter().map(|(m, _)| m.as_str()).collect())
            .unwrap_or_default();
        let mut s = String::from("epoch,loss");
        for m in &modules {
            write!(s, ",span_{m}").expect("string write");
        }
        s.push('\n');
        writeln!(s, "0,{}{}", self.initial_loss, ",".repeat(modules.len())).expect("string write");
        for (e, l) in self.epoch_losses.iter().enumerate() {
            write!(s, "{},{l}", e + 1).expect("string write");
            if let Some(spans) = self.epoch_spans.get(e) {
                for (_, z) in spans {
                    write!(s, ",{z}").expect("string write");
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn spans_csv(&self) -> String {
        let mut s = String::from("module,group,mean_span,dynamic\n");
        for st in &self.spans {
            writeln!(s, "{},{},{},{}", st.module, st.group, st.mean, st.dynamic).expect("string write");
        }
        s
    }
}

fn batches(n: usize, size: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

fn epoch_order(count: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..count).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    order.shuffle(&mut rng);
    order
}

struct BatchResult {
    loss: f64,
    spans: Vec<(String, usize, Option<f64>)>,
}

fn nan_error(model: &Model, rec: &Recording) -> Error {
    let name = model
        .first_non_finite_param()
        .or_else(|| rec.first_non_finite().map(str::to_string))
        .unwrap_or_else(|| "loss".to_string());
    Error::NanLoss(format!("first non-finite tensor: {name}"))
}

/// Forward one batch; with `update` also backpropagates, clips and steps.
fn run_batch(
    model: &mut Model,
    data: &Dataset,
    idx: &[usize],
    cfg: &TrainConfig,
    adam: Option<&mut Adam>,
) -> Result<BatchResult> {
    let mics: Vec<ComplexSpectrogram> = idx.iter().map(|&i| data.examples[i].mic.clone()).collect();
    let refs: Vec<ComplexSpectrogram> = idx.iter().map(|&i| data.examples[i].reference.clone()).collect();
    let mut rec = Recording::new();
    let est = model.forward_batch(&mics, &refs, Mode::Train, &mut rec)?;
    let b = idx.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(idx.len());
    for (e, &i) in est.iter().zip(idx) {
        let (l, g) = loss_and_grad(e, &data.examples[i].target, cfg.weights)?;
        total += l;
        grads.push(g / b);
    }
    let loss = total / b;
    if !loss.is_finite() {
        return Err(nan_error(model, &rec));
    }
    let spans = rec.mean_spans();
    if let Some(adam) = adam {
        model.zero_grad();
        model.backward(&mut rec, &grads)?;
        clip_grad_norm(model, cfg.clip_norm);
        adam.step(model);
        if let Some(name) = model.first_non_finite_param() {
            return Err(Error::NanLoss(format!("first non-finite tensor: {name}")));
        }
    }
    Ok(BatchResult { loss, spans })
}

fn summarize(model: &Model, acc: &[Vec<(String, usize, Option<f64>)>]) -> Vec<SpanStat> {
    let t_w = model.config.max_span as f64;
    let Some(first) = acc.first() else {
        return Vec::new();
    };
    first
        .iter()
        .enumerate()
        .map(|(k, (module, group, z))| {
            let dynamic = z.is_some();
            let mean = if dynamic {
                acc.iter().filter_map(|s| s[k].2).sum::<f64>() / acc.len() as f64
            } else {
                t_w
            };
            SpanStat {
                module: module.clone(),
                group: *group,
                mean,
                dynamic,
            }
        })
        .collect()
}

fn per_module(stats: &[SpanStat]) -> Vec<(String, f64)> {
    let mut out: Vec<(String, f64, usize)> = Vec::new();
    for s in stats {
        match out.last_mut() {
            Some((m, sum, n)) if *m == s.module => {
                *sum += s.mean;
                *n += 1;
            }
            _ => out.push((s.module.clone(), s.mean, 1)),
        }
    }
    out.into_iter().map(|(m, s, n)| (m, s / n as f64)).collect()
}

/// Mean batch loss over the dataset with batch statistics and no update.
pub fn dataset_loss(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    Ok(evaluate(model, data, cfg)?.0)
}

fn evaluate(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<(f64, Vec<SpanStat>)> {
    let bs = batches(data.len(), cfg.batch_size, cfg.seed);
    let mut total = 0.0;
    let mut spans = Vec::new();
    for b in &bs {
        let r = run_batch(model, data, b, cfg, None)?;
        total += r.loss;
        spans.push(r.spans);
    }
    Ok((total / bs.len() as f64, summarize(model, &spans)))
}

/// Progress saved with every epoch checkpoint.
#[derive(Debug, Clone, PartialEq)]
struct Progress {
    epochs_done: usize,
    initial_loss: f64,
    losses: Vec<f64>,
    epoch_spans: Vec<Vec<(String, f64)>>,
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split_whitespace()
        .map(|x| x.parse().map_err(|_| Error::Checkpoint(format!("bad number `{x}`"))))
        .collect()
}

fn save_progress(model: &Model, adam: &Adam, p: &Progress, cfg: &TrainConfig, path: &Path) -> Result<()> {
    let mut ckpt = model.to_checkpoint();
    ckpt.meta.set("epochs_done", p.epochs_done);
    ckpt.meta.set("initial_loss", p.initial_loss);
    ckpt.meta.set("losses", fmt_list(&p.losses));
    ckpt.meta.set("seed", cfg.seed);
    for (e, spans) in p.epoch_spans.iter().enumerate() {
        let text: Vec<String> = spans.iter().map(|(m, z)| format!("{m}:{z}")).collect();
        ckpt.meta.set(format!("spans.{e}"), text.join(" "));
    }
    adam.save_into(model, &mut ckpt);
    ckpt.save(path)
}

fn load_progress(ckpt: &Checkpoint) -> Result<Progress> {
    let meta = &ckpt.meta;
    let epochs_done = meta.parse_key("epochs_done")?.unwrap_or(0);
    let losses = parse_list(meta.get("losses").unwrap_or(""))?;
    let mut epoch_spans = Vec::new();
    for e in 0..epochs_done {
        let text = meta.get(&format!("spans.{e}")).unwrap_or("");
        let spans = text
            .split_whitespace()
            .map(|kv| {
                let (m, z) = kv
                    .rsplit_once(':')
                    .ok_or_else(|| Error::Checkpoint(format!("bad span entry `{kv}`")))?;
                let z = z.parse().map_err(|_| Error::Checkpoint(format!("bad span entry `{kv}`")))?;
                Ok((m.to_string(), z))
            })
            .collect::<Result<Vec<_>>>()?;
        epoch_spans.push(spans);
    }
    if losses.len() != epochs_done {
        return Err(Error::Checkpoint("loss history does not match epochs_done".into()));
    }
    Ok(Progress {
        epochs_done,
        initial_loss: meta.parse_key("initial_loss")?.unwrap_or(f64::NAN),
        losses,
        epoch_spans,
    })
}

/// Trains `model` in place from scratch.
pub fn train(model: &mut Model, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    train_from(model, data, cfg, None, Adam::new(cfg.learning_rate))
}

/// Continues a run from a checkpoint written by [`train`]; returns the model
/// and the report of the whole run.
pub fn resume(path: impl AsRef<Path>, data: &Dataset, cfg: &TrainConfig) -> Result<(Model, TrainReport)> {
    let ckpt = Checkpoint::load(path)?;
    let mut model = Model::from_checkpoint(&ckpt)?;
    let progress = load_progress(&ckpt)?;
    let adam = Adam::load_from(cfg.learning_rate, &model, &ckpt)?;
    let report = train_from(&mut model, data, cfg, Some(progress), adam)?;
    Ok((model, report))
}

fn train_from(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    progress: Option<Progress>,
    mut adam: Adam,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut p = match progress {
        Some(p) => p,
        None => Progress {
            epochs_done: 0,
            initial_loss: dataset_loss(model, data, cfg)?,
            losses: Vec::new(),
            epoch_spans: Vec::new(),
        },
    };
    let bs = batches(data.len(), cfg.batch_size, cfg.seed);
    for epoch in p.epochs_done..cfg.epochs {
        let mut total = 0.0;
        let mut spans = Vec::new();
        for b in epoch_order(bs.len(), cfg.seed, epoch) {
            let r = run_batch(model, data, &bs[b], cfg, Some(&mut adam))?;
            total += r.loss;
            spans.push(r.spans);
        }
        p.losses.push(total / bs.len() as f64);
        p.epoch_spans.push(per_module(&summarize(model, &spans)));
        p.epochs_done = epoch + 1;
        if let Some(path) = &cfg.checkpoint {
            save_progress(model, &adam, &p, cfg, path)?;
        }
    }
    let (final_loss, spans) = evaluate(model, data, cfg)?;
    Ok(TrainReport {
        variant: model.config.variant,
        initial_loss: p.initial_loss,
        epoch_losses: p.losses,
        final_loss,
        epoch_spans: p.epoch_spans,
        spans,
        checkpoint: cfg.checkpoint.clone(),
    })
}

/// Places span heads where some keys fall on the mask ramp: small random
/// `v` and an initial span of 35% of `T_w`.
pub fn spread_spans(model: &mut Model, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    model.visit_mut("", &mut |name, p| {
        if !name.contains("span") {
            return;
        }
        if name.ends_with(".b") {
            p.value[0] = logit(0.35);
        } else {
            for x in &mut p.value {
                let n: f64 = StandardNormal.sample(&mut rng);
                *x = 0.05 * n;
            }
        }
    });
}

/// Gradient check of the full training loss on a tiny model (`C = 4`,
/// `F' = 10`, `T = 12`, batch of 2) with random spectra.
pub fn gradcheck(variant: Variant, seed: u64) -> Result<GradCheckReport> {
    gradcheck_with(ModelConfig::tiny(variant), seed, &GradCheckOptions::default())
}

pub fn gradcheck_with(config: ModelConfig, seed: u64, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut model = Model::build(config, seed)?;
    spread_spans(&mut model, seed ^ 0xda5);
    let bins = model.config.freq_bins;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9c);
    let mut spec = || {
        let data = ndarray::Array3::from_shape_simple_fn((2, 12, bins), || StandardNormal.sample(&mut rng));
        ComplexSpectrogram::from_array(data)
    };
    let mics = vec![spec()?, spec()?];
    let refs = vec![spec()?, spec()?];
    let targets = vec![spec()?, spec()?];
    let w = LossWeights::default();
    let batch_loss = |m: &Model, rec: &mut Recording| -> Result<(f64, Vec<ndarray::Array3<f64>>)> {
        let est = m.forward_batch(&mics, &refs, Mode::Train, rec)?;
        let mut total = 0.0;
        let mut grads = Vec::new();
        for (e, t) in est.iter().zip(&targets) {
            let (l, g) = loss_and_grad(e, t, w)?;
            total += l / 2.0;
            grads.push(g / 2.0);
        }
        Ok((total, grads))
    };
    model.zero_grad();
    let mut rec = Recording::new();
    let (_, grads) = batch_loss(&model, &mut rec)?;
    model.backward(&mut rec, &grads)?;
    let mut eval = |m: &Model| {
        let mut rec = Recording::new();
        let (l, _) = batch_loss(m, &mut rec)?;
        Ok((l, rec.kink_signature()))
    };
    check_params(&mut model, &mut eval, opts, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x77))
}
