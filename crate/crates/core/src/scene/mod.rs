//! Synthetic echo/noise scenes with time-variant delay and echo path.
//!
//! The microphone signal is
//! `mic = h1 * s + h2(t) * f_nl(x(t - delay(t))) + n`, where the delay and
//! the echo impulse response switch instantaneously at schedule boundaries.
//! Near-end and echo contributions are gated per sample by the talk labels
//! (FST: echo only, NST: near-end only, DT: both).

mod config;
mod io;
mod rir;
pub mod source;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub use io::{labels_csv, parse_labels_csv, read_scene_dir, read_scene_tree, write_scene_dir, StoredScene};
pub use rir::{convolve, direct_path, synthetic_rir, MAX_RIR_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Fst,
    Nst,
    Dt,
}

impl Label {
    pub fn near_active(self) -> bool {
        matches!(self, Label::Nst | Label::Dt)
    }

    pub fn echo_active(self) -> bool {
        matches!(self, Label::Fst | Label::Dt)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Fst => "FST",
            Label::Nst => "NST",
            Label::Dt => "DT",
        })
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FST" => Ok(Label::Fst),
            "NST" => Ok(Label::Nst),
            "DT" => Ok(Label::Dt),
            other => Err(Error::Scene(format!("unknown label `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Nonlinearity {
    Identity,
    HardClip(f64),
    ScaledTanh(f64),
}

impl Default for Nonlinearity {
    fn default() -> Self {
        Nonlinearity::HardClip(0.8)
    }
}

impl Nonlinearity {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Nonlinearity::Identity => u,
            Nonlinearity::HardClip(theta) => u.clamp(-theta, theta),
            Nonlinearity::ScaledTanh(gamma) => (gamma * u).tanh() / gamma,
        }
    }
}

/// How an impulse response is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum RirSpec {
    Impulse,
    Synthetic { rt60_ms: f64 },
    Taps(Vec<f64>),
}

impl RirSpec {
    pub fn resolve(&self, seed: u64) -> Vec<f64> {
        match self {
            RirSpec::Impulse => vec![1.0],
            RirSpec::Synthetic { rt60_ms } => synthetic_rir(*rt60_ms, seed),
            RirSpec::Taps(t) => t.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: Label,
}

/// Declarative description of one mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// `(start_sample, delay_samples)`, sorted by start.
    pub delay_schedule: Vec<(usize, usize)>,
    pub rir_near: RirSpec,
    /// `(start_sample, impulse response)`, sorted by start.
    pub rir_echo_schedule: Vec<(usize, RirSpec)>,
    pub nonlinearity: Nonlinearity,
    pub snr_db: f64,
    pub ser_db: f64,
    pub segments: Vec<Segment>,
    /// Scene length used by batch synthesis.
    pub length: usize,
    /// Free-form tag carried into reports (e.g. `variant-delay-only`).
    pub scenario: String,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            delay_schedule: vec![(0, 1600)],
            rir_near: RirSpec::Synthetic { rt60_ms: 200.0 },
            rir_echo_schedule: vec![(0, RirSpec::Synthetic { rt60_ms: 200.0 })],
            nonlinearity: Nonlinearity::default(),
            snr_db: 20.0,
            ser_db: 0.0,
            segments: Vec::new(),
            length: 4 * 16_000,
            scenario: Scenario::TimeInvariant.to_string(),
        }
    }
}

/// The four time-variance conditions used for per-scenario reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scenario {
    TimeInvariant,
    VariantDelay,
    VariantRir,
    VariantDelayAndRir,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [
        Scenario::TimeInvariant,
        Scenario::VariantDelay,
        Scenario::VariantRir,
        Scenario::VariantDelayAndRir,
    ];

    /// Preset spec: delay jumps from 100 ms to 300 ms and/or the echo RIR
    /// changes from RT60 200 ms to 350 ms halfway through.
    pub fn spec(self, length: usize) -> SceneSpec {
        let half = length / 2;
        let variant_delay = matches!(self, Scenario::VariantDelay | Scenario::VariantDelayAndRir);
        let variant_rir = matches!(self, Scenario::VariantRir | Scenario::VariantDelayAndRir);
        let mut spec = SceneSpec {
            length,
            scenario: self.to_string(),
            ..SceneSpec::default()
        };
        if variant_delay {
            spec.delay_schedule = vec![(0, 1600), (half, 4800)];
        }
        if variant_rir {
            spec.rir_echo_schedule = vec![
                (0, RirSpec::Synthetic { rt60_ms: 200.0 }),
                (half, RirSpec::Synthetic { rt60_ms: 350.0 }),
            ];
        }
        spec
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::TimeInvariant => "time-invariant",
            Scenario::VariantDelay => "variant-delay-only",
            Scenario::VariantRir => "variant-rir-only",
            Scenario::VariantDelayAndRir => "variant-delay-and-rir",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.to_string() == s.trim())
            .ok_or_else(|| Error::Scene(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSignals {
    pub mic: Waveform,
    pub reference: Waveform,
    pub near_target: Waveform,
    pub labels: Vec<Label>,
}

impl SceneSignals {
    /// Contiguous label runs as `(start, end, label)`.
    pub fn label_runs(&self) -> Vec<Segment> {
        label_runs(&self.labels)
    }
}

pub fn label_runs(labels: &[Label]) -> Vec<Segment> {
    let mut runs: Vec<Segment> = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        match runs.last_mut() {
            Some(seg) if seg.label == l => seg.end = i + 1,
            _ => runs.push(Segment {
                start: i,
                end: i + 1,
                label: l,
            }),
        }
    }
    runs
}

/// Echo and noise gains applied when mixing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixGains {
    pub echo: f64,
    pub noise: f64,
}

impl SceneSpec {
    pub fn validate(&self, len: usize) -> Result<()> {
        check_sorted("delay schedule", self.delay_schedule.iter().map(|d| d.0), len)?;
        check_sorted(
            "echo RIR schedule",
            self.rir_echo_schedule.iter().map(|r| r.0),
            len,
        )?;
        let mut segs = self.segments.clone();
        segs.sort_by_key(|s| s.start);
        for w in segs.windows(2) {
            if w[1].start < w[0].end {
                return Err(Error::Scene(format!(
                    "segments [{}, {}) and [{}, {}) overlap",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        for s in &segs {
            if s.start >= s.end || s.end > len {
                return Err(Error::Scene(format!(
                    "segment [{}, {}) is empty or beyond signal length {len}",
                    s.start, s.end
                )));
            }
        }
        let too_long = |r: &RirSpec| matches!(r, RirSpec::Taps(t) if t.len() > MAX_RIR_LEN || t.is_empty());
        if too_long(&self.rir_near) || self.rir_echo_schedule.iter().any(|(_, r)| too_long(r)) {
            return Err(Error::Scene(format!(
                "impulse responses must have 1..={MAX_RIR_LEN} taps"
            )));
        }
        Ok(())
    }

    /// Per-sample labels; samples not covered by a segment are double-talk.
    pub fn labels(&self, len: usize) -> Vec<Label> {
        let mut labels = vec![Label::Dt; len];
        for s in &self.segments {
            labels[s.start..s.end.min(len)].fill(s.label);
        }
        labels
    }
}

fn check_sorted(what: &str, starts: impl Iterator<Item = usize>, len: usize) -> Result<()> {
    let mut prev: Option<usize> = None;
    for s in starts {
        if s >= len {
            return Err(Error::Scene(format!(
                "{what} boundary {s} is beyond signal length {len}"
            )));
        }
        if prev.is_some_and(|p| s <= p) {
            return Err(Error::Scene(format!("{what} is not sorted by start")));
        }
        prev = Some(s);
    }
    Ok(())
}

/// Index of the schedule entry active at sample `t`; the first entry also
/// covers samples before its start.
fn active<T>(schedule: &[(usize, T)], t: usize) -> usize {
    schedule.partition_point(|(s, _)| *s <= t).saturating_sub(1)
}

struct Components {
    near_ungated: Vec<f64>,
    near: Vec<f64>,
    target: Vec<f64>,
    echo: Vec<f64>,
    labels: Vec<Label>,
}

fn components(
    spec: &SceneSpec,
    s: &Waveform,
    x: &Waveform,
    seed: u64,
) -> Result<Components> {
    let len = s.len();
    if x.len() != len {
        return Err(Error::Scene(format!(
            "near-end ({len}) and reference ({}) lengths differ",
            x.len()
        )));
    }
    spec.validate(len)?;
    let labels = spec.labels(len);

    let h1 = spec.rir_near.resolve(seed);
    let near_full = convolve(&s.samples, &h1);
    let (d0, a0) = direct_path(&h1);
    let mut target = vec![0.0; len];
    for n in d0..len {
        target[n] = a0 * s.samples[n - d0];
    }

    // Delayed, distorted loudspeaker signal.
    let loud: Vec<f64> = (0..len)
        .map(|t| {
            let delay = if spec.delay_schedule.is_empty() {
                0
            } else {
                spec.delay_schedule[active(&spec.delay_schedule, t)].1
            };
            let v = if t >= delay { x.samples[t - delay] } else { 0.0 };
            spec.nonlinearity.apply(v)
        })
        .collect();

    let mut echo = vec![0.0; len];
    if spec.rir_echo_schedule.is_empty() {
        echo.copy_from_slice(&loud);
    } else {
        for (i, (start, rir)) in spec.rir_echo_schedule.iter().enumerate() {
            let h2 = rir.resolve(seed.wrapping_add(1 + i as u64));
            let lo = if i == 0 { 0 } else { *start };
            let hi = spec
                .rir_echo_schedule
                .get(i + 1)
                .map_or(len, |(next, _)| *next);
            for n in lo..hi {
                let kmax = h2.len().min(n + 1);
                let mut acc = 0.0;
                for (k, &hk) in h2[..kmax].iter().enumerate() {
                    acc += hk * loud[n - k];
                }
                echo[n] = acc;
            }
        }
    }

    let mut near = near_full.clone();
    for n in 0..len {
        if !labels[n].near_active() {
            near[n] = 0.0;
            target[n] = 0.0;
        }
        if !labels[n].echo_active() {
            echo[n] = 0.0;
        }
    }
    Ok(Components {
        near_ungated: near_full,
        near,
        target,
        echo,
        labels,
    })
}

fn mean_power(v: &[f64], mask: impl Fn(usize) -> bool) -> f64 {
    let (sum, count) = v
        .iter()
        .enumerate()
        .filter(|(i, _)| mask(*i))
        .fold((0.0, 0usize), |(s, c), (_, x)| (s + x * x, c + 1));
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn power_over(v: &[f64], labels: &[Label], pick: fn(Label) -> bool) -> f64 {
    if labels.iter().any(|&l| pick(l)) {
        mean_power(v, |i| pick(labels[i]))
    } else {
        mean_power(v, |_| true)
    }
}

fn gains_for(spec: &SceneSpec, c: &Components, n: &Waveform) -> MixGains {
    let p_near = power_over(&c.near_ungated, &c.labels, Label::near_active);
    let p_echo = power_over(&c.echo, &c.labels, Label::echo_active);
    let p_noise = power_over(&n.samples, &c.labels, Label::near_active);
    let gain = |p_other: f64, db: f64| {
        if p_near > 0.0 && p_other > 0.0 {
            (p_near / (p_other * 10f64.powf(db / 10.0))).sqrt()
        } else {
            1.0
        }
    };
    MixGains {
        echo: gain(p_echo, spec.ser_db),
        noise: gain(p_noise, spec.snr_db),
    }
}

fn check_noise(s: &Waveform, n: &Waveform) -> Result<()> {
    if n.len() != s.len() {
        return Err(Error::Scene(format!(
            "noise length {} differs from signal length {}",
            n.len(),
            s.len()
        )));
    }
    Ok(())
}

fn combine(c: Components, x: &Waveform, n: &Waveform, gains: MixGains) -> SceneSignals {
    let mic = (0..n.len())
        .map(|i| c.near[i] + gains.echo * c.echo[i] + gains.noise * n.samples[i])
        .collect();
    SceneSignals {
        mic: Waveform::new(mic),
        reference: x.clone(),
        near_target: Waveform::new(c.target),
        labels: c.labels,
    }
}

/// Gains meeting `ser_db` / `snr_db` relative to the near-end power.
///
/// Powers are measured over the samples where each component is active. A
/// gain is left at 1 when either side of its ratio has zero power.
pub fn mixing_gains(
    spec: &SceneSpec,
    s: &Waveform,
    x: &Waveform,
    n: &Waveform,
    seed: u64,
) -> Result<MixGains> {
    check_noise(s, n)?;
    let c = components(spec, s, x, seed)?;
    Ok(gains_for(spec, &c, n))
}

/// Mix with fixed gains. Linear in `(s, x, n)` when the nonlinearity is the
/// identity.
pub fn mix(
    spec: &SceneSpec,
    s: &Waveform,
    x: &Waveform,
    n: &Waveform,
    gains: MixGains,
    seed: u64,
) -> Result<SceneSignals> {
    check_noise(s, n)?;
    let c = components(spec, s, x, seed)?;
    Ok(combine(c, x, n, gains))
}

pub fn generate_scene(
    spec: &SceneSpec,
    s: &Waveform,
    x: &Waveform,
    n: &Waveform,
    seed: u64,
) -> Result<SceneSignals> {
    check_noise(s, n)?;
    let c = components(spec, s, x, seed)?;
    let gains = gains_for(spec, &c, n);
    Ok(combine(c, x, n, gains))
}

/// Talk condition of a whole generated scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SceneKind {
    Fst,
    Nst,
    Dt,
}

/// Split `count` scenes 1:1:5 (FST:NST:DT) by largest remainder; ties go to
/// the larger share, then to the earlier kind.
pub fn kind_counts(count: usize) -> [usize; 3] {
    const SHARES: [usize; 3] = [1, 1, 5];
    let total: usize = SHARES.iter().sum();
    let mut counts = SHARES.map(|s| count * s / total);
    let mut left = count - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let ra = count * SHARES[a] % total;
        let rb = count * SHARES[b] % total;
        rb.cmp(&ra).then(SHARES[b].cmp(&SHARES[a])).then(a.cmp(&b))
    });
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScene {
    pub kind: SceneKind,
    pub spec: SceneSpec,
    pub seed: u64,
    pub signals: SceneSignals,
}

/// Generate `count` scenes from a template with synthetic sources.
pub fn synth_batch(template: &SceneSpec, count: usize, seed: u64) -> Result<Vec<GeneratedScene>> {
    if count == 0 {
        return Err(Error::Scene("scene count must be at least 1".into()));
    }
    let [fst, nst, _] = kind_counts(count);
    let len = template.length;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = if i < fst {
                SceneKind::Fst
            } else if i < fst + nst {
                SceneKind::Nst
            } else {
                SceneKind::Dt
            };
            let scene_seed: u64 = rng.random();
            let mut spec = template.clone();
            spec.segments = match kind {
                SceneKind::Fst => vec![Segment { start: 0, end: len, label: Label::Fst }],
                SceneKind::Nst => vec![Segment { start: 0, end: len, label: Label::Nst }],
                SceneKind::Dt if template.segments.is_empty() => {
                    vec![Segment { start: 0, end: len, label: Label::Dt }]
                }
                SceneKind::Dt => template.segments.clone(),
            };
            let s = source::speech_like(len, scene_seed);
            let x = source::speech_like(len, scene_seed ^ 0x5eed_0001);
            let n = source::colored_noise(len, 0.05, scene_seed ^ 0x5eed_0002);
            let signals = generate_scene(&spec, &s, &x, &n, scene_seed)?;
            Ok(GeneratedScene {
                kind,
                spec,
                seed: scene_seed,
                signals,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn impulse_spec(delay: usize) -> SceneSpec {
        SceneSpec {
            delay_schedule: vec![(0, delay)],
            rir_near: RirSpec::Impulse,
            rir_echo_schedule: vec![(0, RirSpec::Impulse)],
            nonlinearity: Nonlinearity::Identity,
            ..SceneSpec::default()
        }
    }

    fn power(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64
    }

    #[test]
    fn degenerate_mixture_is_reference() {
        let len = 8000;
        let x = source::speech_like(len, 1);
        let zero = Waveform::zeros(len);
        let scene = generate_scene(&impulse_spec(0), &zero, &x, &zero, 0).unwrap();
        assert_eq!(scene.mic.samples, x.samples);
    }

    #[test]
    fn near_only_meets_snr() {
        let len = 32_000;
        let s = source::speech_like(len, 2);
        let n = source::colored_noise(len, 0.1, 3);
        let mut spec = impulse_spec(0);
        spec.snr_db = 7.5;
        let scene = generate_scene(&spec, &s, &Waveform::zeros(len), &n, 0).unwrap();
        let noise: Vec<f64> = scene
            .mic
            .samples
            .iter()
            .zip(&s.samples)
            .map(|(m, s)| m - s)
            .collect();
        let snr = 10.0 * (power(&s.samples) / power(&noise)).log10();
        assert!((snr - 7.5).abs() < 0.1, "snr {snr}");
        assert_eq!(scene.near_target.samples, s.samples);
    }

    #[test]
    fn fst_cross_correlation_peaks_at_scheduled_delay() {
        let len = 24_000;
        let x = source::colored_noise(len, 0.1, 4);
        let zero = Waveform::zeros(len);
        let mut spec = impulse_spec(4800);
        spec.segments = vec![Segment { start: 0, end: len, label: Label::Fst }];
        let scene = generate_scene(&spec, &zero, &x, &zero, 0).unwrap();
        let xc = |lag: usize| -> f64 {
            (lag..len)
                .map(|t| scene.mic.samples[t] * x.samples[t - lag])
                .sum()
        };
        let best = (0..6000).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
        assert_eq!(best, 4800);
    }

    #[test]
    fn delay_switches_at_boundary() {
        let len = 4000;
        let x = Waveform::new((0..len).map(|i| i as f64).collect());
        let zero = Waveform::zeros(len);
        let mut spec = impulse_spec(10);
        spec.delay_schedule = vec![(0, 10), (2000, 100)];
        let scene = generate_scene(&spec, &zero, &x, &zero, 0).unwrap();
        assert_eq!(scene.mic.samples[1999], 1989.0);
        assert_eq!(scene.mic.samples[2000], 1900.0);
    }

    #[test]
    fn schedule_beyond_length_is_rejected() {
        let len = 1000;
        let zero = Waveform::zeros(len);
        let mut spec = impulse_spec(0);
        spec.delay_schedule.push((5000, 10));
        assert!(generate_scene(&spec, &zero, &zero, &zero, 0).is_err());
    }

    #[test]
    fn labels_gate_components() {
        let len = 4000;
        let s = source::speech_like(len, 5);
        let x = source::speech_like(len, 6);
        let mut spec = impulse_spec(0);
        spec.segments = vec![
            Segment { start: 0, end: 2000, label: Label::Fst },
            Segment { start: 2000, end: 4000, label: Label::Nst },
        ];
        let scene = generate_scene(&spec, &s, &x, &Waveform::zeros(len), 0).unwrap();
        assert!(scene.near_target.samples[..2000].iter().all(|&v| v == 0.0));
        assert_eq!(scene.mic.samples[2000..], s.samples[2000..]);
        assert_eq!(scene.label_runs().len(), 2);
    }

    #[test]
    fn kind_ratio() {
        assert_eq!(kind_counts(7), [1, 1, 5]);
        assert_eq!(kind_counts(1), [0, 0, 1]);
        assert_eq!(kind_counts(14), [2, 2, 10]);
        for c in 1..50 {
            assert_eq!(kind_counts(c).iter().sum::<usize>(), c);
        }
    }

    #[test]
    fn batch_is_deterministic() {
        let template = SceneSpec {
            length: 8000,
            ..SceneSpec::default()
        };
        let a = synth_batch(&template, 7, 42).unwrap();
        let b = synth_batch(&template, 7, 42).unwrap();
        assert_eq!(a, b);
        let kinds: Vec<_> = a.iter().map(|g| g.kind).collect();
        assert_eq!(kinds.iter().filter(|k| **k == SceneKind::Fst).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == SceneKind::Nst).count(), 1);
        assert_eq!(kinds.iter().filter(|k| **k == SceneKind::Dt).count(), 5);
        let one = synth_batch(&template, 1, 3).unwrap();
        assert_eq!(one[0].kind, SceneKind::Dt);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn superposition(seed in 0u64..1000, delay in 0usize..400, split in 100usize..1900) {
            let len = 2000;
            let s = source::speech_like(len, seed);
            let x = source::speech_like(len, seed + 1);
            let n = source::colored_noise(len, 0.05, seed + 2);
            let zero = Waveform::zeros(len);
            let spec = SceneSpec {
                delay_schedule: vec![(0, delay), (split, delay / 2)],
                rir_near: RirSpec::Synthetic { rt60_ms: 30.0 },
                rir_echo_schedule: vec![(0, RirSpec::Synthetic { rt60_ms: 20.0 })],
                nonlinearity: Nonlinearity::Identity,
                ..SceneSpec::default()
            };
            let g = mixing_gains(&spec, &s, &x, &n, seed).unwrap();
            let full = mix(&spec, &s, &x, &n, g, seed).unwrap();
            let a = mix(&spec, &s, &x, &zero, g, seed).unwrap();
            let b = mix(&spec, &zero, &zero, &n, g, seed).unwrap();
            for i in 0..len {
                prop_assert!((full.mic.samples[i] - a.mic.samples[i] - b.mic.samples[i]).abs() < 1e-12);
            }
        }
    }
}
