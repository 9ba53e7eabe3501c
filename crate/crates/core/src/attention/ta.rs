use ndarray::Array2;
use rand::Rng;

use super::das::DasHead;
use super::kernel::{RowCache, Window};
use super::trace::ModuleTrace;
use super::KvRing;
use crate::error::{Error, Result};
use crate::nn::tensor::{concat_channels, from_rows, split_channels, to_rows};
use crate::nn::{join, BlockCache, ConvBlock, Feature, Mode, Param, Params};

/// Time-alignment merge: queries from the microphone branch attend over past
/// reference frames, and the aligned reference is fused with the microphone
/// features by a pointwise block.
#[derive(Debug, Clone, PartialEq)]
pub struct TaMerge {
    pub query: ConvBlock,
    pub key: ConvBlock,
    pub value: ConvBlock,
    /// Fed with the concatenated reference and microphone encodings.
    pub span: Option<DasHead>,
    pub merge: ConvBlock,
    pub window: Window,
}

#[derive(Debug, Clone)]
struct Sample {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    span_in: Option<Array2<f64>>,
    rows: Vec<RowCache>,
}

#[derive(Debug, Clone)]
pub struct TaCache {
    q: BlockCache,
    k: BlockCache,
    v: BlockCache,
    merge: BlockCache,
    samples: Vec<Sample>,
    channels: usize,
}

impl TaCache {
    pub fn kinks(&self, ramp: f64, h: &mut impl std::hash::Hasher) {
        for c in [&self.q, &self.k, &self.v, &self.merge] {
            c.kinks(h);
        }
        for s in &self.samples {
            for r in &s.rows {
                r.kinks(ramp, h);
            }
        }
    }

    pub fn spans(&self, sample: usize) -> Option<Vec<f64>> {
        let rows = &self.samples[sample].rows;
        rows.iter().map(|r| r.z).collect()
    }
}

impl TaMerge {
    pub fn new(channels: usize, flat: usize, window: Window, dynamic: bool, rng: &mut impl Rng) -> Self {
        Self {
            query: ConvBlock::pointwise(channels, channels, rng),
            key: ConvBlock::pointwise(channels, channels, rng),
            value: ConvBlock::pointwise(channels, channels, rng),
            span: dynamic.then(|| DasHead::new(2 * flat, window.max_span, window.ramp)),
            merge: ConvBlock::pointwise(2 * channels, channels, rng),
            window,
        }
    }

    fn scale(flat: usize) -> f64 {
        1.0 / (flat as f64).sqrt()
    }

    pub fn forward(&self, mic: &[Feature], refs: &[Feature], mode: Mode) -> Result<(Vec<Feature>, TaCache)> {
        if mic.len() != refs.len() || mic.iter().zip(refs).any(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::Shape("microphone and reference encodings differ".into()));
        }
        let channels = mic[0].dim().0;
        let (qf, qc) = self.query.forward(mic, mode)?;
        let (kf, kc) = self.key.forward(refs, mode)?;
        let (vf, vc) = self.value.forward(refs, mode)?;
        let mut samples = Vec::with_capacity(mic.len());
        let mut merged = Vec::with_capacity(mic.len());
        for i in 0..mic.len() {
            let (q, k, v) = (to_rows(&qf[i]), to_rows(&kf[i]), to_rows(&vf[i]));
            let flat = q.ncols();
            let (span_in, z) = match &self.span {
                Some(head) => {
                    let x = to_rows(&concat_channels(&refs[i], &mic[i]));
                    let z = x
                        .rows()
                        .into_iter()
                        .map(|r| head.span(r.as_slice().expect("standard layout")))
                        .collect::<Result<Vec<_>>>()?;
                    (Some(x), Some(z))
                }
                None => (None, None),
            };
            let mut out = Array2::zeros(q.dim());
            let rows = self
                .window
                .forward_seq(&q, &k, &v, 0..flat, z.as_deref(), Self::scale(flat), &mut out)?;
            merged.push(concat_channels(&mic[i], &from_rows(&out, channels)));
            samples.push(Sample {
                q,
                k,
                v,
                span_in,
                rows,
            });
        }
        let (ys, mc) = self.merge.forward(&merged, mode)?;
        Ok((
            ys,
            TaCache {
                q: qc,
                k: kc,
                v: vc,
                merge: mc,
                samples,
                channels,
            },
        ))
    }

    /// Returns gradients with respect to the microphone and reference
    /// encodings.
    pub fn backward(&mut self, cache: TaCache, dys: Vec<Feature>) -> (Vec<Feature>, Vec<Feature>) {
        let channels = cache.channels;
        let d_merged = self.merge.backward(cache.merge, dys);
        let mut d_mic = Vec::new();
        let mut d_ref = Vec::new();
        let mut dqs = Vec::new();
        let mut dks = Vec::new();
        let mut dvs = Vec::new();
        for (s, dm) in cache.samples.iter().zip(&d_merged) {
            let (dmic, dta) = split_channels(dm, channels);
            let flat = s.q.ncols();
            let dout = to_rows(&dta);
            let mut dq = Array2::zeros(s.q.dim());
            let mut dk = Array2::zeros(s.q.dim());
            let mut dv = Array2::zeros(s.q.dim());
            let dz = self.window.backward_seq(
                &s.q,
                &s.k,
                &s.v,
                0..flat,
                &s.rows,
                Self::scale(flat),
                &dout,
                &mut dq,
                &mut dk,
                &mut dv,
            );
            let mut dref = Feature::zeros(dmic.dim());
            let mut dmic = dmic;
            if let (Some(head), Some(x)) = (self.span.as_mut(), &s.span_in) {
                let mut dx = Array2::zeros(x.dim());
                for (t, r) in s.rows.iter().enumerate() {
                    head.backward(
                        x.row(t).as_slice().expect("standard layout"),
                        r.z.expect("dynamic row"),
                        dz[t],
                        dx.row_mut(t).as_slice_mut().expect("standard layout"),
                    );
                }
                let (a, b) = split_channels(&from_rows(&dx, 2 * channels), channels);
                dref += &a;
                dmic += &b;
            }
            dqs.push(from_rows(&dq, channels));
            dks.push(from_rows(&dk, channels));
            dvs.push(from_rows(&dv, channels));
            d_mic.push(dmic);
            d_ref.push(dref);
        }
        let via_q = self.query.backward(cache.q, dqs);
        let via_k = self.key.backward(cache.k, dks);
        let via_v = self.value.backward(cache.v, dvs);
        for i in 0..d_mic.len() {
            d_mic[i] += &via_q[i];
            d_ref[i] += &via_k[i];
            d_ref[i] += &via_v[i];
        }
        (d_mic, d_ref)
    }

    /// One frame of streaming inference; `mic` and `reference` are
    /// `C × 1 × F'`.
    pub fn step(&self, mic: &Feature, reference: &Feature, ring: &mut KvRing) -> Result<Feature> {
        let channels = mic.dim().0;
        let q = to_rows(&self.query.eval(mic)?);
        let k = to_rows(&self.key.eval(reference)?);
        let v = to_rows(&self.value.eval(reference)?);
        let flat = q.ncols();
        let t = ring.push(k.into_raw_vec_and_offset().0, v.into_raw_vec_and_offset().0, self.window.max_span);
        let z = match &self.span {
            Some(head) => {
                let x = to_rows(&concat_channels(reference, mic));
                Some(head.span(x.as_slice().expect("standard layout"))?)
            }
            None => None,
        };
        let n = self.window.n_keys(z, t);
        let (keys, values) = ring.by_lag(n);
        let mut out = vec![0.0; flat];
        self.window.attend(
            q.as_slice().expect("standard layout"),
            &keys,
            &values,
            z,
            Self::scale(flat),
            &mut out,
        )?;
        let out = Array2::from_shape_vec((1, flat), out).expect("row shape");
        self.merge.eval(&concat_channels(mic, &from_rows(&out, channels)))
    }

    pub fn trace(&self, cache: &TaCache, sample: usize, frames: &[usize]) -> ModuleTrace {
        let s = &cache.samples[sample];
        let flat = s.q.ncols();
        ModuleTrace::build(
            "ta",
            &self.window,
            &s.q,
            &s.k,
            std::slice::from_ref(&s.rows),
            Self::scale(flat),
            self.span.as_ref().map_or(0, DasHead::dim),
            frames,
        )
    }

    /// Pointwise-block multiply-accumulates per frame at `bins` frequency
    /// positions (attention and span heads are counted from a trace).
    pub fn macs_per_frame(&self, bins: usize) -> u64 {
        [&self.query, &self.key, &self.value, &self.merge]
            .iter()
            .map(|b| b.macs_per_frame(bins))
            .sum()
    }
}

impl Params for TaMerge {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        if let Some(h) = &self.span {
            h.visit(&join(prefix, "span"), f);
        }
        self.merge.visit(&join(prefix, "merge"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        if let Some(h) = &mut self.span {
            h.visit_mut(&join(prefix, "span"), f);
        }
        self.merge.visit_mut(&join(prefix, "merge"), f);
    }
}
