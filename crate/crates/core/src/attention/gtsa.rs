use ndarray::Array2;
use rand::Rng;

use super::das::DasHead;
use super::kernel::{RowCache, Window};
use super::trace::ModuleTrace;
use super::KvRing;
use crate::error::{Error, Result};
use crate::nn::tensor::{from_rows, to_rows};
use crate::nn::{join, BlockCache, ConvBlock, Feature, Mode, Param, Params};

/// Grouped temporal self-attention with a residual connection.
///
/// The flattened `C·F'` frame vector is split into `groups` contiguous
/// slices, each attending over past frames with its own span head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gtsa {
    pub query: ConvBlock,
    pub key: ConvBlock,
    pub value: ConvBlock,
    pub spans: Option<Vec<DasHead>>,
    pub groups: usize,
    pub window: Window,
}

#[derive(Debug, Clone)]
struct Sample {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    span_in: Option<Array2<f64>>,
    rows: Vec<Vec<RowCache>>,
}

#[derive(Debug, Clone)]
pub struct GtsaCache {
    q: BlockCache,
    k: BlockCache,
    v: BlockCache,
    samples: Vec<Sample>,
    channels: usize,
}

impl GtsaCache {
    pub fn kinks(&self, ramp: f64, h: &mut impl std::hash::Hasher) {
        for c in [&self.q, &self.k, &self.v] {
            c.kinks(h);
        }
        for s in &self.samples {
            for g in &s.rows {
                for r in g {
                    r.kinks(ramp, h);
                }
            }
        }
    }

    /// Spans per group for one sample, when span heads are present.
    pub fn spans(&self, sample: usize) -> Option<Vec<Vec<f64>>> {
        self.samples[sample]
            .rows
            .iter()
            .map(|g| g.iter().map(|r| r.z).collect())
            .collect()
    }
}

impl Gtsa {
    /// `flat = C·F'` must be divisible by `groups`.
    pub fn new(
        channels: usize,
        flat: usize,
        groups: usize,
        window: Window,
        dynamic: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if groups == 0 || !flat.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "{flat} attention features cannot be split into {groups} groups"
            )));
        }
        Ok(Self {
            query: ConvBlock::pointwise(channels, channels, rng),
            key: ConvBlock::pointwise(channels, channels, rng),
            value: ConvBlock::pointwise(channels, channels, rng),
            spans: dynamic.then(|| {
                (0..groups)
                    .map(|_| DasHead::new(flat, window.max_span, window.ramp))
                    .collect()
            }),
            groups,
            window,
        })
    }

    fn scale(width: usize) -> f64 {
        1.0 / (width as f64).sqrt()
    }

    fn check(&self, flat: usize) -> Result<usize> {
        if !flat.is_multiple_of(self.groups) {
            return Err(Error::Shape(format!(
                "{flat} attention features cannot be split into {} groups",
                self.groups
            )));
        }
        Ok(flat / self.groups)
    }

    fn group_spans(&self, span_in: &Array2<f64>) -> Result<Vec<Vec<f64>>> {
        let heads = self.spans.as_ref().expect("dynamic module");
        heads
            .iter()
            .map(|h| {
                span_in
                    .rows()
                    .into_iter()
                    .map(|r| h.span(r.as_slice().expect("standard layout")))
                    .collect()
            })
            .collect()
    }

    /// `span_in` drives the span heads; it must flatten to the same width as
    /// `xs`.
    pub fn forward(&self, xs: &[Feature], span_in: &[Feature], mode: Mode) -> Result<(Vec<Feature>, GtsaCache)> {
        let channels = xs[0].dim().0;
        let (qf, qc) = self.query.forward(xs, mode)?;
        let (kf, kc) = self.key.forward(xs, mode)?;
        let (vf, vc) = self.value.forward(xs, mode)?;
        let mut ys = Vec::with_capacity(xs.len());
        let mut samples = Vec::with_capacity(xs.len());
        for i in 0..xs.len() {
            let (q, k, v) = (to_rows(&qf[i]), to_rows(&kf[i]), to_rows(&vf[i]));
            let width = self.check(q.ncols())?;
            let (x_span, z) = if self.spans.is_some() {
                let x = to_rows(&span_in[i]);
                if x.ncols() != q.ncols() {
                    return Err(Error::Shape("span head input width differs from attention width".into()));
                }
                let z = self.group_spans(&x)?;
                (Some(x), Some(z))
            } else {
                (None, None)
            };
            let mut out = Array2::zeros(q.dim());
            let mut rows = Vec::with_capacity(self.groups);
            for g in 0..self.groups {
                rows.push(self.window.forward_seq(
                    &q,
                    &k,
                    &v,
                    g * width..(g + 1) * width,
                    z.as_ref().map(|z| z[g].as_slice()),
                    Self::scale(width),
                    &mut out,
                )?);
            }
            ys.push(&xs[i] + &from_rows(&out, channels));
            samples.push(Sample {
                q,
                k,
                v,
                span_in: x_span,
                rows,
            });
        }
        Ok((
            ys,
            GtsaCache {
                q: qc,
                k: kc,
                v: vc,
                samples,
                channels,
            },
        ))
    }

    /// Returns gradients with respect to `xs` and `span_in`.
    pub fn backward(&mut self, cache: GtsaCache, dys: Vec<Feature>) -> (Vec<Feature>, Vec<Feature>) {
        let channels = cache.channels;
        let mut dqs = Vec::new();
        let mut dks = Vec::new();
        let mut dvs = Vec::new();
        let mut d_span = Vec::new();
        for (s, dy) in cache.samples.iter().zip(&dys) {
            let width = s.q.ncols() / self.groups;
            let dout = to_rows(dy);
            let mut dq = Array2::zeros(s.q.dim());
            let mut dk = Array2::zeros(s.q.dim());
            let mut dv = Array2::zeros(s.q.dim());
            let mut dx = Array2::zeros(s.q.dim());
            for g in 0..self.groups {
                let dz = self.window.backward_seq(
                    &s.q,
                    &s.k,
                    &s.v,
                    g * width..(g + 1) * width,
                    &s.rows[g],
                    Self::scale(width),
                    &dout,
                    &mut dq,
                    &mut dk,
                    &mut dv,
                );
                if let (Some(heads), Some(x)) = (self.spans.as_mut(), &s.span_in) {
                    for (t, r) in s.rows[g].iter().enumerate() {
                        heads[g].backward(
                            x.row(t).as_slice().expect("standard layout"),
                            r.z.expect("dynamic row"),
                            dz[t],
                            dx.row_mut(t).as_slice_mut().expect("standard layout"),
                        );
                    }
                }
            }
            dqs.push(from_rows(&dq, channels));
            dks.push(from_rows(&dk, channels));
            dvs.push(from_rows(&dv, channels));
            d_span.push(from_rows(&dx, channels));
        }
        let via_q = self.query.backward(cache.q, dqs);
        let via_k = self.key.backward(cache.k, dks);
        let via_v = self.value.backward(cache.v, dvs);
        let dxs = dys
            .into_iter()
            .enumerate()
            .map(|(i, dy)| dy + &via_q[i] + &via_k[i] + &via_v[i])
            .collect();
        (dxs, d_span)
    }

    /// One frame of streaming inference; inputs are `C × 1 × F'`.
    pub fn step(&self, x: &Feature, span_in: &Feature, ring: &mut KvRing) -> Result<Feature> {
        let channels = x.dim().0;
        let q = to_rows(&self.query.eval(x)?);
        let k = to_rows(&self.key.eval(x)?);
        let v = to_rows(&self.value.eval(x)?);
        let flat = q.ncols();
        let width = self.check(flat)?;
        let t = ring.push(k.into_raw_vec_and_offset().0, v.into_raw_vec_and_offset().0, self.window.max_span);
        let z = match &self.spans {
            Some(_) => Some(self.group_spans(&to_rows(span_in))?),
            None => None,
        };
        let qs = q.as_slice().expect("standard layout");
        let mut out = vec![0.0; flat];
        for g in 0..self.groups {
            let cols = g * width..(g + 1) * width;
            let zg = z.as_ref().map(|z| z[g][0]);
            let n = self.window.n_keys(zg, t);
            let (keys, values) = ring.by_lag(n);
            let keys: Vec<&[f64]> = keys.iter().map(|k| &k[cols.clone()]).collect();
            let values: Vec<&[f64]> = values.iter().map(|v| &v[cols.clone()]).collect();
            self.window.attend(
                &qs[cols.clone()],
                &keys,
                &values,
                zg,
                Self::scale(width),
                &mut out[cols],
            )?;
        }
        let out = Array2::from_shape_vec((1, flat), out).expect("row shape");
        Ok(x + &from_rows(&out, channels))
    }

    pub fn trace(&self, name: &str, cache: &GtsaCache, sample: usize, frames: &[usize]) -> ModuleTrace {
        let s = &cache.samples[sample];
        let width = s.q.ncols() / self.groups;
        ModuleTrace::build(
            name,
            &self.window,
            &s.q,
            &s.k,
            &s.rows,
            Self::scale(width),
            self.spans.as_ref().map_or(0, |h| h[0].dim()),
            frames,
        )
    }

    pub fn macs_per_frame(&self, bins: usize) -> u64 {
        [&self.query, &self.key, &self.value]
            .iter()
            .map(|b| b.macs_per_frame(bins))
            .sum()
    }
}

impl Params for Gtsa {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.query.visit(&join(prefix, "query"), f);
        self.key.visit(&join(prefix, "key"), f);
        self.value.visit(&join(prefix, "value"), f);
        if let Some(hs) = &self.spans {
            for (g, h) in hs.iter().enumerate() {
                h.visit(&join(prefix, &format!("span{g}")), f);
            }
        }
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.query.visit_mut(&join(prefix, "query"), f);
        self.key.visit_mut(&join(prefix, "key"), f);
        self.value.visit_mut(&join(prefix, "value"), f);
        if let Some(hs) = &mut self.spans {
            for (g, h) in hs.iter_mut().enumerate() {
                h.visit_mut(&join(prefix, &format!("span{g}")), f);
            }
        }
    }
}
