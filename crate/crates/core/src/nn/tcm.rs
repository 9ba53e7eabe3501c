//! Temporal convolution module: pointwise expansion, depthwise causal
//! dilated convolution along time, pointwise projection, residual.

use std::collections::VecDeque;

use ndarray::{Array2, Array3};
use rand::Rng;

use super::conv::Conv1x1;
use super::{join, Feature, PRelu, Param, Params};
use crate::error::{Error, Result};

/// Per-channel causal convolution over time:
/// `y[c, t, f] = b[c] + Σ_j w[c, j] · x[c, t − j·d, f]` for `t − j·d ≥ 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseCausalConv {
    /// `[C, k]`, tap `j` looks `j · dilation` frames back.
    pub weight: Param,
    pub bias: Param,
    pub dilation: usize,
}

impl DepthwiseCausalConv {
    pub fn new(channels: usize, kernel: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        assert!(kernel >= 1 && dilation >= 1);
        Self {
            weight: Param::kaiming(&[channels, kernel], kernel, rng),
            bias: Param::filled(&[channels], 0.0),
            dilation,
        }
    }

    pub fn channels(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape[1]
    }

    /// Frames of history the convolution can see, current frame included.
    pub fn receptive_field(&self) -> usize {
        (self.kernel() - 1) * self.dilation + 1
    }

    fn check(&self, x: &Feature) -> Result<()> {
        if x.dim().0 != self.channels() {
            return Err(Error::Shape(format!(
                "causal conv: input has {} channels, expected {}",
                x.dim().0,
                self.channels()
            )));
        }
        Ok(())
    }

    fn output_frame(&self, x: &Feature, t: usize, out: &mut Feature, t_out: usize) {
        let (ch, _, f) = x.dim();
        let k = self.kernel();
        for c in 0..ch {
            for fi in 0..f {
                let mut acc = self.bias.value[c];
                for j in 0..k {
                    let lag = j * self.dilation;
                    if lag <= t {
                        acc += self.weight.value[c * k + j] * x[[c, t - lag, fi]];
                    }
                }
                out[[c, t_out, fi]] = acc;
            }
        }
    }

    pub fn forward(&self, x: &Feature) -> Result<Feature> {
        self.check(x)?;
        let mut out = Array3::zeros(x.raw_dim());
        for t in 0..x.dim().1 {
            self.output_frame(x, t, &mut out, t);
        }
        Ok(out)
    }

    /// Output for the last frame of `window` only (`C × 1 × F`).
    pub fn forward_last(&self, window: &Feature) -> Result<Feature> {
        self.check(window)?;
        let (c, t, f) = window.dim();
        let mut out = Array3::zeros((c, 1, f));
        self.output_frame(window, t - 1, &mut out, 0);
        Ok(out)
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        let (ch, t_len, f) = x.dim();
        let k = self.kernel();
        let mut dx = Array3::zeros(x.raw_dim());
        for c in 0..ch {
            for t in 0..t_len {
                for fi in 0..f {
                    let g = dy[[c, t, fi]];
                    self.bias.grad[c] += g;
                    for j in 0..k {
                        let lag = j * self.dilation;
                        if lag <= t {
                            self.weight.grad[c * k + j] += g * x[[c, t - lag, fi]];
                            dx[[c, t - lag, fi]] += g * self.weight.value[c * k + j];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn macs_per_frame(&self, f: usize) -> u64 {
        (self.channels() * self.kernel() * f) as u64
    }
}

impl Params for DepthwiseCausalConv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Causal dilated convolution of a `C × T` sequence with one `k`-tap filter
/// per channel (left padding of `(k − 1)·d` zeros).
pub fn causal_dilated_conv1d(
    x: &Array2<f64>,
    kernel: &Array2<f64>,
    bias: &[f64],
    dilation: usize,
) -> Result<Array2<f64>> {
    let (c, t) = x.dim();
    if kernel.dim().0 != c || bias.len() != c {
        return Err(Error::Shape(format!(
            "causal conv: {c} channels but kernel {:?} and {} biases",
            kernel.dim(),
            bias.len()
        )));
    }
    if kernel.dim().1 == 0 || dilation == 0 {
        return Err(Error::Shape("kernel size and dilation must be >= 1".into()));
    }
    let conv = DepthwiseCausalConv {
        weight: Param::new(&[c, kernel.dim().1], kernel.iter().copied().collect()),
        bias: Param::new(&[c], bias.to_vec()),
        dilation,
    };
    let x3 = x.clone().into_shape_with_order((c, t, 1)).expect("same size");
    let y = conv.forward(&x3)?;
    Ok(y.into_shape_with_order((c, t)).expect("same size"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tcm {
    pub expand: Conv1x1,
    pub act_in: PRelu,
    pub dconv: DepthwiseCausalConv,
    pub act_mid: PRelu,
    pub project: Conv1x1,
}

#[derive(Debug, Clone)]
pub struct TcmCache {
    x: Feature,
    expanded: Feature,
    a1: Feature,
    convolved: Feature,
    a2: Feature,
}

impl TcmCache {
    pub fn kinks(&self, h: &mut impl std::hash::Hasher) {
        PRelu::kink_pattern(&self.expanded, h);
        PRelu::kink_pattern(&self.convolved, h);
    }
}

impl Tcm {
    pub fn new(channels: usize, hidden: usize, kernel: usize, dilation: usize, rng: &mut impl Rng) -> Self {
        Self {
            expand: Conv1x1::new(channels, hidden, rng),
            act_in: PRelu::new(hidden),
            dconv: DepthwiseCausalConv::new(hidden, kernel, dilation, rng),
            act_mid: PRelu::new(hidden),
            project: Conv1x1::new(hidden, channels, rng),
        }
    }

    pub fn forward(&self, x: &Feature) -> Result<(Feature, TcmCache)> {
        let expanded = self.expand.forward(x)?;
        let a1 = self.act_in.forward(&expanded);
        let convolved = self.dconv.forward(&a1)?;
        let a2 = self.act_mid.forward(&convolved);
        let y = self.project.forward(&a2)? + x;
        Ok((
            y,
            TcmCache {
                x: x.clone(),
                expanded,
                a1,
                convolved,
                a2,
            },
        ))
    }

    pub fn backward(&mut self, cache: TcmCache, dy: &Feature) -> Feature {
        let da2 = self.project.backward(&cache.a2, dy);
        let dconv = self.act_mid.backward(&cache.convolved, &da2);
        let da1 = self.dconv.backward(&cache.a1, &dconv);
        let dexp = self.act_in.backward(&cache.expanded, &da1);
        self.expand.backward(&cache.x, &dexp) + dy
    }

    /// One streaming frame (`C × 1 × F`). `history` holds previous
    /// depthwise-conv inputs and is trimmed to the receptive field.
    pub fn step(&self, x: &Feature, history: &mut VecDeque<Feature>) -> Result<Feature> {
        let a1 = self.act_in.forward(&self.expand.forward(x)?);
        history.push_back(a1);
        while history.len() > self.dconv.receptive_field() {
            history.pop_front();
        }
        let views: Vec<_> = history.iter().map(|h| h.view()).collect();
        let window = ndarray::concatenate(ndarray::Axis(1), &views).expect("matching frames");
        let convolved = self.dconv.forward_last(&window)?;
        let a2 = self.act_mid.forward(&convolved);
        Ok(self.project.forward(&a2)? + x)
    }

    pub fn macs_per_frame(&self, f: usize) -> u64 {
        self.expand.macs_per_frame(f) + self.dconv.macs_per_frame(f) + self.project.macs_per_frame(f)
    }
}

impl Params for Tcm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.expand.visit(&join(prefix, "expand"), f);
        self.act_in.visit(&join(prefix, "act_in"), f);
        self.dconv.visit(&join(prefix, "dconv"), f);
        self.act_mid.visit(&join(prefix, "act_mid"), f);
        self.project.visit(&join(prefix, "project"), f);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.expand.visit_mut(&join(prefix, "expand"), f);
        self.act_in.visit_mut(&join(prefix, "act_in"), f);
        self.dconv.visit_mut(&join(prefix, "dconv"), f);
        self.act_mid.visit_mut(&join(prefix, "act_mid"), f);
        self.project.visit_mut(&join(prefix, "project"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random2(c: usize, t: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((c, t), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn kernel_one_is_pointwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random2(3, 20, &mut rng);
        let k = Array2::from_shape_vec((3, 1), vec![2.0, -1.0, 0.5]).unwrap();
        let y = causal_dilated_conv1d(&x, &k, &[0.1, 0.2, 0.3], 5).unwrap();
        for c in 0..3 {
            for t in 0..20 {
                assert_eq!(y[[c, t]], [0.1, 0.2, 0.3][c] + k[[c, 0]] * x[[c, t]]);
            }
        }
    }

    #[test]
    fn impulse_response_is_causal() {
        let mut x = Array2::zeros((1, 30));
        x[[0, 10]] = 1.0;
        let k = Array2::from_shape_vec((1, 2), vec![0.7, 0.3]).unwrap();
        let y = causal_dilated_conv1d(&x, &k, &[0.0], 4).unwrap();
        for t in 0..30 {
            let expect = match t {
                10 => 0.7,
                14 => 0.3,
                _ => 0.0,
            };
            assert_eq!(y[[0, t]], expect);
        }
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (c, t, k, d) = (4, 40, 3, 4);
        let x = random2(c, t, &mut rng);
        let kern = random2(c, k, &mut rng);
        let bias: Vec<f64> = (0..c).map(|i| i as f64 * 0.1).collect();
        let y = causal_dilated_conv1d(&x, &kern, &bias, d).unwrap();
        // Explicit left zero padding of (k-1)*d frames.
        let pad = (k - 1) * d;
        let mut padded = Array2::zeros((c, t + pad));
        padded.slice_mut(ndarray::s![.., pad..]).assign(&x);
        for ci in 0..c {
            for ti in 0..t {
                let mut acc = bias[ci];
                for j in 0..k {
                    acc += kern[[ci, j]] * padded[[ci, ti + pad - j * d]];
                }
                assert!((y[[ci, ti]] - acc).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn future_frames_never_affect_past() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random2(2, 25, &mut rng);
        let kern = random2(2, 3, &mut rng);
        let y = causal_dilated_conv1d(&x, &kern, &[0.0, 0.0], 2).unwrap();
        for tp in 0..25 {
            let mut x2 = x.clone();
            x2[[0, tp]] += 10.0;
            x2[[1, tp]] -= 3.0;
            let y2 = causal_dilated_conv1d(&x2, &kern, &[0.0, 0.0], 2).unwrap();
            for t in 0..tp {
                assert_eq!(y[[0, t]].to_bits(), y2[[0, t]].to_bits());
                assert_eq!(y[[1, t]].to_bits(), y2[[1, t]].to_bits());
            }
        }
    }

    #[test]
    fn streaming_step_matches_offline() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tcm = Tcm::new(3, 6, 3, 4, &mut rng);
        let x = Array3::from_shape_fn((3, 30, 5), |_| rng.random_range(-1.0..1.0));
        let (offline, _) = tcm.forward(&x).unwrap();
        let mut hist = VecDeque::new();
        for t in 0..30 {
            let frame = x.slice(ndarray::s![.., t..t + 1, ..]).to_owned();
            let y = tcm.step(&frame, &mut hist).unwrap();
            assert!(hist.len() <= 9);
            for c in 0..3 {
                for f in 0..5 {
                    assert_eq!(y[[c, 0, f]].to_bits(), offline[[c, t, f]].to_bits());
                }
            }
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        let x = Array2::zeros((2, 5));
        let k = Array2::zeros((3, 2));
        assert!(causal_dilated_conv1d(&x, &k, &[0.0, 0.0], 1).is_err());
    }
}
