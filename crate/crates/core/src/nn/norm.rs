use ndarray::Array3;

use super::{join, Feature, Mode, Param, Params};

pub const BN_EPS: f64 = 1e-5;
/// Weight of the previous running statistic in each update.
pub const BN_MOMENTUM: f64 = 0.9;

/// Per-channel normalization. Training mode pools statistics over
/// `(batch, T, F)`; evaluation mode is a fixed affine map built from the
/// running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
}

#[derive(Debug, Clone)]
pub struct NormCache {
    mode: Mode,
    xhat: Vec<Feature>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::filled(&[channels], 1.0),
            beta: Param::filled(&[channels], 0.0),
            running_mean: Param::buffer(&[channels], 0.0),
            running_var: Param::buffer(&[channels], 1.0),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn plane(x: &Feature, c: usize) -> &[f64] {
        let n = x.dim().1 * x.dim().2;
        &x.as_slice().expect("standard layout")[c * n..(c + 1) * n]
    }

    pub fn forward(&self, xs: &[Feature], mode: Mode) -> (Vec<Feature>, NormCache) {
        let ch = self.channels();
        let (mean, var) = match mode {
            Mode::Eval => (
                self.running_mean.value.clone(),
                self.running_var.value.clone(),
            ),
            Mode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let count: usize = xs.iter().map(|x| x.dim().1 * x.dim().2).sum();
                    let sum: f64 = xs.iter().map(|x| Self::plane(x, c).iter().sum::<f64>()).sum();
                    let m = sum / count.max(1) as f64;
                    let sq: f64 = xs
                        .iter()
                        .map(|x| Self::plane(x, c).iter().map(|v| (v - m) * (v - m)).sum::<f64>())
                        .sum();
                    mean[c] = m;
                    var[c] = sq / count.max(1) as f64;
                }
                (mean, var)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = Vec::with_capacity(xs.len());
        let mut ys = Vec::with_capacity(xs.len());
        for x in xs {
            let (c_n, t, f) = x.dim();
            let n = t * f;
            let mut xh = Array3::zeros((c_n, t, f));
            let mut y = Array3::zeros((c_n, t, f));
            {
                let xs_ = x.as_slice().expect("standard layout");
                let xhs = xh.as_slice_mut().expect("standard layout");
                let ys_ = y.as_slice_mut().expect("standard layout");
                for c in 0..c_n {
                    let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                    for i in c * n..(c + 1) * n {
                        let h = (xs_[i] - mean[c]) * inv_std[c];
                        xhs[i] = h;
                        ys_[i] = g * h + b;
                    }
                }
            }
            xhat.push(xh);
            ys.push(y);
        }
        (
            ys,
            NormCache {
                mode,
                xhat,
                inv_std,
                batch_mean: mean,
                batch_var: var,
            },
        )
    }

    /// Accumulates gamma/beta gradients, folds the batch statistics into the
    /// running estimates (training mode), and returns input gradients.
    pub fn backward(&mut self, cache: &NormCache, dys: &[Feature]) -> Vec<Feature> {
        let ch = self.channels();
        let mut sum_dxh = vec![0.0; ch];
        let mut sum_dxh_xh = vec![0.0; ch];
        let mut count = 0usize;
        for (dy, xh) in dys.iter().zip(&cache.xhat) {
            let n = dy.dim().1 * dy.dim().2;
            count += n;
            let ds = dy.as_slice().expect("standard layout");
            let hs = xh.as_slice().expect("standard layout");
            for c in 0..ch {
                let g = self.gamma.value[c];
                let (mut sb, mut sg, mut s1, mut s2) = (0.0, 0.0, 0.0, 0.0);
                for i in c * n..(c + 1) * n {
                    sb += ds[i];
                    sg += ds[i] * hs[i];
                    let dxh = ds[i] * g;
                    s1 += dxh;
                    s2 += dxh * hs[i];
                }
                self.beta.grad[c] += sb;
                self.gamma.grad[c] += sg;
                sum_dxh[c] += s1;
                sum_dxh_xh[c] += s2;
            }
        }
        let nf = count.max(1) as f64;
        let dxs = dys
            .iter()
            .zip(&cache.xhat)
            .map(|(dy, xh)| {
                let n = dy.dim().1 * dy.dim().2;
                let mut dx = Array3::zeros(dy.raw_dim());
                let ds = dy.as_slice().expect("standard layout");
                let hs = xh.as_slice().expect("standard layout");
                let out = dx.as_slice_mut().expect("standard layout");
                for c in 0..ch {
                    let g = self.gamma.value[c];
                    let is = cache.inv_std[c];
                    for i in c * n..(c + 1) * n {
                        let dxh = ds[i] * g;
                        out[i] = match cache.mode {
                            Mode::Eval => dxh * is,
                            Mode::Train => {
                                is / nf * (nf * dxh - sum_dxh[c] - hs[i] * sum_dxh_xh[c])
                            }
                        };
                    }
                }
                dx
            })
            .collect();
        if cache.mode == Mode::Train {
            for c in 0..ch {
                let rm = &mut self.running_mean.value[c];
                *rm = BN_MOMENTUM * *rm + (1.0 - BN_MOMENTUM) * cache.batch_mean[c];
                let rv = &mut self.running_var.value[c];
                *rv = BN_MOMENTUM * *rv + (1.0 - BN_MOMENTUM) * cache.batch_var[c];
            }
        }
        dxs
    }
}

impl Params for BatchNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}
