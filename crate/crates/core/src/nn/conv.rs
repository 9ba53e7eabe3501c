use ndarray::Array3;
use rand::Rng;

use super::tensor::axpy;
use super::{join, Feature, Param, Params};
use crate::error::{Error, Result};

fn check_channels(what: &str, x: &Feature, expect: usize) -> Result<()> {
    if x.dim().0 != expect {
        return Err(Error::Shape(format!(
            "{what}: input has {} channels, expected {expect}",
            x.dim().0
        )));
    }
    Ok(())
}

/// Per-position linear map across channels plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1x1 {
    pub weight: Param,
    pub bias: Param,
}

impl Conv1x1 {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming(&[c_out, c_in], c_in, rng),
            bias: Param::filled(&[c_out], 0.0),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape[1]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape[0]
    }

    pub fn forward(&self, x: &Feature) -> Result<Feature> {
        check_channels("conv1x1", x, self.c_in())?;
        let (_, t, f) = x.dim();
        let n = t * f;
        let xs = x.as_slice().expect("standard layout");
        let mut out = Array3::zeros((self.c_out(), t, f));
        let os = out.as_slice_mut().expect("standard layout");
        for o in 0..self.c_out() {
            let row = &mut os[o * n..(o + 1) * n];
            row.fill(self.bias.value[o]);
            for c in 0..self.c_in() {
                axpy(self.weight.value[o * self.c_in() + c], &xs[c * n..(c + 1) * n], row);
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        let (_, t, f) = x.dim();
        let n = t * f;
        let (ci, co) = (self.c_in(), self.c_out());
        let xs = x.as_slice().expect("standard layout");
        let ds = dy.as_slice().expect("standard layout");
        let mut dx = Array3::zeros((ci, t, f));
        let dxs = dx.as_slice_mut().expect("standard layout");
        for o in 0..co {
            let drow = &ds[o * n..(o + 1) * n];
            self.bias.grad[o] += drow.iter().sum::<f64>();
            for c in 0..ci {
                let xrow = &xs[c * n..(c + 1) * n];
                self.weight.grad[o * ci + c] += super::tensor::dot(drow, xrow);
                axpy(self.weight.value[o * ci + c], drow, &mut dxs[c * n..(c + 1) * n]);
            }
        }
        dx
    }

    pub fn macs_per_frame(&self, f: usize) -> u64 {
        (self.c_in() * self.c_out() * f) as u64
    }
}

impl Params for Conv1x1 {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Convolution along the frequency axis only (kernel `(1, k)`, stride
/// `(1, s)`, zero padding `(k - 1) / 2`). Time extent is one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqConv {
    pub weight: Param,
    pub bias: Param,
    pub stride: usize,
}

impl FreqConv {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming(&[c_out, c_in, kernel], c_in * kernel, rng),
            bias: Param::filled(&[c_out], 0.0),
            stride,
        }
    }

    fn dims(&self) -> (usize, usize, usize) {
        (self.weight.shape[0], self.weight.shape[1], self.weight.shape[2])
    }

    fn pad(&self) -> usize {
        (self.dims().2 - 1) / 2
    }

    pub fn out_len(&self, f_in: usize) -> usize {
        (f_in + 2 * self.pad() - self.dims().2) / self.stride + 1
    }

    pub fn forward(&self, x: &Feature) -> Result<Feature> {
        let (co, ci, k) = self.dims();
        check_channels("freq conv", x, ci)?;
        let (_, t, f_in) = x.dim();
        let f_out = self.out_len(f_in);
        let pad = self.pad() as isize;
        let w = &self.weight.value;
        let mut out = Array3::zeros((co, t, f_out));
        for o in 0..co {
            for ti in 0..t {
                for j in 0..f_out {
                    let mut acc = self.bias.value[o];
                    for c in 0..ci {
                        for kk in 0..k {
                            let src = (j * self.stride) as isize + kk as isize - pad;
                            if src >= 0 && (src as usize) < f_in {
                                acc += w[(o * ci + c) * k + kk] * x[[c, ti, src as usize]];
                            }
                        }
                    }
                    out[[o, ti, j]] = acc;
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        let (co, ci, k) = self.dims();
        let (_, t, f_in) = x.dim();
        let f_out = dy.dim().2;
        let pad = self.pad() as isize;
        let mut dx = Array3::zeros(x.raw_dim());
        for o in 0..co {
            for ti in 0..t {
                for j in 0..f_out {
                    let g = dy[[o, ti, j]];
                    self.bias.grad[o] += g;
                    for c in 0..ci {
                        for kk in 0..k {
                            let src = (j * self.stride) as isize + kk as isize - pad;
                            if src >= 0 && (src as usize) < f_in {
                                let wi = (o * ci + c) * k + kk;
                                self.weight.grad[wi] += g * x[[c, ti, src as usize]];
                                dx[[c, ti, src as usize]] += g * self.weight.value[wi];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn macs_per_frame(&self, f_in: usize) -> u64 {
        let (co, ci, k) = self.dims();
        (co * ci * k * self.out_len(f_in)) as u64
    }
}

impl Params for FreqConv {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Transposed frequency convolution (kernel 3, stride 2, padding 1, output
/// padding 1): doubles the number of frequency positions.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqConvTranspose {
    /// `[c_in, c_out, 3]`
    pub weight: Param,
    pub bias: Param,
}

const T_KERNEL: usize = 3;
const T_STRIDE: usize = 2;

impl FreqConvTranspose {
    pub fn new(c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Param::kaiming(&[c_in, c_out, T_KERNEL], c_in * T_KERNEL / T_STRIDE, rng),
            bias: Param::filled(&[c_out], 0.0),
        }
    }

    fn dims(&self) -> (usize, usize) {
        (self.weight.shape[0], self.weight.shape[1])
    }

    /// Output position fed by input position `i` through tap `kk`.
    fn target(i: usize, kk: usize, f_out: usize) -> Option<usize> {
        let p = (i * T_STRIDE + kk) as isize - 1;
        (p >= 0 && (p as usize) < f_out).then_some(p as usize)
    }

    pub fn forward(&self, x: &Feature) -> Result<Feature> {
        let (ci, co) = self.dims();
        check_channels("transposed freq conv", x, ci)?;
        let (_, t, f_in) = x.dim();
        let f_out = f_in * T_STRIDE;
        let w = &self.weight.value;
        let mut out = Array3::zeros((co, t, f_out));
        for o in 0..co {
            for ti in 0..t {
                for p in 0..f_out {
                    out[[o, ti, p]] = self.bias.value[o];
                }
                for c in 0..ci {
                    for i in 0..f_in {
                        let xv = x[[c, ti, i]];
                        for kk in 0..T_KERNEL {
                            if let Some(p) = Self::target(i, kk, f_out) {
                                out[[o, ti, p]] += w[(c * co + o) * T_KERNEL + kk] * xv;
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        let (ci, co) = self.dims();
        let (_, t, f_in) = x.dim();
        let f_out = f_in * T_STRIDE;
        let mut dx = Array3::zeros(x.raw_dim());
        for o in 0..co {
            for ti in 0..t {
                for p in 0..f_out {
                    self.bias.grad[o] += dy[[o, ti, p]];
                }
                for c in 0..ci {
                    for i in 0..f_in {
                        let xv = x[[c, ti, i]];
                        for kk in 0..T_KERNEL {
                            if let Some(p) = Self::target(i, kk, f_out) {
                                let wi = (c * co + o) * T_KERNEL + kk;
                                let g = dy[[o, ti, p]];
                                self.weight.grad[wi] += g * xv;
                                dx[[c, ti, i]] += g * self.weight.value[wi];
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn macs_per_frame(&self, f_in: usize) -> u64 {
        let (ci, co) = self.dims();
        (ci * co * T_KERNEL * f_in) as u64
    }
}

impl Params for FreqConvTranspose {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "weight"), &self.weight);
        f(join(prefix, "bias"), &self.bias);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "weight"), &mut self.weight);
        f(join(prefix, "bias"), &mut self.bias);
    }
}
