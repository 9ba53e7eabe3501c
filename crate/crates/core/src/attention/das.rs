//! Span prediction and the soft causal mask.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::tensor::dot;
use crate::nn::{join, Param, Params};

pub const DEFAULT_MAX_SPAN: usize = 100;
pub const DEFAULT_RAMP: f64 = 2.0;
/// Initial span as a fraction of the maximum span.
pub const INIT_SPAN_FRACTION: f64 = 0.9;

/// Keeps `z` strictly inside `(0, T_w)` even when the sigmoid saturates.
const SPAN_MARGIN: f64 = 1e-12;

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Learnable span predictor `z = T_w · sigmoid(v · x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DasHead {
    pub v: Param,
    pub b: Param,
    pub max_span: usize,
    pub ramp: f64,
}

impl DasHead {
    /// `v = 0`, `b = logit(0.9)`: every frame starts at 90% of the maximum
    /// span.
    pub fn new(dim: usize, max_span: usize, ramp: f64) -> Self {
        assert!(max_span >= 1 && ramp >= 1.0);
        Self {
            v: Param::filled(&[dim], 0.0),
            b: Param::filled(&[1], logit(INIT_SPAN_FRACTION)),
            max_span,
            ramp,
        }
    }

    /// Small random `v` and a bias giving `z ≈ target` at `x = 0`.
    pub fn randomized(dim: usize, max_span: usize, ramp: f64, target: f64, scale: f64, rng: &mut impl Rng) -> Self {
        let mut head = Self::new(dim, max_span, ramp);
        head.v.value = (0..dim).map(|_| rng.random_range(-scale..scale)).collect();
        head.b.value[0] = logit(target / max_span as f64);
        head
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn span(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "span head input has {} features, expected {}",
                x.len(),
                self.dim()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("span head input".into()));
        }
        Ok(self.span_unchecked(x))
    }

    pub(crate) fn span_unchecked(&self, x: &[f64]) -> f64 {
        let t_w = self.max_span as f64;
        let z = t_w * sigmoid(dot(&self.v.value, x) + self.b.value[0]);
        z.clamp(t_w * SPAN_MARGIN, t_w * (1.0 - SPAN_MARGIN))
    }

    /// Backpropagate `dL/dz` at input `x`; returns `dL/dx`.
    pub(crate) fn backward(&mut self, x: &[f64], z: f64, dz: f64, dx: &mut [f64]) {
        let t_w = self.max_span as f64;
        let du = dz * z * (1.0 - z / t_w);
        if du == 0.0 {
            return;
        }
        for (g, xi) in self.v.grad.iter_mut().zip(x) {
            *g += du * xi;
        }
        self.b.grad[0] += du;
        for (d, vi) in dx.iter_mut().zip(&self.v.value) {
            *d += du * vi;
        }
    }
}

impl Params for DasHead {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "v"), &self.v);
        f(join(prefix, "b"), &self.b);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "v"), &mut self.v);
        f(join(prefix, "b"), &mut self.b);
    }
}

/// `z_t = T_w · sigmoid(v · x_t + b)`, strictly inside `(0, T_w)`.
pub fn das_span(x: &[f64], head: &DasHead) -> Result<f64> {
    head.span(x)
}

/// Mask for lag `t − r`: `min(max((1/R)(R + z − (t − r)), 0), 1)`.
#[inline]
#[allow(clippy::manual_clamp)]
pub(crate) fn mask_at_lag(z: f64, lag: usize, ramp: f64) -> f64 {
    ((1.0 / ramp) * (ramp + z - lag as f64)).max(0.0).min(1.0)
}

pub fn soft_mask(z: f64, t: usize, r: usize, ramp: f64) -> Result<f64> {
    if r > t {
        return Err(Error::Causality { t, r });
    }
    Ok(mask_at_lag(z, t - r, ramp))
}

/// Whether lag sits strictly inside the linear part of the ramp.
#[inline]
pub(crate) fn on_ramp(z: f64, lag: usize, ramp: f64) -> bool {
    let m = (1.0 / ramp) * (ramp + z - lag as f64);
    m > 0.0 && m < 1.0
}

/// Number of most recent keys that can carry a nonzero mask at frame `t`:
/// `min(ceil(z + R), T_w, t + 1)`.
pub fn effective_span(z: f64, ramp: f64, max_span: usize, t: usize) -> usize {
    let support = (ramp + z).ceil().max(1.0) as usize;
    support.min(max_span).min(t + 1)
}
