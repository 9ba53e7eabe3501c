//! Differentiable building blocks with hand-written backward passes.
//!
//! Layers are stateless with respect to a forward pass: `forward` returns the
//! output together with whatever the matching `backward` needs, and
//! `backward` accumulates parameter gradients into [`Param::grad`]. Every
//! layer works on a batch of `C × T × F` feature maps so that batch
//! normalization can pool statistics across the batch.

mod act;
mod block;
pub mod checkpoint;
mod conv;
pub mod gradcheck;
mod norm;
mod tcm;
pub mod tensor;

use rand::Rng;
use rand_distr::{Distribution, Uniform};

pub use act::PRelu;
pub use block::{BlockCache, ConvBlock, ConvKind};
pub use conv::{Conv1x1, FreqConv, FreqConvTranspose};
pub use norm::{BatchNorm, NormCache};
pub use tcm::{causal_dilated_conv1d, DepthwiseCausalConv, Tcm, TcmCache};

/// A `C × T × F` feature map.
pub type Feature = ndarray::Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics only; every layer is frame-local or causal.
    Eval,
}

/// A named tensor of parameters (or running statistics) with its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    /// Running statistics are saved with the model but never optimized.
    pub trainable: bool,
}

impl Param {
    pub fn new(shape: &[usize], value: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        Self {
            shape: shape.to_vec(),
            grad: vec![0.0; value.len()],
            value,
            trainable: true,
        }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        Self::new(shape, vec![v; shape.iter().product()])
    }

    pub fn buffer(shape: &[usize], v: f64) -> Self {
        Self {
            trainable: false,
            ..Self::filled(shape, v)
        }
    }

    /// Kaiming-uniform initialization for a PReLU-activated layer.
    pub fn kaiming(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / ((1.0 + 0.25f64.powi(2)) * fan_in as f64)).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(|_| dist.sample(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Visitation of every parameter in a deterministic order.
pub trait Params {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn num_params(p: &dyn Params) -> usize {
    let mut n = 0;
    p.visit("", &mut |_, p| {
        if p.trainable {
            n += p.len()
        }
    });
    n
}
