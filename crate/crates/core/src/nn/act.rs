use super::{join, Feature, Param, Params};

/// Parametric ReLU with one learnable slope per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PRelu {
    pub slope: Param,
}

pub const PRELU_INIT: f64 = 0.25;

impl PRelu {
    pub fn new(channels: usize) -> Self {
        Self {
            slope: Param::filled(&[channels], PRELU_INIT),
        }
    }

    pub fn forward(&self, x: &Feature) -> Feature {
        let n = x.dim().1 * x.dim().2;
        let mut y = x.clone();
        for (i, v) in y.as_slice_mut().expect("standard layout").iter_mut().enumerate() {
            if *v <= 0.0 {
                *v *= self.slope.value[i / n];
            }
        }
        y
    }

    pub fn backward(&mut self, x: &Feature, dy: &Feature) -> Feature {
        let n = x.dim().1 * x.dim().2;
        let mut dx = dy.clone();
        let xs = x.as_slice().expect("standard layout");
        for (i, d) in dx.as_slice_mut().expect("standard layout").iter_mut().enumerate() {
            if xs[i] <= 0.0 {
                let c = i / n;
                self.slope.grad[c] += *d * xs[i];
                *d *= self.slope.value[c];
            }
        }
        dx
    }

    /// Hash of the sign pattern of `x`; changes when a perturbation crosses
    /// the kink at zero.
    pub fn kink_pattern(x: &Feature, h: &mut impl std::hash::Hasher) {
        for chunk in x.as_slice().expect("standard layout").chunks(64) {
            let bits = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, v)| acc | (((*v > 0.0) as u64) << i));
            h.write_u64(bits);
        }
    }
}

impl Params for PRelu {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "slope"), &self.slope);
    }
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "slope"), &mut self.slope);
    }
}
