use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::Params;

/// Adaptive-moment gradient descent over every trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut dyn Params) {
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let lr = self.lr;
        let eps = self.eps;
        let (ms, vs) = (&mut self.m, &mut self.v);
        let mut i = 0;
        params.visit_mut("", &mut |_, p| {
            if !p.trainable {
                return;
            }
            if ms.len() == i {
                ms.push(vec![0.0; p.len()]);
                vs.push(vec![0.0; p.len()]);
            }
            let (m, v) = (&mut ms[i], &mut vs[i]);
            for j in 0..p.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p.value[j] -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
            }
            i += 1;
        });
    }

    /// Stores the moments as `adam.m.<name>` / `adam.v.<name>` tensors.
    pub fn save_into(&self, params: &dyn Params, ckpt: &mut Checkpoint) {
        ckpt.meta.set("adam_steps", self.steps);
        let mut i = 0;
        params.visit("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            if let (Some(m), Some(v)) = (self.m.get(i), self.v.get(i)) {
                ckpt.push(format!("adam.m.{name}"), &p.shape, m.clone());
                ckpt.push(format!("adam.v.{name}"), &p.shape, v.clone());
            }
            i += 1;
        });
    }

    pub fn load_from(lr: f64, params: &dyn Params, ckpt: &Checkpoint) -> Result<Self> {
        let mut adam = Self::new(lr);
        adam.steps = ckpt.meta.parse_key("adam_steps")?.unwrap_or(0);
        if adam.steps == 0 {
            return Ok(adam);
        }
        let mut err = None;
        params.visit("", &mut |name, p| {
            if !p.trainable || err.is_some() {
                return;
            }
            match (ckpt.get(&format!("adam.m.{name}")), ckpt.get(&format!("adam.v.{name}"))) {
                (Some(m), Some(v)) if m.values.len() == p.len() && v.values.len() == p.len() => {
                    adam.m.push(m.values.clone());
                    adam.v.push(v.values.clone());
                }
                _ => err = Some(Error::Checkpoint(format!("missing optimizer state for {name}"))),
            }
        });
        err.map_or(Ok(adam), Err)
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(params: &mut dyn Params, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    params.visit("", &mut |_, p| {
        if p.trainable {
            sq += p.grad.iter().map(|g| g * g).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        params.visit_mut("", &mut |_, p| {
            if p.trainable {
                p.grad.iter_mut().for_each(|g| *g *= s);
            }
        });
    }
    norm
}
