use ndarray::Array3;

use crate::dsp::ComplexSpectrogram;
use crate::error::{Error, Result};

/// Relative weights of the two loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub complex: f64,
    pub magnitude: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            complex: 1.0,
            magnitude: 1.0,
        }
    }
}

/// `mean |est − tgt|² + mean (|est| − |tgt|)²` over all time-frequency bins.
pub fn loss(est: &ComplexSpectrogram, target: &ComplexSpectrogram) -> Result<f64> {
    Ok(loss_and_grad(est, target, LossWeights::default())?.0)
}

/// Loss and its gradient with respect to `est`. The magnitude term's
/// gradient is taken as zero where `|est| = 0`.
pub fn loss_and_grad(
    est: &ComplexSpectrogram,
    target: &ComplexSpectrogram,
    w: LossWeights,
) -> Result<(f64, Array3<f64>)> {
    if est.data.dim() != target.data.dim() {
        return Err(Error::Shape(format!(
            "estimate is {:?} but target is {:?}",
            est.data.dim(),
            target.data.dim()
        )));
    }
    let (_, frames, bins) = est.data.dim();
    let n = (frames * bins) as f64;
    let mut grad = Array3::zeros(est.data.dim());
    let (mut lc, mut lm) = (0.0, 0.0);
    for t in 0..frames {
        for f in 0..bins {
            let (er, ei) = (est.data[[0, t, f]], est.data[[1, t, f]]);
            let (tr, ti) = (target.data[[0, t, f]], target.data[[1, t, f]]);
            let (dr, di) = (er - tr, ei - ti);
            lc += dr * dr + di * di;
            let me = er.hypot(ei);
            let dm = me - tr.hypot(ti);
            lm += dm * dm;
            let mut gr = 2.0 * w.complex * dr / n;
            let mut gi = 2.0 * w.complex * di / n;
            if me > 0.0 {
                gr += 2.0 * w.magnitude * dm * er / me / n;
                gi += 2.0 * w.magnitude * dm * ei / me / n;
            }
            grad[[0, t, f]] = gr;
            grad[[1, t, f]] = gi;
        }
    }
    Ok((w.complex * lc / n + w.magnitude * lm / n, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random(seed: u64) -> ComplexSpectrogram {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        ComplexSpectrogram::from_array(Array3::from_shape_simple_fn((2, 5, 7), || StandardNormal.sample(&mut r)))
            .unwrap()
    }

    #[test]
    fn identical_inputs_give_zero() {
        let a = random(1);
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
        assert!(loss(&a, &random(2)).unwrap() > 0.0);
    }

    #[test]
    fn zero_estimate_matches_direct_sums() {
        let t = random(3);
        let zero = ComplexSpectrogram::zeros(5, 7);
        let mut power = 0.0;
        let mut mag2 = 0.0;
        for i in 0..5 {
            for f in 0..7 {
                let p = t.data[[0, i, f]].powi(2) + t.data[[1, i, f]].powi(2);
                power += p;
                mag2 += p.sqrt().powi(2);
            }
        }
        let want = power / 35.0 + mag2 / 35.0;
        assert!((loss(&zero, &t).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (e, t) = (random(4), random(5));
        let (_, g) = loss_and_grad(&e, &t, LossWeights::default()).unwrap();
        let eps = 1e-5;
        for idx in [[0, 0, 0], [1, 2, 3], [0, 4, 6], [1, 1, 5]] {
            let mut p = e.clone();
            p.data[idx] += eps;
            let mut m = e.clone();
            m.data[idx] -= eps;
            let num = (loss(&p, &t).unwrap() - loss(&m, &t).unwrap()) / (2.0 * eps);
            let rel = (num - g[idx]).abs() / num.abs().max(g[idx].abs()).max(1e-6);
            assert!(rel < 1e-6, "{idx:?}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        assert!(loss(&random(1), &ComplexSpectrogram::zeros(5, 6)).is_err());
    }
}
