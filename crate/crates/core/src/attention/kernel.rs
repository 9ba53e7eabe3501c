//! Masked scaled dot-product attention over a causal window of past frames.

use std::ops::Range;

use ndarray::Array2;

use super::das::{effective_span, mask_at_lag, on_ramp};
use crate::error::{Error, Result};
use crate::nn::tensor::{axpy, dot};

/// Softmax restricted to keys with a nonzero mask.
///
/// Returns `a_i = m_i exp(s_i) / Σ_j m_j exp(s_j)`. Masked keys are never
/// exponentiated and receive exactly zero weight.
pub fn masked_softmax(scores: &[f64], masks: &[f64]) -> Result<Vec<f64>> {
    if scores.len() != masks.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} masks",
            scores.len(),
            masks.len()
        )));
    }
    if masks.iter().any(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::Shape("masks must lie in [0, 1]".into()));
    }
    softmax_inner(scores, masks)
}

fn softmax_inner(scores: &[f64], masks: &[f64]) -> Result<Vec<f64>> {
    let mut top = f64::NEG_INFINITY;
    for (s, m) in scores.iter().zip(masks) {
        if *m > 0.0 && *s > top {
            top = *s;
        }
    }
    if top == f64::NEG_INFINITY {
        return Err(Error::AllMasked);
    }
    let mut out: Vec<f64> = scores
        .iter()
        .zip(masks)
        .map(|(s, m)| if *m > 0.0 { m * (s - top).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    for a in &mut out {
        *a /= total;
    }
    Ok(out)
}

/// Window geometry shared by every attention module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Window {
    pub max_span: usize,
    pub ramp: f64,
}

/// Everything a row's backward pass needs, indexed by lag `0..n_keys`.
#[derive(Debug, Clone)]
pub struct RowCache {
    pub z: Option<f64>,
    pub masks: Vec<f64>,
    pub scores: Vec<f64>,
    pub weights: Vec<f64>,
}

impl RowCache {
    pub fn n_keys(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn kinks(&self, ramp: f64, h: &mut impl std::hash::Hasher) {
        use std::hash::Hash;
        self.n_keys().hash(h);
        if let Some(z) = self.z {
            for lag in 0..self.n_keys() {
                on_ramp(z, lag, ramp).hash(h);
            }
        }
    }
}

impl Window {
    pub fn n_keys(&self, z: Option<f64>, t: usize) -> usize {
        match z {
            Some(z) => effective_span(z, self.ramp, self.max_span, t),
            None => self.max_span.min(t + 1),
        }
    }

    /// Attend from `q` to keys ordered by lag (`keys[0]` is the current
    /// frame). `keys.len()` must equal [`Window::n_keys`].
    pub fn attend(
        &self,
        q: &[f64],
        keys: &[&[f64]],
        values: &[&[f64]],
        z: Option<f64>,
        scale: f64,
        out: &mut [f64],
    ) -> Result<RowCache> {
        let n = keys.len();
        let masks: Vec<f64> = match z {
            Some(z) => (0..n).map(|lag| mask_at_lag(z, lag, self.ramp)).collect(),
            None => vec![1.0; n],
        };
        let scores: Vec<f64> = keys.iter().map(|k| dot(q, k) * scale).collect();
        let weights = softmax_inner(&scores, &masks)?;
        out.fill(0.0);
        for (w, v) in weights.iter().zip(values) {
            if *w != 0.0 {
                axpy(*w, v, out);
            }
        }
        Ok(RowCache {
            z,
            masks,
            scores,
            weights,
        })
    }

    /// Causal attention for one group over a whole sequence. `q`, `k`, `v`
    /// and `out` are `T × C'` row matrices; only `cols` are touched.
    #[allow(clippy::too_many_arguments)]
    pub fn forward_seq(
        &self,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
        cols: Range<usize>,
        z: Option<&[f64]>,
        scale: f64,
        out: &mut Array2<f64>,
    ) -> Result<Vec<RowCache>> {
        let frames = q.nrows();
        let qs = q.as_slice().expect("standard layout");
        let ks = k.as_slice().expect("standard layout");
        let vs = v.as_slice().expect("standard layout");
        let width = q.ncols();
        let at = |t: usize| t * width + cols.start..t * width + cols.end;
        let mut rows = Vec::with_capacity(frames);
        let mut buf = vec![0.0; cols.len()];
        for t in 0..frames {
            let zt = z.map(|z| z[t]);
            let n = self.n_keys(zt, t);
            let keys: Vec<&[f64]> = (0..n).map(|lag| &ks[at(t - lag)]).collect();
            let values: Vec<&[f64]> = (0..n).map(|lag| &vs[at(t - lag)]).collect();
            let cache = self.attend(&qs[at(t)], &keys, &values, zt, scale, &mut buf)?;
            out.row_mut(t)
                .as_slice_mut()
                .expect("standard layout")[cols.clone()]
                .copy_from_slice(&buf);
            rows.push(cache);
        }
        Ok(rows)
    }

    /// Backward of [`Window::forward_seq`]. Accumulates into `dq`, `dk`,
    /// `dv` and returns `dL/dz_t` per frame (zero without a span head).
    #[allow(clippy::too_many_arguments)]
    pub fn backward_seq(
        &self,
        q: &Array2<f64>,
        k: &Array2<f64>,
        v: &Array2<f64>,
        cols: Range<usize>,
        rows: &[RowCache],
        scale: f64,
        dout: &Array2<f64>,
        dq: &mut Array2<f64>,
        dk: &mut Array2<f64>,
        dv: &mut Array2<f64>,
    ) -> Vec<f64> {
        let width = q.ncols();
        let at = |t: usize| t * width + cols.start..t * width + cols.end;
        let qs = q.as_slice().expect("standard layout");
        let ks = k.as_slice().expect("standard layout");
        let vs = v.as_slice().expect("standard layout");
        let dos = dout.as_slice().expect("standard layout");
        let dqs = dq.as_slice_mut().expect("standard layout");
        let dks = dk.as_slice_mut().expect("standard layout");
        let dvs = dv.as_slice_mut().expect("standard layout");
        let mut dz = vec![0.0; rows.len()];
        for (t, cache) in rows.iter().enumerate() {
            let g = &dos[at(t)];
            let n = cache.n_keys();
            let da: Vec<f64> = (0..n).map(|lag| dot(g, &vs[at(t - lag)])).collect();
            for lag in 0..n {
                let w = cache.weights[lag];
                if w != 0.0 {
                    axpy(w, g, &mut dvs[at(t - lag)]);
                }
            }
            let mean: f64 = cache.weights.iter().zip(&da).map(|(a, d)| a * d).sum();
            for lag in 0..n {
                let ds = cache.weights[lag] * (da[lag] - mean);
                if ds != 0.0 {
                    axpy(ds * scale, &ks[at(t - lag)], &mut dqs[at(t)]);
                    axpy(ds * scale, &qs[at(t)], &mut dks[at(t - lag)]);
                }
            }
            if let Some(z) = cache.z {
                let mut acc = 0.0;
                for lag in 0..n {
                    if on_ramp(z, lag, self.ramp) {
                        let m = cache.masks[lag];
                        acc += cache.weights[lag] / m * (da[lag] - mean) / self.ramp;
                    }
                }
                dz[t] = acc;
            }
        }
        dz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_example() {
        let a = masked_softmax(&[0.0, 0.0, 0.0], &[1.0, 0.5, 0.0]).unwrap();
        assert!((a[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((a[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(a[2], 0.0);
    }

    #[test]
    fn masked_key_is_never_exponentiated() {
        let a = masked_softmax(&[0.0, 1e308 * 10.0], &[1.0, 0.0]).unwrap();
        assert_eq!(a, vec![1.0, 0.0]);
        let b = masked_softmax(&[1000.0, -1000.0], &[1.0, 1.0]).unwrap();
        assert!(b.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn all_masked_is_an_error() {
        assert!(matches!(
            masked_softmax(&[1.0, 2.0], &[0.0, 0.0]),
            Err(Error::AllMasked)
        ));
        assert!(masked_softmax(&[1.0], &[1.0, 0.0]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(
            pairs in proptest::collection::vec((-50.0f64..50.0, 0.0f64..1.0), 1..40)
        ) {
            let (s, mut m): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            m[0] = m[0].max(0.1);
            let a = masked_softmax(&s, &m).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (ai, mi) in a.iter().zip(&m) {
                prop_assert!(*ai >= 0.0);
                if *mi == 0.0 {
                    prop_assert_eq!(*ai, 0.0);
                }
            }
        }

        #[test]
        fn saturated_mask_matches_plain_softmax(s in proptest::collection::vec(-20.0f64..20.0, 1..30)) {
            let a = masked_softmax(&s, &vec![1.0; s.len()]).unwrap();
            let e: Vec<f64> = s.iter().map(|x| x.exp()).collect();
            let total: f64 = e.iter().sum();
            for (ai, ei) in a.iter().zip(&e) {
                prop_assert!((ai - ei / total).abs() < 1e-12);
            }
        }
    }
}
