//! Bounded complex ratio mask `M · tanh(|M|) / |M|` applied to the
//! microphone spectrum.

use ndarray::{Array3, ArrayView3};

/// Below this magnitude the gain and its derivative use their Taylor series.
const SERIES_BELOW: f64 = 1e-4;

/// `g(ρ) = tanh(ρ)/ρ` and `g'(ρ)/ρ`.
fn gain(rho: f64) -> (f64, f64) {
    if rho < SERIES_BELOW {
        let r2 = rho * rho;
        (1.0 - r2 / 3.0, -2.0 / 3.0 + 8.0 * r2 / 15.0)
    } else {
        let th = rho.tanh();
        let g = th / rho;
        let dg = ((1.0 - th * th) * rho - th) / (rho * rho);
        (g, dg / rho)
    }
}

/// `raw` is `2 × T × U`, `mic` is `2 × T × F` with `F ≥ U`; bins `U..F` of
/// the estimate are zero.
pub(crate) fn apply(raw: &Array3<f64>, mic: ArrayView3<'_, f64>) -> Array3<f64> {
    let (_, frames, usable) = raw.dim();
    let mut est = Array3::zeros(mic.dim());
    for t in 0..frames {
        for f in 0..usable {
            let (mr, mi) = (raw[[0, t, f]], raw[[1, t, f]]);
            let (g, _) = gain(mr.hypot(mi));
            let (br, bi) = (g * mr, g * mi);
            let (yr, yi) = (mic[[0, t, f]], mic[[1, t, f]]);
            est[[0, t, f]] = br * yr - bi * yi;
            est[[1, t, f]] = br * yi + bi * yr;
        }
    }
    est
}

/// Gradient with respect to `raw` given the gradient of the estimate.
pub(crate) fn backward(raw: &Array3<f64>, mic: ArrayView3<'_, f64>, d_est: &Array3<f64>) -> Array3<f64> {
    let (_, frames, usable) = raw.dim();
    let mut d_raw = Array3::zeros(raw.dim());
    for t in 0..frames {
        for f in 0..usable {
            let (mr, mi) = (raw[[0, t, f]], raw[[1, t, f]]);
            let (yr, yi) = (mic[[0, t, f]], mic[[1, t, f]]);
            let (dr, di) = (d_est[[0, t, f]], d_est[[1, t, f]]);
            let dbr = dr * yr + di * yi;
            let dbi = -dr * yi + di * yr;
            let (g, dg_over_rho) = gain(mr.hypot(mi));
            let proj = dg_over_rho * (mr * dbr + mi * dbi);
            d_raw[[0, t, f]] = g * dbr + proj * mr;
            d_raw[[1, t, f]] = g * dbi + proj * mi;
        }
    }
    d_raw
}
