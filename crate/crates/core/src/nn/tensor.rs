//! Reshapes and small kernels shared by the layers.
//!
//! All reductions accumulate in an order that depends only on the vector
//! length, so a frame computed alone matches the same frame computed inside a
//! longer sequence bit for bit.

use ndarray::{s, Array2, Array3, Axis};

/// `C × T × F` to `T × (C·F)`, flattening channel-major (`c·F + f`).
pub fn to_rows(x: &Array3<f64>) -> Array2<f64> {
    let (c, t, f) = x.dim();
    let mut out = Array2::zeros((t, c * f));
    for ci in 0..c {
        out.slice_mut(s![.., ci * f..(ci + 1) * f])
            .assign(&x.index_axis(Axis(0), ci));
    }
    out
}

/// Inverse of [`to_rows`].
pub fn from_rows(rows: &Array2<f64>, channels: usize) -> Array3<f64> {
    let (t, cf) = rows.dim();
    let f = cf / channels;
    let mut out = Array3::zeros((channels, t, f));
    for ci in 0..channels {
        out.index_axis_mut(Axis(0), ci)
            .assign(&rows.slice(s![.., ci * f..(ci + 1) * f]));
    }
    out
}

pub fn concat_channels(a: &Array3<f64>, b: &Array3<f64>) -> Array3<f64> {
    ndarray::concatenate(Axis(0), &[a.view(), b.view()]).expect("matching T and F")
}

pub fn split_channels(x: &Array3<f64>, first: usize) -> (Array3<f64>, Array3<f64>) {
    (
        x.slice(s![..first, .., ..]).to_owned(),
        x.slice(s![first.., .., ..]).to_owned(),
    )
}

/// Dot product with four interleaved accumulators.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn all_finite(x: &Array3<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub fn max_abs_diff(a: &Array3<f64>, b: &Array3<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
