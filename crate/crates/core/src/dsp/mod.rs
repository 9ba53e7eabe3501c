//! Short-time Fourier analysis/synthesis and WAV I/O at 16 kHz.
//!
//! Frames are 320 samples (20 ms) with a 160-sample hop (10 ms) and a
//! 320-point DFT, giving 161 retained bins. The first frame starts at
//! sample 0 and there is no center padding, so frame `t` covers samples
//! `[160 t, 160 t + 320)` and is available as soon as its last sample is.

mod wav;

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{s, Array2, Array3, ArrayView2};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub use wav::{read_wav, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW_LEN: usize = 320;
pub const HOP: usize = 160;
pub const DFT_SIZE: usize = 320;
pub const NUM_BINS: usize = DFT_SIZE / 2 + 1;

/// Floor applied to the summed squared window during synthesis.
pub const WINDOW_SUM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.samples.iter().all(|x| x.is_finite())
    }

    /// Number of samples covered by complete analysis frames.
    pub fn analyzable_len(&self) -> usize {
        match num_frames(self.len()) {
            0 => 0,
            t => WINDOW_LEN + HOP * (t - 1),
        }
    }
}

/// Complex spectrogram stored as a `2 × T × F` tensor: channel 0 holds the
/// real part and channel 1 the imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array3<f64>,
    pub frame_hop: usize,
    pub window_len: usize,
    pub dft_size: usize,
}

impl ComplexSpectrogram {
    /// Wrap a `2 × T × F` tensor using the standard framing.
    pub fn from_array(data: Array3<f64>) -> Result<Self> {
        let bins = data.shape()[2];
        if data.shape()[0] != 2 || bins < 2 {
            return Err(Error::Shape(format!(
                "spectrogram must be 2 x T x F with F >= 2, got {:?}",
                data.shape()
            )));
        }
        Ok(Self {
            data,
            frame_hop: HOP,
            window_len: WINDOW_LEN,
            dft_size: 2 * (bins - 1),
        })
    }

    pub fn zeros(frames: usize, bins: usize) -> Self {
        Self {
            data: Array3::zeros((2, frames, bins)),
            frame_hop: HOP,
            window_len: WINDOW_LEN,
            dft_size: 2 * (bins - 1),
        }
    }

    pub fn frames(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn bins(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Copy of a single frame as a `2 × F` array.
    pub fn frame(&self, t: usize) -> Array2<f64> {
        self.data.slice(s![.., t, ..]).to_owned()
    }

    /// Magnitude `|X[t, f]|` as a `T × F` array.
    pub fn magnitude(&self) -> Array2<f64> {
        let re = self.data.slice(s![0, .., ..]);
        let im = self.data.slice(s![1, .., ..]);
        let mut out = Array2::zeros(re.raw_dim());
        ndarray::Zip::from(&mut out)
            .and(&re)
            .and(&im)
            .for_each(|o, &r, &i| *o = r.hypot(i));
        out
    }

    /// Stack `2 × F` frames into a spectrogram.
    pub fn from_frames(frames: &[ArrayView2<'_, f64>]) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::EmptySpectrogram);
        };
        let bins = first.shape()[1];
        let mut data = Array3::zeros((2, frames.len(), bins));
        for (t, fr) in frames.iter().enumerate() {
            if fr.shape() != [2, bins] {
                return Err(Error::Shape(format!(
                    "frame {t} has shape {:?}, expected [2, {bins}]",
                    fr.shape()
                )));
            }
            data.slice_mut(s![.., t, ..]).assign(fr);
        }
        Self::from_array(data)
    }
}

/// Periodic (DFT-even) Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// `1 + floor((len - 320) / 160)`, or 0 when shorter than one window.
pub fn num_frames(len: usize) -> usize {
    if len < WINDOW_LEN {
        0
    } else {
        1 + (len - WINDOW_LEN) / HOP
    }
}

fn plan(inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut planner = FftPlanner::new();
    if inverse {
        planner.plan_fft_inverse(DFT_SIZE)
    } else {
        planner.plan_fft_forward(DFT_SIZE)
    }
}

pub fn stft(w: &Waveform) -> Result<ComplexSpectrogram> {
    let frames = num_frames(w.len());
    if frames == 0 {
        return Err(Error::InputTooShort {
            len: w.len(),
            need: WINDOW_LEN,
        });
    }
    let window = hann_window(WINDOW_LEN);
    let fft = plan(false);
    let mut data = Array3::zeros((2, frames, NUM_BINS));
    let mut buf = vec![Complex::new(0.0, 0.0); DFT_SIZE];
    for t in 0..frames {
        let start = t * HOP;
        for (n, slot) in buf.iter_mut().enumerate() {
            *slot = Complex::new(w.samples[start + n] * window[n], 0.0);
        }
        fft.process(&mut buf);
        for (f, c) in buf.iter().take(NUM_BINS).enumerate() {
            data[[0, t, f]] = c.re;
            data[[1, t, f]] = c.im;
        }
    }
    Ok(ComplexSpectrogram {
        data,
        frame_hop: HOP,
        window_len: WINDOW_LEN,
        dft_size: DFT_SIZE,
    })
}

/// Weighted overlap-add synthesis, normalized by the summed squared window.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Waveform> {
    let frames = spec.frames();
    if frames == 0 {
        return Err(Error::EmptySpectrogram);
    }
    if spec.bins() != NUM_BINS {
        return Err(Error::Shape(format!(
            "istft expects {NUM_BINS} bins, got {}",
            spec.bins()
        )));
    }
    let window = hann_window(WINDOW_LEN);
    let ifft = plan(true);
    let len = WINDOW_LEN + HOP * (frames - 1);
    let mut out = vec![0.0; len];
    let mut wsum = vec![0.0; len];
    let mut buf = vec![Complex::new(0.0, 0.0); DFT_SIZE];
    for t in 0..frames {
        for f in 0..NUM_BINS {
            buf[f] = Complex::new(spec.data[[0, t, f]], spec.data[[1, t, f]]);
        }
        // Hermitian extension; DC and Nyquist imaginary parts are dropped.
        buf[0].im = 0.0;
        buf[DFT_SIZE / 2].im = 0.0;
        for f in 1..DFT_SIZE / 2 {
            buf[DFT_SIZE - f] = buf[f].conj();
        }
        ifft.process(&mut buf);
        let start = t * HOP;
        for n in 0..WINDOW_LEN {
            let x = buf[n].re / DFT_SIZE as f64;
            out[start + n] += window[n] * x;
            wsum[start + n] += window[n] * window[n];
        }
    }
    for (o, ws) in out.iter_mut().zip(&wsum) {
        *o /= ws.max(WINDOW_SUM_FLOOR);
    }
    Ok(Waveform::new(out))
}
