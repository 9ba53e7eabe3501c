//! Echo suppression, speech quality proxy and compute accounting.

mod macs;

pub use macs::{count_macs, AttentionMacs, MacReport};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::scene::Label;

pub const ERLE_CAP_DB: f64 = 80.0;
pub const ERLE_FLOOR: f64 = 1e-10;
/// 20 ms at 16 kHz.
pub const SEGMENT_LEN: usize = 320;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;

fn check_lengths(a: &Waveform, b: &Waveform, labels: &[Label]) -> Result<()> {
    if a.len() != b.len() || a.len() != labels.len() {
        return Err(Error::Metric(format!(
            "lengths differ: {}, {} and {} labels",
            a.len(),
            b.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// `10 log10(Σ mic² / Σ est²)` over far-end-only samples, capped at 80 dB.
pub fn erle(mic: &Waveform, est: &Waveform, labels: &[Label]) -> Result<f64> {
    check_lengths(mic, est, labels)?;
    let (mut num, mut den, mut any) = (0.0, 0.0, false);
    for ((m, e), l) in mic.samples.iter().zip(&est.samples).zip(labels) {
        if *l == Label::Fst {
            num += m * m;
            den += e * e;
            any = true;
        }
    }
    if !any {
        return Err(Error::Metric("no far-end single-talk samples for ERLE".into()));
    }
    Ok((10.0 * (num / den.max(ERLE_FLOOR)).log10()).min(ERLE_CAP_DB))
}

/// Mean over 20 ms segments whose samples all contain near-end speech of
/// `10 log10(Σ tgt² / Σ (tgt − est)²)`, each clamped to [−10, 35] dB.
pub fn segmental_snr(target: &Waveform, est: &Waveform, labels: &[Label]) -> Result<f64> {
    check_lengths(target, est, labels)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for start in (0..target.len()).step_by(SEGMENT_LEN) {
        let end = start + SEGMENT_LEN;
        if end > target.len() || !labels[start..end].iter().all(|l| l.near_active()) {
            continue;
        }
        let (mut sig, mut err) = (0.0, 0.0);
        for i in start..end {
            let t = target.samples[i];
            let d = t - est.samples[i];
            sig += t * t;
            err += d * d;
        }
        let db = if err == 0.0 {
            SEG_SNR_MAX_DB
        } else if sig == 0.0 {
            SEG_SNR_MIN_DB
        } else {
            (10.0 * (sig / err).log10()).clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        };
        sum += db;
        count += 1;
    }
    if count == 0 {
        return Err(Error::Metric("no near-end segments for segmental SNR".into()));
    }
    Ok(sum / count as f64)
}
