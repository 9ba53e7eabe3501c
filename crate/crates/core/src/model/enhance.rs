use std::path::Path;

use ndarray::Axis;

use super::Model;
use crate::dsp::{istft, read_wav, stft, write_wav, ComplexSpectrogram, Waveform};
use crate::error::Result;

/// Enhances `mic` given the far-end `reference`; without a reference the
/// reference encoder sees zeros (noise suppression only). The output has the
/// analyzable length of `mic`.
pub fn enhance(model: &Model, mic: &Waveform, reference: Option<&Waveform>, streaming: bool) -> Result<Waveform> {
    let mic_spec = stft(mic)?;
    let ref_spec = match reference {
        Some(r) => {
            let mut samples = r.samples.clone();
            samples.resize(mic.len(), 0.0);
            stft(&Waveform::new(samples))?
        }
        None => ComplexSpectrogram::zeros(mic_spec.frames(), mic_spec.bins()),
    };
    let est = if streaming {
        let mut state = model.stream_state();
        let frames = (0..mic_spec.frames())
            .map(|t| {
                model.stream_step(
                    &mut state,
                    mic_spec.data.index_axis(Axis(1), t),
                    ref_spec.data.index_axis(Axis(1), t),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        ComplexSpectrogram::from_frames(&views)?
    } else {
        model.forward(&mic_spec, &ref_spec)?
    };
    istft(&est)
}

pub fn enhance_file(
    model: &Model,
    mic: impl AsRef<Path>,
    reference: Option<&Path>,
    out: impl AsRef<Path>,
    streaming: bool,
) -> Result<Waveform> {
    let mic = read_wav(mic)?;
    let reference = reference.map(read_wav).transpose()?;
    let est = enhance(model, &mic, reference.as_ref(), streaming)?;
    write_wav(out, &est)?;
    Ok(est)
}
