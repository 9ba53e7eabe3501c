use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::CommonArgs;
use crate::attention::AttentionTrace;
use crate::dsp::{read_wav, stft, ComplexSpectrogram, Waveform};
use crate::error::{Error, Result};
use crate::metrics::{count_macs, erle, segmental_snr};
use crate::model::{enhance_file, Model, ModelConfig};
use crate::nn::gradcheck::GradCheckReport;
use crate::scene::{read_scene_tree, synth_batch, write_scene_dir, Scenario, SceneSpec};
use crate::train::{gradcheck_with, resume, train, Dataset, TrainConfig, TrainReport};

/// Writes `count` scenes (per scenario when `scenario` is `all`) under
/// `out`; returns the scene directories.
pub fn cmd_synth(spec: Option<&Path>, scenario: Option<&str>, out: &Path, count: usize, seed: u64) -> Result<Vec<PathBuf>> {
    let base = match spec {
        Some(p) => SceneSpec::load(p)?,
        None => SceneSpec::default(),
    };
    let jobs: Vec<(Option<Scenario>, SceneSpec)> = match scenario {
        None => vec![(None, base)],
        Some("all") => Scenario::ALL
            .iter()
            .map(|s| (Some(*s), preset(&base, *s)))
            .collect(),
        Some(name) => {
            let s: Scenario = name.parse()?;
            vec![(None, preset(&base, s))]
        }
    };
    let mut dirs = Vec::new();
    for (k, (tag, template)) in jobs.iter().enumerate() {
        for (i, scene) in synth_batch(template, count, seed.wrapping_add(k as u64))?
            .iter()
            .enumerate()
        {
            let name = match tag {
                Some(s) => format!("scene_{s}_{i:03}"),
                None => format!("scene_{i:03}"),
            };
            let dir = out.join(name);
            write_scene_dir(&dir, scene)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}

fn preset(base: &SceneSpec, s: Scenario) -> SceneSpec {
    SceneSpec {
        nonlinearity: base.nonlinearity,
        snr_db: base.snr_db,
        ser_db: base.ser_db,
        segments: base.segments.clone(),
        ..s.spec(base.length)
    }
}

/// Trains (or resumes) and writes the checkpoint, `<out>.csv` and
/// `<out>.spans.csv`.
pub fn cmd_train(
    model_cfg: ModelConfig,
    data_dir: &Path,
    out: &Path,
    mut cfg: TrainConfig,
    resume_run: bool,
) -> Result<TrainReport> {
    let data = Dataset::load_dir(data_dir)?;
    cfg.checkpoint = Some(out.to_path_buf());
    let report = if resume_run {
        resume(out, &data, &cfg)?.1
    } else {
        let mut model = Model::build(model_cfg, cfg.seed)?;
        train(&mut model, &data, &cfg)?
    };
    fs::write(sibling(out, "csv"), report.to_csv())?;
    fs::write(sibling(out, "spans.csv"), report.spans_csv())?;
    Ok(report)
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn cmd_enhance(ckpt: &Path, mic: &Path, reference: Option<&Path>, out: &Path, streaming: bool) -> Result<Waveform> {
    let model = Model::load(ckpt)?;
    enhance_file(&model, mic, reference, out, streaming)
}

fn load_pair(mic: &Path, reference: Option<&Path>) -> Result<(ComplexSpectrogram, ComplexSpectrogram)> {
    let mic = read_wav(mic)?;
    let mic_spec = stft(&mic)?;
    let ref_spec = match reference {
        Some(p) => {
            let mut r = read_wav(p)?;
            r.samples.resize(mic.len(), 0.0);
            stft(&r)?
        }
        None => ComplexSpectrogram::zeros(mic_spec.frames(), mic_spec.bins()),
    };
    Ok((mic_spec, ref_spec))
}

/// Writes `spans.csv` and one `frame<t>_<module>_g<group>.csv` per requested
/// frame, module and group.
pub fn cmd_spans(ckpt: &Path, mic: &Path, reference: Option<&Path>, frames: &[usize], out: &Path) -> Result<AttentionTrace> {
    let model = Model::load(ckpt)?;
    let (m, r) = load_pair(mic, reference)?;
    let (_, trace) = model.forward_traced(&m, &r, frames)?;
    fs::create_dir_all(out)?;
    trace.write_spans_csv(fs::File::create(out.join("spans.csv"))?)?;
    for module in &trace.modules {
        for (g, group) in module.groups.iter().enumerate() {
            for row in &group.rows {
                let path = out.join(format!("frame{}_{}_g{g}.csv", row.frame, module.name));
                AttentionTrace::write_row_csv(row, fs::File::create(path)?)?;
            }
        }
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub checkpoint: String,
    pub variant: String,
    pub scenes: usize,
    pub erle_db: Option<f64>,
    pub seg_snr_db: Option<f64>,
    pub macs_per_second: f64,
    pub attention_macs_per_second: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates every checkpoint on every scene under `data_dir`, grouped by
/// the scenes' scenario tag. Writes CSV to `out`; returns rows and a text
/// table.
pub fn cmd_report(ckpts: &[PathBuf], data_dir: &Path, out: &Path) -> Result<(Vec<ReportRow>, String)> {
    let scenes = read_scene_tree(data_dir)?;
    let mut rows = Vec::new();
    for ckpt in ckpts {
        let model = Model::load(ckpt)?;
        #[derive(Default)]
        struct Acc {
            erle: Vec<f64>,
            snr: Vec<f64>,
            macs: Vec<f64>,
            attn: Vec<f64>,
            n: usize,
        }
        let mut by: BTreeMap<String, Acc> = BTreeMap::new();
        for scene in &scenes {
            let s = &scene.signals;
            let (m, r) = (stft(&s.mic)?, stft(&s.reference)?);
            let (est, trace) = model.forward_traced(&m, &r, &[])?;
            let est = crate::dsp::istft(&est)?;
            let n = est.len();
            let cut = |w: &Waveform| Waveform::new(w.samples[..n].to_vec());
            let labels = &s.labels[..n];
            let acc = by.entry(scene.spec.scenario.clone()).or_default();
            acc.n += 1;
            if let Ok(e) = erle(&cut(&s.mic), &est, labels) {
                acc.erle.push(e);
            }
            if let Ok(q) = segmental_snr(&cut(&s.near_target), &est, labels) {
                acc.snr.push(q);
            }
            let macs = count_macs(&model, m.frames(), &trace);
            acc.macs.push(macs.macs_per_second());
            acc.attn.push(macs.attention_total() as f64 / macs.seconds());
        }
        for (scenario, acc) in by {
            rows.push(ReportRow {
                scenario,
                checkpoint: ckpt.display().to_string(),
                variant: model.config.variant.to_string(),
                scenes: acc.n,
                erle_db: mean(&acc.erle),
                seg_snr_db: mean(&acc.snr),
                macs_per_second: mean(&acc.macs).unwrap_or(0.0),
                attention_macs_per_second: mean(&acc.attn).unwrap_or(0.0),
            });
        }
    }
    let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| x.to_string());
    let mut csv = String::from("scenario,checkpoint,variant,scenes,erle_db,seg_snr_db,macs_per_second,attention_macs_per_second\n");
    for r in &rows {
        writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.scenario,
            r.checkpoint,
            r.variant,
            r.scenes,
            opt(r.erle_db),
            opt(r.seg_snr_db),
            r.macs_per_second,
            r.attention_macs_per_second
        )
        .expect("string write");
    }
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(out, csv)?;
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let mut table = format!(
        "{:<24} {:<14} {:>6} {:>10} {:>12} {:>10} {:>10}\n",
        "scenario", "variant", "scenes", "ERLE dB", "segSNR dB", "MMAC/s", "attn MMAC/s"
    );
    for r in &rows {
        writeln!(
            table,
            "{:<24} {:<14} {:>6} {:>10} {:>12} {:>10.2} {:>10.2}",
            r.scenario,
            r.variant,
            r.scenes,
            cell(r.erle_db),
            cell(r.seg_snr_db),
            r.macs_per_second / 1e6,
            r.attention_macs_per_second / 1e6
        )
        .expect("string write");
    }
    if rows.is_empty() {
        return Err(Error::Metric("nothing to report".into()));
    }
    Ok((rows, table))
}

/// Gradient check on the tiny configuration of the requested variant.
pub fn cmd_gradcheck(common: &CommonArgs) -> Result<GradCheckReport> {
    let full = common.model_config()?;
    let mut cfg = ModelConfig::tiny(full.variant);
    if common.tw.is_some() {
        cfg.max_span = full.max_span;
    }
    cfg.ramp = full.ramp;
    gradcheck_with(cfg, common.seed.unwrap_or(0), &Default::default())
}
