//! Scene directories: `mic.wav`, `ref.wav`, `target.wav`, `labels.csv`
//! (sample runs `start,end,label`), `spec.txt` and `info.txt`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{label_runs, GeneratedScene, Label, SceneKind, SceneSignals, SceneSpec};
use crate::dsp::{read_wav, write_wav};
use crate::error::{Error, Result};
use crate::kv::KvConfig;

impl SceneKind {
    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Fst => "FST",
            SceneKind::Nst => "NST",
            SceneKind::Dt => "DT",
        }
    }
}

/// A scene read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredScene {
    pub dir: PathBuf,
    pub kind: Option<SceneKind>,
    pub spec: SceneSpec,
    pub signals: SceneSignals,
}

pub fn labels_csv(labels: &[Label]) -> String {
    let mut s = String::from("start,end,label\n");
    for seg in label_runs(labels) {
        writeln!(s, "{},{},{}", seg.start, seg.end, seg.label).expect("string write");
    }
    s
}

pub fn parse_labels_csv(text: &str) -> Result<Vec<Label>> {
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Scene(format!("labels.csv line {}: `{line}`", i + 1));
        let mut parts = line.split(',');
        let (Some(a), Some(b), Some(l), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        let start: usize = a.trim().parse().map_err(|_| bad())?;
        let end: usize = b.trim().parse().map_err(|_| bad())?;
        let label: Label = l.parse()?;
        if start != labels.len() || end <= start {
            return Err(bad());
        }
        labels.resize(end, label);
    }
    Ok(labels)
}

pub fn write_scene_dir(dir: impl AsRef<Path>, scene: &GeneratedScene) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let s = &scene.signals;
    write_wav(dir.join("mic.wav"), &s.mic)?;
    write_wav(dir.join("ref.wav"), &s.reference)?;
    write_wav(dir.join("target.wav"), &s.near_target)?;
    fs::write(dir.join("labels.csv"), labels_csv(&s.labels))?;
    fs::write(dir.join("spec.txt"), scene.spec.to_kv().to_text())?;
    let mut info = KvConfig::default();
    info.set("kind", scene.kind.name());
    info.set("seed", scene.seed);
    fs::write(dir.join("info.txt"), info.to_text())?;
    Ok(())
}

pub fn read_scene_dir(dir: impl AsRef<Path>) -> Result<StoredScene> {
    let dir = dir.as_ref();
    let spec = SceneSpec::load(dir.join("spec.txt"))?;
    let kind = match KvConfig::load(dir.join("info.txt")) {
        Ok(info) => match info.get("kind") {
            Some("FST") => Some(SceneKind::Fst),
            Some("NST") => Some(SceneKind::Nst),
            Some("DT") => Some(SceneKind::Dt),
            _ => None,
        },
        Err(_) => None,
    };
    let mic = read_wav(dir.join("mic.wav"))?;
    let reference = read_wav(dir.join("ref.wav"))?;
    let near_target = read_wav(dir.join("target.wav"))?;
    let labels = parse_labels_csv(&fs::read_to_string(dir.join("labels.csv"))?)?;
    if [reference.len(), near_target.len(), labels.len()] != [mic.len(); 3] {
        return Err(Error::Scene(format!(
            "{}: signal and label lengths differ",
            dir.display()
        )));
    }
    Ok(StoredScene {
        dir: dir.to_path_buf(),
        kind,
        spec,
        signals: SceneSignals {
            mic,
            reference,
            near_target,
            labels,
        },
    })
}

/// Every immediate subdirectory containing `mic.wav`, sorted by name.
pub fn read_scene_tree(root: impl AsRef<Path>) -> Result<Vec<StoredScene>> {
    let root = root.as_ref();
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| Error::Scene(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("mic.wav").is_file())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Scene(format!("no scenes found in {}", root.display())));
    }
    dirs.iter().map(read_scene_dir).collect()
}
