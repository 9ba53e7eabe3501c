//! Checkpoints: a flat file of little-endian `f64` values plus a text
//! manifest (`<path>.manifest`) listing metadata and, per tensor, its name,
//! shape and element offset.
//!
//! ```text
//! # dynspan checkpoint v1
//! meta variant = all_das
//! tensor enc_mic.0.conv.weight 16,2,3 0
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::Params;
use crate::error::{Error, Result};
use crate::kv::KvConfig;

const MAGIC: &str = "# dynspan checkpoint v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: KvConfig,
    pub tensors: Vec<Tensor>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

impl Checkpoint {
    pub fn from_params(params: &dyn Params, meta: KvConfig) -> Self {
        let mut tensors = Vec::new();
        params.visit("", &mut |name, p| {
            tensors.push(Tensor {
                name,
                shape: p.shape.clone(),
                values: p.value.clone(),
            })
        });
        Self { meta, tensors }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: &[usize], values: Vec<f64>) {
        self.tensors.push(Tensor {
            name: name.into(),
            shape: shape.to_vec(),
            values,
        });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Copy every parameter of `params` from this checkpoint; names and
    /// shapes must match.
    pub fn load_into(&self, params: &mut dyn Params) -> Result<()> {
        let mut err = None;
        params.visit_mut("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.get(&name) {
                Some(t) if t.shape == p.shape => p.value.copy_from_slice(&t.values),
                Some(t) => {
                    err = Some(Error::Checkpoint(format!(
                        "{name}: shape {:?} in checkpoint, model expects {:?}",
                        t.shape, p.shape
                    )))
                }
                None => err = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut manifest = String::from(MAGIC);
        manifest.push('\n');
        for line in self.meta.to_text().lines() {
            writeln!(manifest, "meta {line}").expect("string write");
        }
        let mut bytes = Vec::new();
        let mut offset = 0usize;
        for t in &self.tensors {
            let shape: Vec<String> = t.shape.iter().map(|d| d.to_string()).collect();
            writeln!(manifest, "tensor {} {} {offset}", t.name, shape.join(",")).expect("string write");
            for v in &t.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            offset += t.values.len();
        }
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        fs::write(path, bytes)?;
        fs::write(manifest_path(path), manifest)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::Checkpoint(format!("{}: {msg}", path.display()));
        let manifest = fs::read_to_string(manifest_path(path))
            .map_err(|e| bad(format!("cannot read manifest: {e}")))?;
        let bytes = fs::read(path).map_err(|e| bad(format!("cannot read data: {e}")))?;
        if bytes.len() % 8 != 0 {
            return Err(bad("data length is not a multiple of 8".into()));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mut lines = manifest.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("missing manifest header".into()));
        }
        let mut meta_text = String::new();
        let mut tensors = Vec::new();
        for line in lines {
            if let Some(m) = line.strip_prefix("meta ") {
                meta_text.push_str(m);
                meta_text.push('\n');
            } else if let Some(t) = line.strip_prefix("tensor ") {
                let parts: Vec<&str> = t.split_whitespace().collect();
                let [name, shape, offset] = parts[..] else {
                    return Err(bad(format!("malformed tensor line `{line}`")));
                };
                let shape: Vec<usize> = if shape.is_empty() {
                    Vec::new()
                } else {
                    shape
                        .split(',')
                        .map(|d| d.parse().map_err(|_| bad(format!("bad shape in `{line}`"))))
                        .collect::<Result<_>>()?
                };
                let offset: usize = offset
                    .parse()
                    .map_err(|_| bad(format!("bad offset in `{line}`")))?;
                let len: usize = shape.iter().product();
                let values = data
                    .get(offset..offset + len)
                    .ok_or_else(|| bad(format!("tensor {name} runs past end of data")))?
                    .to_vec();
                tensors.push(Tensor {
                    name: name.to_string(),
                    shape,
                    values,
                });
            } else if !line.trim().is_empty() {
                return Err(bad(format!("unexpected manifest line `{line}`")));
            }
        }
        Ok(Self {
            meta: KvConfig::parse(&meta_text)?,
            tensors,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut meta = KvConfig::default();
        meta.set("variant", "all_das");
        let mut ck = Checkpoint {
            meta,
            tensors: Vec::new(),
        };
        ck.push("a.weight", &[2, 3], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25, 3.0]);
        ck.push("b", &[1], vec![std::f64::consts::PI]);
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.meta.get("variant"), Some("all_das"));
        for (a, b) in ck.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let bits_a: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
        let manifest = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.contains("tensor b 1 6"));
    }

    #[test]
    fn missing_files_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Checkpoint::load(dir.path().join("none")).is_err());
    }
}
