use std::path::Path;

use super::{Label, Nonlinearity, RirSpec, Scenario, SceneSpec, Segment};
use crate::error::{Error, Result};
use crate::kv::KvConfig;

const KEYS: &[&str] = &[
    "scenario",
    "length",
    "delay",
    "rir_near",
    "rir_echo",
    "nonlinearity",
    "snr_db",
    "ser_db",
    "segments",
];

fn bad(key: &str, v: &str) -> Error {
    Error::Scene(format!("bad value `{v}` for `{key}`"))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(key, v))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|p| !p.is_empty())
}

fn parse_rir(key: &str, v: &str) -> Result<RirSpec> {
    let v = v.trim();
    if v == "impulse" {
        return Ok(RirSpec::Impulse);
    }
    if let Some(rt) = v.strip_prefix("synthetic:") {
        return Ok(RirSpec::Synthetic {
            rt60_ms: num(key, rt)?,
        });
    }
    if let Some(taps) = v.strip_prefix("taps:") {
        let taps = taps
            .split_whitespace()
            .map(|t| num(key, t))
            .collect::<Result<Vec<f64>>>()?;
        return Ok(RirSpec::Taps(taps));
    }
    Err(bad(key, v))
}

fn fmt_rir(r: &RirSpec) -> String {
    match r {
        RirSpec::Impulse => "impulse".into(),
        RirSpec::Synthetic { rt60_ms } => format!("synthetic:{rt60_ms}"),
        RirSpec::Taps(t) => {
            let taps: Vec<String> = t.iter().map(|v| v.to_string()).collect();
            format!("taps:{}", taps.join(" "))
        }
    }
}

fn parse_nonlinearity(v: &str) -> Result<Nonlinearity> {
    let v = v.trim();
    match v.split_once(':') {
        None if v == "identity" => Ok(Nonlinearity::Identity),
        Some(("hard_clip", t)) => Ok(Nonlinearity::HardClip(num("nonlinearity", t)?)),
        Some(("scaled_tanh", g)) => Ok(Nonlinearity::ScaledTanh(num("nonlinearity", g)?)),
        _ => Err(bad("nonlinearity", v)),
    }
}

impl SceneSpec {
    /// Parse a scene config. A `scenario` key selects a preset which the
    /// remaining keys then override.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        cfg.reject_unknown(KEYS)?;
        let length = match cfg.get("length") {
            Some(v) => num("length", v)?,
            None => SceneSpec::default().length,
        };
        let mut spec = match cfg.get("scenario") {
            Some(v) => match v.parse::<Scenario>() {
                Ok(sc) => sc.spec(length),
                Err(_) => SceneSpec {
                    length,
                    scenario: v.to_string(),
                    ..SceneSpec::default()
                },
            },
            None => SceneSpec {
                length,
                ..SceneSpec::default()
            },
        };
        if let Some(v) = cfg.get("delay") {
            spec.delay_schedule = list(v)
                .map(|p| {
                    let (s, d) = p.split_once(':').ok_or_else(|| bad("delay", p))?;
                    Ok((num("delay", s)?, num("delay", d)?))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = cfg.get("rir_near") {
            spec.rir_near = parse_rir("rir_near", v)?;
        }
        if let Some(v) = cfg.get("rir_echo") {
            spec.rir_echo_schedule = list(v)
                .map(|p| {
                    let (s, r) = p.split_once(':').ok_or_else(|| bad("rir_echo", p))?;
                    Ok((num("rir_echo", s)?, parse_rir("rir_echo", r)?))
                })
                .collect::<Result<_>>()?;
        }
        if let Some(v) = cfg.get("nonlinearity") {
            spec.nonlinearity = parse_nonlinearity(v)?;
        }
        if let Some(v) = cfg.parse_key("snr_db")? {
            spec.snr_db = v;
        }
        if let Some(v) = cfg.parse_key("ser_db")? {
            spec.ser_db = v;
        }
        if let Some(v) = cfg.get("segments") {
            spec.segments = list(v)
                .map(|p| {
                    let parts: Vec<&str> = p.split(':').collect();
                    let [s, e, l] = parts[..] else {
                        return Err(bad("segments", p));
                    };
                    Ok(Segment {
                        start: num("segments", s)?,
                        end: num("segments", e)?,
                        label: l.parse::<Label>()?,
                    })
                })
                .collect::<Result<_>>()?;
        }
        spec.validate(spec.length)?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut cfg = KvConfig::default();
        cfg.set("scenario", &self.scenario);
        cfg.set("length", self.length);
        let delays: Vec<String> = self
            .delay_schedule
            .iter()
            .map(|(s, d)| format!("{s}:{d}"))
            .collect();
        cfg.set("delay", delays.join(", "));
        cfg.set("rir_near", fmt_rir(&self.rir_near));
        let rirs: Vec<String> = self
            .rir_echo_schedule
            .iter()
            .map(|(s, r)| format!("{s}:{}", fmt_rir(r)))
            .collect();
        cfg.set("rir_echo", rirs.join(", "));
        cfg.set(
            "nonlinearity",
            match self.nonlinearity {
                Nonlinearity::Identity => "identity".to_string(),
                Nonlinearity::HardClip(t) => format!("hard_clip:{t}"),
                Nonlinearity::ScaledTanh(g) => format!("scaled_tanh:{g}"),
            },
        );
        cfg.set("snr_db", self.snr_db);
        cfg.set("ser_db", self.ser_db);
        let segs: Vec<String> = self
            .segments
            .iter()
            .map(|s| format!("{}:{}:{}", s.start, s.end, s.label))
            .collect();
        cfg.set("segments", segs.join(", "));
        cfg
    }
}
