use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{DEFAULT_MAX_SPAN, DEFAULT_RAMP};
use crate::dsp::NUM_BINS;
use crate::error::{Error, Result};
use crate::kv::KvConfig;

/// The five ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Encoder outputs concatenated, fixed-span GTSA.
    BaselineCat,
    /// Fixed-span TA merge and GTSA.
    BaselineTa,
    /// Span heads in the TA merge only.
    TaDas,
    /// Span heads in every GTSA module only.
    GtsaDas,
    /// Span heads everywhere.
    AllDas,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::BaselineCat,
        Variant::BaselineTa,
        Variant::TaDas,
        Variant::GtsaDas,
        Variant::AllDas,
    ];

    pub fn has_ta(self) -> bool {
        self != Variant::BaselineCat
    }

    pub fn ta_dynamic(self) -> bool {
        matches!(self, Variant::TaDas | Variant::AllDas)
    }

    pub fn gtsa_dynamic(self) -> bool {
        matches!(self, Variant::GtsaDas | Variant::AllDas)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::BaselineCat => "baseline_cat",
            Variant::BaselineTa => "baseline_ta",
            Variant::TaDas => "ta_das",
            Variant::GtsaDas => "gtsa_das",
            Variant::AllDas => "all_das",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::UnknownVariant(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: usize,
    pub repeated_modules: usize,
    pub gtsa_groups: usize,
    /// Largest attention span `T_w` in frames.
    pub max_span: usize,
    /// Mask ramp length `R` in frames.
    pub ramp: f64,
    /// Spectrogram bins at the input; the top bin is dropped before encoding.
    pub freq_bins: usize,
    /// Power of two, at most 8.
    pub frequency_downsample: usize,
    pub tcm_kernel: usize,
    /// Hidden width of the TCM as a multiple of `channels`.
    pub tcm_expansion: usize,
}

pub(crate) const ENCODER_DEPTH: usize = 3;

impl ModelConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            channels: 16,
            repeated_modules: 4,
            gtsa_groups: 5,
            max_span: DEFAULT_MAX_SPAN,
            ramp: DEFAULT_RAMP,
            freq_bins: NUM_BINS,
            frequency_downsample: 4,
            tcm_kernel: 3,
            tcm_expansion: 2,
        }
    }

    /// A small configuration for gradient checks and fast tests: `C = 4`,
    /// `F' = 10`, `T_w = 10`.
    pub fn tiny(variant: Variant) -> Self {
        Self {
            channels: 4,
            max_span: 10,
            freq_bins: 41,
            ..Self::new(variant)
        }
    }

    pub fn usable_bins(&self) -> usize {
        self.freq_bins - 1
    }

    /// `F'`
    pub fn encoded_bins(&self) -> usize {
        self.usable_bins() / self.frequency_downsample
    }

    /// `C' = C·F'`
    pub fn attention_width(&self) -> usize {
        self.channels * self.encoded_bins()
    }

    pub(crate) fn downsampling_blocks(&self) -> usize {
        self.frequency_downsample.trailing_zeros() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.channels == 0 || self.repeated_modules == 0 || self.gtsa_groups == 0 {
            return bad("channels, repeated_modules and gtsa_groups must be positive".into());
        }
        if self.max_span == 0 {
            return bad("tw must be at least 1".into());
        }
        if !(self.ramp >= 1.0 && self.ramp.is_finite()) {
            return bad(format!("ramp must be at least 1, got {}", self.ramp));
        }
        let ds = self.frequency_downsample;
        if !ds.is_power_of_two() || self.downsampling_blocks() > ENCODER_DEPTH {
            return bad(format!("frequency_downsample must be 1, 2, 4 or 8, got {ds}"));
        }
        if self.freq_bins < 2 || !self.usable_bins().is_multiple_of(ds) {
            return bad(format!(
                "{} usable bins are not divisible by the downsample factor {ds}",
                self.freq_bins.saturating_sub(1)
            ));
        }
        if !self.attention_width().is_multiple_of(self.gtsa_groups) {
            return bad(format!(
                "attention width {} is not divisible into {} groups",
                self.attention_width(),
                self.gtsa_groups
            ));
        }
        if self.tcm_kernel == 0 || self.tcm_expansion == 0 {
            return bad("tcm_kernel and tcm_expansion must be positive".into());
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 10] = [
        "variant",
        "channels",
        "repeated_modules",
        "gtsa_groups",
        "tw",
        "ramp",
        "freq_bins",
        "frequency_downsample",
        "tcm_kernel",
        "tcm_expansion",
    ];

    /// Reads model keys from `kv`, starting from defaults. Keys that do not
    /// belong to the model are ignored.
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let variant = match kv.get("variant") {
            Some(v) => v.parse()?,
            None => Variant::AllDas,
        };
        let mut c = Self::new(variant);
        macro_rules! take {
            ($key:literal, $field:ident) => {
                if let Some(v) = kv.parse_key($key)? {
                    c.$field = v;
                }
            };
        }
        take!("channels", channels);
        take!("repeated_modules", repeated_modules);
        take!("gtsa_groups", gtsa_groups);
        take!("tw", max_span);
        take!("ramp", ramp);
        take!("freq_bins", freq_bins);
        take!("frequency_downsample", frequency_downsample);
        take!("tcm_kernel", tcm_kernel);
        take!("tcm_expansion", tcm_expansion);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_kv(&KvConfig::load(path)?)
    }

    pub fn write_kv(&self, kv: &mut KvConfig) {
        kv.set("variant", self.variant);
        kv.set("channels", self.channels);
        kv.set("repeated_modules", self.repeated_modules);
        kv.set("gtsa_groups", self.gtsa_groups);
        kv.set("tw", self.max_span);
        kv.set("ramp", self.ramp);
        kv.set("freq_bins", self.freq_bins);
        kv.set("frequency_downsample", self.frequency_downsample);
        kv.set("tcm_kernel", self.tcm_kernel);
        kv.set("tcm_expansion", self.tcm_expansion);
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::new(Variant::AllDas)
    }
}
