//! Experiment configuration: `key = value` text with desk and full presets.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Variant;
use crate::signal::{FRONTAL_LABELS, TEMPORAL_LABELS};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Small epoch counts for quick local runs.
    Desk,
    /// Epoch and batch settings of the original experiments.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Random,
    Pretrained,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChannelSubset {
    All,
    Temporal,
    Frontal,
    TemporalFrontal,
    Labels(Vec<String>),
}

impl ChannelSubset {
    /// Requested labels, `None` for the full cap.
    pub fn labels(&self) -> Option<Vec<String>> {
        let own = |l: &[&str]| l.iter().map(|s| s.to_string()).collect();
        match self {
            ChannelSubset::All => None,
            ChannelSubset::Temporal => Some(own(&TEMPORAL_LABELS)),
            ChannelSubset::Frontal => Some(own(&FRONTAL_LABELS)),
            ChannelSubset::TemporalFrontal => Some(own(&[&TEMPORAL_LABELS[..], &FRONTAL_LABELS[..]].concat())),
            ChannelSubset::Labels(l) => Some(l.clone()),
        }
    }
}

impl FromStr for ChannelSubset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "all" => ChannelSubset::All,
            "temporal" => ChannelSubset::Temporal,
            "frontal" => ChannelSubset::Frontal,
            "temporal+frontal" => ChannelSubset::TemporalFrontal,
            list => {
                let labels: Vec<String> = list.split(',').map(|l| l.trim().to_string()).collect();
                if labels.iter().any(String::is_empty) {
                    return Err(Error::param(format!("bad channel list '{list}'")));
                }
                ChannelSubset::Labels(labels)
            }
        })
    }
}

impl std::fmt::Display for ChannelSubset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ChannelSubset::All => f.write_str("all"),
            ChannelSubset::Temporal => f.write_str("temporal"),
            ChannelSubset::Frontal => f.write_str("frontal"),
            ChannelSubset::TemporalFrontal => f.write_str("temporal+frontal"),
            ChannelSubset::Labels(l) => f.write_str(&l.join(",")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub seed: u64,
    pub split_fraction: f64,
    pub kpca_components: usize,
    /// `None` selects `1 / input_dim`.
    pub kpca_gamma: Option<f64>,
    pub kpca_coef0: f64,
    /// Training frames sampled to fit the kernel PCA.
    pub kpca_fit_frames: usize,
    pub epochs_regression: usize,
    pub epochs_ctc: usize,
    pub epochs_artic: usize,
    pub epochs_acoustic: usize,
    pub batch_regression: usize,
    pub batch_ctc: usize,
    pub batch_artic: usize,
    pub lr_regression: f64,
    pub lr_ctc: f64,
    pub lr_artic: f64,
    pub dropout_ctc: f64,
    pub batchnorm: bool,
    pub artic_batchnorm: bool,
    pub clip_norm: f64,
    pub init_mode: InitMode,
    pub variant: Variant,
    /// Keep the transplanted GRU layers fixed during CTC training.
    pub freeze_transplanted: bool,
    pub beam_width: usize,
    pub lm_weight: f64,
    pub lm_order: usize,
    pub lm_k: f64,
    /// Keep only utterances of the first N unique sentences.
    pub vocabulary_limit: Option<usize>,
    pub channel_subset: ChannelSubset,
    pub sweep_limits: Vec<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            seed: 0,
            split_fraction: 0.8,
            kpca_components: 30,
            kpca_gamma: None,
            kpca_coef0: 1.0,
            kpca_fit_frames: 2000,
            epochs_regression: 500,
            epochs_ctc: 120,
            epochs_artic: 1000,
            epochs_acoustic: 120,
            batch_regression: 1,
            batch_ctc: 32,
            batch_artic: 1,
            lr_regression: 1e-3,
            lr_ctc: 1e-3,
            lr_artic: 1e-3,
            dropout_ctc: 0.0,
            batchnorm: false,
            artic_batchnorm: false,
            clip_norm: 5.0,
            init_mode: InitMode::Pretrained,
            variant: Variant::Base,
            freeze_transplanted: false,
            beam_width: 25,
            lm_weight: 1.0,
            lm_order: 4,
            lm_k: 1.0,
            vocabulary_limit: None,
            channel_subset: ChannelSubset::All,
            sweep_limits: vec![3, 5, 10, 15, 20, 30],
        }
    }

    pub fn desk() -> Self {
        Self {
            preset: Preset::Desk,
            kpca_fit_frames: 600,
            epochs_regression: 8,
            epochs_ctc: 30,
            epochs_artic: 15,
            epochs_acoustic: 30,
            batch_ctc: 8,
            lr_regression: 2e-3,
            lr_ctc: 3e-3,
            lr_artic: 2e-3,
            sweep_limits: vec![3, 5],
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("kpca_components", self.kpca_components),
            ("kpca_fit_frames", self.kpca_fit_frames),
            ("epochs_regression", self.epochs_regression),
            ("epochs_ctc", self.epochs_ctc),
            ("epochs_artic", self.epochs_artic),
            ("epochs_acoustic", self.epochs_acoustic),
            ("batch_regression", self.batch_regression),
            ("batch_ctc", self.batch_ctc),
            ("batch_artic", self.batch_artic),
            ("beam_width", self.beam_width),
            ("lm_order", self.lm_order),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::param(format!("{k} must be positive")));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::param("split_fraction must lie in (0, 1)"));
        }
        for (k, v) in [
            ("lr_regression", self.lr_regression),
            ("lr_ctc", self.lr_ctc),
            ("lr_artic", self.lr_artic),
            ("lm_k", self.lm_k),
            ("clip_norm", self.clip_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(format!("{k} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_ctc) {
            return Err(Error::param("dropout_ctc must lie in [0, 1)"));
        }
        if !(self.lm_weight >= 0.0 && self.lm_weight.is_finite()) {
            return Err(Error::param("lm_weight must be non-negative"));
        }
        if matches!(self.kpca_gamma, Some(g) if !(g > 0.0 && g.is_finite())) {
            return Err(Error::param("kpca_gamma must be positive"));
        }
        if self.vocabulary_limit == Some(0) || self.sweep_limits.contains(&0) {
            return Err(Error::param("vocabulary limits must be positive"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let preset = match self.preset {
            Preset::Desk => "desk",
            Preset::Full => "full",
        };
        let opt = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let lines: Vec<(&str, String)> = vec![
            ("preset", preset.into()),
            ("seed", self.seed.to_string()),
            ("split_fraction", self.split_fraction.to_string()),
            ("kpca_components", self.kpca_components.to_string()),
            ("kpca_gamma", opt(self.kpca_gamma.map(|g| g.to_string()))),
            ("kpca_coef0", self.kpca_coef0.to_string()),
            ("kpca_fit_frames", self.kpca_fit_frames.to_string()),
            ("epochs_regression", self.epochs_regression.to_string()),
            ("epochs_ctc", self.epochs_ctc.to_string()),
            ("epochs_artic", self.epochs_artic.to_string()),
            ("epochs_acoustic", self.epochs_acoustic.to_string()),
            ("batch_regression", self.batch_regression.to_string()),
            ("batch_ctc", self.batch_ctc.to_string()),
            ("batch_artic", self.batch_artic.to_string()),
            ("lr_regression", self.lr_regression.to_string()),
            ("lr_ctc", self.lr_ctc.to_string()),
            ("lr_artic", self.lr_artic.to_string()),
            ("dropout_ctc", self.dropout_ctc.to_string()),
            ("batchnorm", self.batchnorm.to_string()),
            ("artic_batchnorm", self.artic_batchnorm.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            (
                "init_mode",
                match self.init_mode {
                    InitMode::Random => "random",
                    InitMode::Pretrained => "pretrained",
                }
                .into(),
            ),
            (
                "variant",
                match self.variant {
                    Variant::Base => "base",
                    Variant::Extended => "extended",
                }
                .into(),
            ),
            ("freeze_transplanted", self.freeze_transplanted.to_string()),
            ("beam_width", self.beam_width.to_string()),
            ("lm_weight", self.lm_weight.to_string()),
            ("lm_order", self.lm_order.to_string()),
            ("lm_k", self.lm_k.to_string()),
            ("vocabulary_limit", self.vocabulary_limit.map_or("all".into(), |v| v.to_string())),
            ("channel_subset", self.channel_subset.to_string()),
            (
                "sweep_limits",
                self.sweep_limits.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(","),
            ),
        ];
        for (k, v) in lines {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Parses `key = value` lines; a `preset` line selects the base values
    /// that the remaining keys override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut base = Self::desk();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| Error::Line {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                base = match v {
                    "desk" => Self::desk(),
                    "full" => Self::full(),
                    other => {
                        return Err(Error::Line {
                            line,
                            message: format!("unknown preset '{other}'"),
                        })
                    }
                };
            } else {
                entries.push((line, k.to_string(), v.to_string()));
            }
        }
        for (line, k, v) in entries {
            base.set(&k, &v).map_err(|e| Error::Line {
                line,
                message: e.to_string(),
            })?;
        }
        base.validate()?;
        Ok(base)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse().map_err(|e| Error::param(format!("{key}: '{v}': {e}")))
        }
        match key {
            "seed" => self.seed = num(key, value)?,
            "split_fraction" => self.split_fraction = num(key, value)?,
            "kpca_components" => self.kpca_components = num(key, value)?,
            "kpca_gamma" => {
                self.kpca_gamma = if value == "auto" { None } else { Some(num(key, value)?) }
            }
            "kpca_coef0" => self.kpca_coef0 = num(key, value)?,
            "kpca_fit_frames" => self.kpca_fit_frames = num(key, value)?,
            "epochs_regression" => self.epochs_regression = num(key, value)?,
            "epochs_ctc" => self.epochs_ctc = num(key, value)?,
            "epochs_artic" => self.epochs_artic = num(key, value)?,
            "epochs_acoustic" => self.epochs_acoustic = num(key, value)?,
            "batch_regression" => self.batch_regression = num(key, value)?,
            "batch_ctc" => self.batch_ctc = num(key, value)?,
            "batch_artic" => self.batch_artic = num(key, value)?,
            "lr_regression" => self.lr_regression = num(key, value)?,
            "lr_ctc" => self.lr_ctc = num(key, value)?,
            "lr_artic" => self.lr_artic = num(key, value)?,
            "dropout_ctc" => self.dropout_ctc = num(key, value)?,
            "batchnorm" => self.batchnorm = num(key, value)?,
            "artic_batchnorm" => self.artic_batchnorm = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "init_mode" => {
                self.init_mode = match value {
                    "random" => InitMode::Random,
                    "pretrained" => InitMode::Pretrained,
                    _ => return Err(Error::param(format!("init_mode: '{value}' is not random|pretrained"))),
                }
            }
            "variant" => {
                self.variant = match value {
                    "base" => Variant::Base,
                    "extended" => Variant::Extended,
                    _ => return Err(Error::param(format!("variant: '{value}' is not base|extended"))),
                }
            }
            "freeze_transplanted" => self.freeze_transplanted = num(key, value)?,
            "beam_width" => self.beam_width = num(key, value)?,
            "lm_weight" => self.lm_weight = num(key, value)?,
            "lm_order" => self.lm_order = num(key, value)?,
            "lm_k" => self.lm_k = num(key, value)?,
            "vocabulary_limit" => {
                self.vocabulary_limit = if value == "all" { None } else { Some(num(key, value)?) }
            }
            "channel_subset" => self.channel_subset = value.parse()?,
            "sweep_limits" => {
                self.sweep_limits = value
                    .split(',')
                    .map(|v| num(key, v.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            other => {
                return Err(Error::Lookup {
                    kind: "config key",
                    name: other.to_string(),
                })
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Missing(format!("config file {}", path.display())),
            _ => Error::Io(e),
        })?;
        Self::parse(&text)
    }
}
