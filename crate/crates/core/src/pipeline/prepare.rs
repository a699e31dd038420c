//! Per-utterance feature preparation and model-input transforms.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ChannelSubset, ExperimentConfig};
use super::manifest::UtteranceRecord;
use super::synth::ARTIC_NAMES;
use crate::error::{Error, Result};
use crate::features::{
    concat_targets, extract_eeg_features, extract_mfcc, select_channels, FeatureSequence, WindowConfig,
};
use crate::io::{read_features, read_recording, Checkpoint};
use crate::kpca::{fit_kpca, KpcaModel};
use crate::nn::Tensor;
use crate::signal::{apply_filter, design_bandpass, design_notch, RawRecording};

pub const BANDPASS_HZ: (f64, f64) = (0.1, 70.0);
pub const BANDPASS_ORDER: usize = 4;
pub const NOTCH_HZ: f64 = 60.0;
pub const NOTCH_Q: f64 = 30.0;
pub const MFCC_COEFFS: usize = 13;

/// Stream-alignment slack (frames) tolerated between EEG and speech features.
pub const MAX_ALIGNMENT_SLACK: usize = 12;

/// Bandpass then notch filtering of every channel.
pub fn preprocess_eeg(recording: &RawRecording) -> Result<RawRecording> {
    let fs = recording.sample_rate_hz();
    let bandpass = design_bandpass(BANDPASS_HZ.0, BANDPASS_HZ.1, BANDPASS_ORDER, fs)?;
    let notch = design_notch(NOTCH_HZ, NOTCH_Q, fs)?;
    apply_filter(&notch, &apply_filter(&bandpass, recording)?)
}

/// Acoustic (13 MFCC) and articulatory (6) targets of one utterance.
pub fn speech_targets(speech: &RawRecording, artic: &FeatureSequence) -> Result<FeatureSequence> {
    let mfcc = extract_mfcc(speech, MFCC_COEFFS, WindowConfig::speech_default())?;
    concat_targets(&mfcc, artic)
}

/// Frame-aligned features of one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceFeatures {
    pub id: String,
    pub transcript: String,
    /// Window statistics of the (filtered) EEG channels.
    pub eeg: FeatureSequence,
    /// MFCC + articulatory targets, when speech is available.
    pub targets: Option<FeatureSequence>,
}

impl UtteranceFeatures {
    /// Trims both streams to a common length.
    pub fn aligned(
        record: &UtteranceRecord,
        eeg: FeatureSequence,
        targets: Option<FeatureSequence>,
    ) -> Result<Self> {
        let (eeg, targets) = match targets {
            Some(t) => {
                if eeg.len().abs_diff(t.len()) > MAX_ALIGNMENT_SLACK {
                    return Err(Error::shape(format!(
                        "utterance {}: EEG has {} frames, targets {}",
                        record.id,
                        eeg.len(),
                        t.len()
                    )));
                }
                let n = eeg.len().min(t.len());
                (eeg.truncated(n), Some(t.truncated(n)))
            }
            None => (eeg, None),
        };
        Ok(Self {
            id: record.id.clone(),
            transcript: record.transcript.clone(),
            eeg,
            targets,
        })
    }

    pub fn artic(&self) -> Option<Result<FeatureSequence>> {
        let names: Vec<String> = ARTIC_NAMES.iter().map(|s| s.to_string()).collect();
        self.targets.as_ref().map(|t| t.select_columns(&names))
    }
}

/// Filters, restricts channels and extracts EEG statistics; adds speech
/// targets when both speech and articulatory streams are given.
pub fn prepare_utterance(
    record: &UtteranceRecord,
    eeg: &RawRecording,
    speech: Option<&RawRecording>,
    artic: Option<&FeatureSequence>,
    channels: &ChannelSubset,
) -> Result<UtteranceFeatures> {
    let filtered = preprocess_eeg(eeg)?;
    let selected = match channels.labels() {
        Some(labels) => select_channels(&filtered, &labels)?,
        None => filtered,
    };
    let stats = extract_eeg_features(&selected, WindowConfig::eeg_default())?;
    let targets = match (speech, artic) {
        (Some(s), Some(a)) => Some(speech_targets(s, a)?),
        _ => None,
    };
    UtteranceFeatures::aligned(record, stats, targets)
}

/// Checks that every path exists, naming all that do not.
pub fn require_files(paths: &[PathBuf]) -> Result<()> {
    let missing: Vec<String> = paths
        .iter()
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::Missing(format!("absent files: {}", missing.join(", "))))
    }
}

/// Loads raw streams listed in `records` (paths relative to `dir`) and prepares features.
pub fn prepare_from_dir(
    dir: &Path,
    records: &[UtteranceRecord],
    channels: &ChannelSubset,
) -> Result<Vec<UtteranceFeatures>> {
    let mut paths = Vec::new();
    for r in records {
        paths.push(dir.join(&r.eeg));
        paths.extend(r.speech.iter().map(|p| dir.join(p)));
        paths.extend(r.artic.iter().map(|p| dir.join(p)));
    }
    require_files(&paths)?;
    super::par_map(records, |r| {
        let eeg = read_recording(&dir.join(&r.eeg))?;
        let speech = r.speech.as_ref().map(|p| read_recording(&dir.join(p))).transpose()?;
        let artic = r.artic.as_ref().map(|p| read_features(&dir.join(p))).transpose()?;
        prepare_utterance(r, &eeg, speech.as_ref(), artic.as_ref(), channels)
    })
}

/// Per-column affine normalization to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Column statistics of `rows`; near-constant columns keep unit scale.
    pub fn fit<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut n = 0usize;
        let mut sum: Vec<f64> = Vec::new();
        let mut sum_sq: Vec<f64> = Vec::new();
        for row in rows {
            if n == 0 {
                sum = vec![0.0; row.len()];
                sum_sq = vec![0.0; row.len()];
            } else if row.len() != sum.len() {
                return Err(Error::shape("rows have unequal widths"));
            }
            for (j, v) in row.iter().enumerate() {
                sum[j] += v;
                sum_sq[j] += v * v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::param("cannot standardize an empty set of frames"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sum_sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n as f64 - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn apply_all(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.dim() {
                    return Err(Error::shape(format!("frame width {} != {}", r.len(), self.dim())));
                }
                Ok(self.apply(r))
            })
            .collect()
    }

    pub fn store(&self, c: &mut Checkpoint, prefix: &str) {
        let d = self.dim();
        c.push(format!("{prefix}.mean"), Tensor::from_vec(&[d], self.mean.clone()).expect("1-d"));
        c.push(format!("{prefix}.std"), Tensor::from_vec(&[d], self.std.clone()).expect("1-d"));
    }

    pub fn load(c: &Checkpoint, prefix: &str) -> Result<Self> {
        let mean = c.require(&format!("{prefix}.mean"))?.data().to_vec();
        let std = c.require(&format!("{prefix}.std"))?.data().to_vec();
        if mean.len() != std.len() || std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::param(format!("invalid standardizer {prefix}")));
        }
        Ok(Self { mean, std })
    }
}

/// Standardize -> kernel PCA -> standardize, fitted on training frames.
#[derive(Clone, Debug, PartialEq)]
pub struct InputTransform {
    pub input: Standardizer,
    pub kpca: KpcaModel,
    pub output: Standardizer,
}

impl InputTransform {
    /// Fits on a seeded subsample of at most `cfg.kpca_fit_frames` frames.
    pub fn fit(train: &[&FeatureSequence], cfg: &ExperimentConfig) -> Result<Self> {
        let frames: Vec<&[f64]> = train.iter().flat_map(|f| f.frames().iter().map(Vec::as_slice)).collect();
        let input = Standardizer::fit(frames.iter().copied())?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(KPCA_STREAM);
        let m = cfg.kpca_fit_frames.min(frames.len());
        let mut picked = sample(&mut rng, frames.len(), m).into_vec();
        picked.sort_unstable();
        let fit_rows: Vec<Vec<f64>> = picked.iter().map(|&i| input.apply(frames[i])).collect();
        let gamma = cfg.kpca_gamma.unwrap_or(1.0 / input.dim() as f64);
        let kpca = fit_kpca(&fit_rows, cfg.kpca_components, gamma, cfg.kpca_coef0)?;
        let projected = kpca.transform(&fit_rows)?;
        let output = Standardizer::fit(projected.iter().map(Vec::as_slice))?;
        Ok(Self { input, kpca, output })
    }

    pub fn output_dim(&self) -> usize {
        self.kpca.n_components()
    }

    pub fn transform(&self, features: &FeatureSequence) -> Result<Vec<Vec<f64>>> {
        let scaled = self.input.apply_all(features.frames())?;
        self.output.apply_all(&self.kpca.transform(&scaled)?)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = self.kpca.to_checkpoint();
        self.input.store(&mut c, "input");
        self.output.store(&mut c, "output");
        c
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self> {
        let kpca = KpcaModel::from_checkpoint(c)?;
        let input = Standardizer::load(c, "input")?;
        let output = Standardizer::load(c, "output")?;
        if input.dim() != kpca.input_dim() || output.dim() != kpca.n_components() {
            return Err(Error::shape("input transform parts disagree on dimensions"));
        }
        Ok(Self { input, kpca, output })
    }
}

/// RNG stream reserved for the KPCA subsample.
const KPCA_STREAM: u64 = 11;

/// Model-ready utterance: `[T x d]` inputs and optional `[T x 19]` raw targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub transcript: String,
    pub input: Tensor,
    pub targets: Option<Tensor>,
}

impl Sample {
    pub fn frames(&self) -> usize {
        self.input.rows()
    }

    pub fn require_targets(&self) -> Result<&Tensor> {
        self.targets
            .as_ref()
            .ok_or_else(|| Error::Missing(format!("speech targets of utterance {}", self.id)))
    }
}

/// Applies the EEG input transform to every utterance.
pub fn eeg_samples(features: &[UtteranceFeatures], transform: &InputTransform) -> Result<Vec<Sample>> {
    super::par_map(features, |f| {
        Ok(Sample {
            id: f.id.clone(),
            transcript: f.transcript.clone(),
            input: Tensor::from_rows(&transform.transform(&f.eeg)?)?,
            targets: f
                .targets
                .as_ref()
                .map(|t| Tensor::from_rows(t.frames()))
                .transpose()?,
        })
    })
}

/// Uses the speech targets themselves, standardized, as inputs.
pub fn acoustic_samples(features: &[UtteranceFeatures], scaler: &Standardizer) -> Result<Vec<Sample>> {
    features
        .iter()
        .map(|f| {
            let t = f
                .targets
                .as_ref()
                .ok_or_else(|| Error::Missing(format!("speech targets of utterance {}", f.id)))?;
            Ok(Sample {
                id: f.id.clone(),
                transcript: f.transcript.clone(),
                input: Tensor::from_rows(&scaler.apply_all(t.frames())?)?,
                targets: None,
            })
        })
        .collect()
}
