//! Seeded synthetic corpus: character-driven latent trajectories, a
//! harmonic speech-like waveform and EEG as a fixed linear mixing of the
//! latents plus pink noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::UtteranceRecord;
use crate::ctc::Alphabet;
use crate::error::{Error, Result};
use crate::features::{FeatureSequence, WindowConfig, FRAME_RATE_HZ};
use crate::signal::{RawRecording, CAP_LABELS};

pub const LATENT_DIM: usize = 6;
pub const EEG_CHANNELS: usize = 31;
pub const ARTIC_NAMES: [&str; LATENT_DIM] = ["LA", "LP", "TBCL", "TBCD", "TTCL", "TTCD"];

/// Stand-in sentence list; the first five are short.
pub const DEFAULT_SENTENCES: [&str; 30] = [
    "the cat sat",
    "we ran home",
    "a dog barked",
    "it is cold",
    "she can see",
    "the sun is hot today",
    "my brother plays the drums",
    "open the window please",
    "we'll meet at noon",
    "the river runs past the mill",
    "birds sing in the morning",
    "bring me a glass of water",
    "the old clock stopped at nine",
    "they painted the fence green",
    "a cold wind blew from the north",
    "her garden is full of roses",
    "don't leave the door open",
    "the train left before dawn",
    "he reads a book every night",
    "the children laughed at the clown",
    "put the keys on the table",
    "the bread smells fresh and warm",
    "rain fell on the quiet street",
    "our team won the final game",
    "the lamp casts a yellow glow",
    "she wrote a letter to her aunt",
    "the farmer fed the hungry pigs",
    "snow covered the tall mountains",
    "it's time to go to sleep",
    "the ship sailed across the bay",
];

const LEAD_MS: usize = 100;
const DWELL_MS: (usize, usize) = (80, 160);
const SMOOTH_MS: usize = 50;
const HARMONICS_HZ: [f64; LATENT_DIM] = [300.0, 700.0, 1200.0, 1800.0, 2500.0, 3300.0];
const SPEECH_FLOOR_NOISE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub sentences: Vec<String>,
    pub subjects: usize,
    pub repetitions: usize,
    pub channels: usize,
    pub eeg_rate_hz: f64,
    pub speech_rate_hz: f64,
    /// Standard deviation of the per-channel pink noise relative to unit-variance mixing.
    pub noise_level: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            sentences: DEFAULT_SENTENCES.iter().map(|s| s.to_string()).collect(),
            subjects: 7,
            repetitions: 3,
            channels: EEG_CHANNELS,
            eeg_rate_hz: 1000.0,
            speech_rate_hz: 16000.0,
            noise_level: 1.0,
        }
    }
}

impl SynthSpec {
    /// The first `n` default sentences.
    pub fn with_sentences(n: usize) -> Self {
        Self {
            sentences: DEFAULT_SENTENCES.iter().take(n).map(|s| s.to_string()).collect(),
            ..Self::default()
        }
    }

    pub fn validate(&self, alphabet: &Alphabet) -> Result<()> {
        if self.channels != EEG_CHANNELS {
            return Err(Error::param(format!("synthetic EEG has {EEG_CHANNELS} channels, got {}", self.channels)));
        }
        if !(self.eeg_rate_hz > 0.0 && self.speech_rate_hz > 0.0) {
            return Err(Error::param("sample rates must be positive"));
        }
        if self.eeg_rate_hz != 1000.0 || self.speech_rate_hz % self.eeg_rate_hz != 0.0 {
            return Err(Error::param("EEG must be sampled at 1000 Hz and speech at a multiple of it"));
        }
        if self.sentences.is_empty() || self.subjects == 0 || self.repetitions == 0 {
            return Err(Error::param("need at least one sentence, subject and repetition"));
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return Err(Error::param("noise level must be finite and non-negative"));
        }
        for s in &self.sentences {
            if s.is_empty() {
                return Err(Error::param("sentences must be non-empty"));
            }
            alphabet.encode(s)?;
        }
        Ok(())
    }
}

/// One generated utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthUtterance {
    pub record: UtteranceRecord,
    pub eeg: RawRecording,
    pub speech: RawRecording,
    /// Articulatory targets on the speech frame grid.
    pub artic: FeatureSequence,
    /// Smoothed latents `[LATENT_DIM x samples]` at the EEG rate.
    pub latents: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub utterances: Vec<SynthUtterance>,
    /// `[channels x LATENT_DIM]` mixing from latents to EEG.
    pub mixing: Vec<Vec<f64>>,
    /// Latent target of each alphabet character.
    pub char_targets: Vec<[f64; LATENT_DIM]>,
}

/// Centered moving average with a window of `w` samples, shrunk at the edges.
fn moving_average(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let before = w / 2;
    let after = w - before - 1;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(before);
            let hi = (i + after).min(n - 1);
            (prefix[hi + 1] - prefix[lo]) / (hi + 1 - lo) as f64
        })
        .collect()
}

/// Unit-variance pink noise from white noise through a fixed pole bank.
fn pink_noise(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut b = [0.0f64; 7];
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let w: f64 = rng.sample(StandardNormal);
            b[0] = 0.99886 * b[0] + w * 0.0555179;
            b[1] = 0.99332 * b[1] + w * 0.0750759;
            b[2] = 0.96900 * b[2] + w * 0.1538520;
            b[3] = 0.86650 * b[3] + w * 0.3104856;
            b[4] = 0.55000 * b[4] + w * 0.5329522;
            b[5] = -0.7616 * b[5] - w * 0.0168980;
            let p = b.iter().sum::<f64>() + w * 0.5362;
            b[6] = w * 0.115926;
            p
        })
        .collect();
    if n > 1 {
        let mean = out.iter().sum::<f64>() / n as f64;
        let sd = (out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            out.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    out
}

/// Generates every (subject, repetition, sentence) utterance.
pub fn synth_dataset(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    let alphabet = Alphabet::default();
    spec.validate(&alphabet)?;
    let mut global = ChaCha8Rng::seed_from_u64(seed);
    let char_targets: Vec<[f64; LATENT_DIM]> = (0..alphabet.len())
        .map(|_| std::array::from_fn(|_| global.gen_range(-1.0..=1.0)))
        .collect();
    let mixing: Vec<Vec<f64>> = (0..spec.channels)
        .map(|_| (0..LATENT_DIM).map(|_| global.sample(StandardNormal)).collect())
        .collect();
    let phases: [f64; LATENT_DIM] = std::array::from_fn(|_| global.gen_range(0.0..2.0 * PI));

    let mut utterances = Vec::new();
    let mut index = 0u64;
    for subject in 0..spec.subjects {
        for rep in 0..spec.repetitions {
            for (si, sentence) in spec.sentences.iter().enumerate() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index + 1);
                index += 1;
                let id = format!("s{:02}_r{}_u{:02}", subject + 1, rep + 1, si + 1);
                let u = synth_utterance(
                    spec,
                    &alphabet,
                    &char_targets,
                    &mixing,
                    &phases,
                    sentence,
                    &mut rng,
                    UtteranceRecord {
                        id: id.clone(),
                        subject: format!("s{:02}", subject + 1),
                        session: rep as u32 + 1,
                        transcript: sentence.clone(),
                        eeg: format!("eeg/{id}.ndx").into(),
                        speech: Some(format!("speech/{id}.ndx").into()),
                        artic: Some(format!("artic/{id}.ndx").into()),
                    },
                )?;
                utterances.push(u);
            }
        }
    }
    Ok(SynthDataset {
        utterances,
        mixing,
        char_targets,
    })
}

#[allow(clippy::too_many_arguments)]
fn synth_utterance(
    spec: &SynthSpec,
    alphabet: &Alphabet,
    char_targets: &[[f64; LATENT_DIM]],
    mixing: &[Vec<f64>],
    phases: &[f64; LATENT_DIM],
    sentence: &str,
    rng: &mut ChaCha8Rng,
    record: UtteranceRecord,
) -> Result<SynthUtterance> {
    let per_ms = (spec.eeg_rate_hz / 1000.0) as usize;
    let mut raw: Vec<[f64; LATENT_DIM]> = vec![[0.0; LATENT_DIM]; LEAD_MS * per_ms];
    for c in sentence.chars() {
        let target = char_targets[alphabet.index(c)?];
        let dwell = rng.gen_range(DWELL_MS.0..=DWELL_MS.1) * per_ms;
        raw.extend(std::iter::repeat_n(target, dwell));
    }
    raw.extend(std::iter::repeat_n([0.0; LATENT_DIM], LEAD_MS * per_ms));
    let n = raw.len();
    let latents: Vec<Vec<f64>> = (0..LATENT_DIM)
        .map(|d| {
            let col: Vec<f64> = raw.iter().map(|r| r[d]).collect();
            moving_average(&col, SMOOTH_MS * per_ms)
        })
        .collect();

    let eeg_rows: Vec<Vec<f64>> = mixing
        .iter()
        .map(|m| {
            let noise = if spec.noise_level > 0.0 {
                pink_noise(n, rng)
            } else {
                vec![0.0; n]
            };
            (0..n)
                .map(|t| {
                    let mut v = 0.0;
                    for d in 0..LATENT_DIM {
                        v += m[d] * latents[d][t];
                    }
                    v + spec.noise_level * noise[t]
                })
                .collect()
        })
        .collect();
    let labels = CAP_LABELS.iter().map(|s| s.to_string()).collect();
    let eeg = RawRecording::new(eeg_rows, spec.eeg_rate_hz, labels)?;

    let ratio = (spec.speech_rate_hz / spec.eeg_rate_hz) as usize;
    let ns = n * ratio;
    let speech: Vec<f64> = (0..ns)
        .map(|i| {
            let pos = i as f64 / ratio as f64;
            let lo = (pos.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            let frac = pos - lo as f64;
            let t = i as f64 / spec.speech_rate_hz;
            let mut s = 0.0;
            for d in 0..LATENT_DIM {
                let l = latents[d][lo] * (1.0 - frac) + latents[d][hi] * frac;
                let amp = 0.1 * (1.0 + l.tanh());
                s += amp * (2.0 * PI * HARMONICS_HZ[d] * t + phases[d]).sin();
            }
            let w: f64 = rng.sample(StandardNormal);
            s + SPEECH_FLOOR_NOISE * w
        })
        .collect();
    let speech = RawRecording::mono(speech, spec.speech_rate_hz, "audio")?;

    let win = WindowConfig::speech_default();
    let frames = win.frame_count(ns);
    let artic_frames: Vec<Vec<f64>> = (0..frames)
        .map(|i| {
            let center = (i * win.hop_samples + win.window_samples / 2) / ratio;
            let t = center.min(n - 1);
            (0..LATENT_DIM).map(|d| latents[d][t]).collect()
        })
        .collect();
    let artic = FeatureSequence::new(
        artic_frames,
        FRAME_RATE_HZ,
        ARTIC_NAMES.iter().map(|s| s.to_string()).collect(),
    )?;
    Ok(SynthUtterance {
        record,
        eeg,
        speech,
        artic,
        latents,
    })
}
