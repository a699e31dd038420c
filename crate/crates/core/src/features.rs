//! Frame-synchronous features: windowed EEG statistics and MFCCs.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::RawRecording;

/// Names of the per-channel statistics, in column order.
pub const STAT_NAMES: [&str; 5] = ["rms", "zcr", "mwa", "kurt", "pse"];

/// Frame rate shared by every feature stream.
pub const FRAME_RATE_HZ: f64 = 100.0;

const MEL_FILTERS: usize = 26;
const PRE_EMPHASIS: f64 = 0.97;
const LOG_FLOOR: f64 = 1e-10;

/// Feature matrix `[frames x dims]` sampled at `frame_rate_hz`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    frames: Vec<Vec<f64>>,
    frame_rate_hz: f64,
    names: Vec<String>,
}

impl FeatureSequence {
    pub fn new(frames: Vec<Vec<f64>>, frame_rate_hz: f64, names: Vec<String>) -> Result<Self> {
        if !(frame_rate_hz > 0.0) {
            return Err(Error::param("frame rate must be positive"));
        }
        if let Some(bad) = frames.iter().position(|f| f.len() != names.len()) {
            return Err(Error::shape(format!(
                "frame {bad} has {} values but there are {} names",
                frames[bad].len(),
                names.len()
            )));
        }
        if frames.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("feature sequence contains non-finite values"));
        }
        Ok(Self {
            frames,
            frame_rate_hz,
            names,
        })
    }

    pub fn frames(&self) -> &[Vec<f64>] {
        &self.frames
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.frame_rate_hz
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Keeps the first `len` frames.
    pub fn truncated(&self, len: usize) -> Self {
        Self {
            frames: self.frames[..len.min(self.frames.len())].to_vec(),
            frame_rate_hz: self.frame_rate_hz,
            names: self.names.clone(),
        }
    }

    /// Selects columns by name, in the requested order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self> {
        let idx = names
            .iter()
            .map(|n| {
                self.names.iter().position(|m| m == n).ok_or_else(|| Error::Lookup {
                    kind: "feature",
                    name: n.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let frames = self
            .frames
            .iter()
            .map(|f| idx.iter().map(|&i| f[i]).collect())
            .collect();
        Ok(Self {
            frames,
            frame_rate_hz: self.frame_rate_hz,
            names: names.to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowConfig {
    pub window_samples: usize,
    pub hop_samples: usize,
}

impl WindowConfig {
    pub fn new(window_samples: usize, hop_samples: usize) -> Result<Self> {
        if window_samples == 0 || hop_samples == 0 || hop_samples > window_samples {
            return Err(Error::param(format!(
                "window {window_samples} / hop {hop_samples}: need 0 < hop <= window"
            )));
        }
        Ok(Self {
            window_samples,
            hop_samples,
        })
    }

    /// 100 ms windows every 10 ms at 1 kHz.
    pub fn eeg_default() -> Self {
        Self {
            window_samples: 100,
            hop_samples: 10,
        }
    }

    /// 25 ms windows every 10 ms at 16 kHz.
    pub fn speech_default() -> Self {
        Self {
            window_samples: 400,
            hop_samples: 160,
        }
    }

    /// `floor((n - window) / hop) + 1`, or 0 when the signal is shorter than a window.
    pub fn frame_count(&self, n: usize) -> usize {
        if n < self.window_samples {
            0
        } else {
            (n - self.window_samples) / self.hop_samples + 1
        }
    }

    fn check_rate(&self, fs: f64) -> Result<()> {
        let rate = fs / self.hop_samples as f64;
        if (rate - FRAME_RATE_HZ).abs() > 1e-9 {
            return Err(Error::param(format!(
                "hop of {} samples at {fs} Hz gives {rate} Hz frames, expected {FRAME_RATE_HZ}",
                self.hop_samples
            )));
        }
        Ok(())
    }
}

/// The five window statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowStats {
    pub rms: f64,
    pub zcr: f64,
    pub mwa: f64,
    pub kurtosis: f64,
    pub pse: f64,
}

impl WindowStats {
    pub fn to_array(self) -> [f64; 5] {
        [self.rms, self.zcr, self.mwa, self.kurtosis, self.pse]
    }
}

/// Computes window statistics with a cached FFT of one fixed length.
struct StatsKernel {
    fft: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl StatsKernel {
    fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(len);
        let scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        Self {
            fft,
            buf: vec![Complex64::default(); len],
            scratch,
        }
    }

    fn stats(&mut self, x: &[f64]) -> WindowStats {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let crossings = x.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
        let zcr = crossings as f64 / (n - 1.0);

        let (m2, m4) = x.iter().fold((0.0, 0.0), |(m2, m4), v| {
            let d = (v - mean) * (v - mean);
            (m2 + d, m4 + d * d)
        });
        let (m2, m4) = (m2 / n, m4 / n);
        let kurtosis = if m2 < 1e-12 { 0.0 } else { m4 / (m2 * m2) };

        for (b, v) in self.buf.iter_mut().zip(x) {
            *b = Complex64::new(*v, 0.0);
        }
        self.fft.process_with_scratch(&mut self.buf, &mut self.scratch);
        let half = x.len() / 2;
        let bins = half + 1;
        // One-sided periodogram: interior bins carry both signs of frequency.
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let p = self.buf[k].norm_sqr();
                let mirrored = k != 0 && !(x.len() % 2 == 0 && k == half);
                if mirrored {
                    2.0 * p
                } else {
                    p
                }
            })
            .collect();
        let total: f64 = power.iter().sum();
        let pse = if total <= 0.0 || bins < 2 {
            0.0
        } else {
            let h: f64 = power
                .iter()
                .map(|p| p / total)
                .filter(|p| *p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            (h / (bins as f64).ln()).clamp(0.0, 1.0)
        };

        WindowStats {
            rms,
            zcr,
            mwa: mean,
            kurtosis,
            pse,
        }
    }
}

/// RMS, zero-crossing rate, window mean, Pearson kurtosis and normalized
/// power spectral entropy of one window.
///
/// `fs` only fixes the spectral axis; the normalized entropy does not depend on it.
pub fn window_stats(window: &[f64], fs: f64) -> Result<WindowStats> {
    if window.len() < 4 {
        return Err(Error::param(format!(
            "window needs at least 4 samples, got {}",
            window.len()
        )));
    }
    if !(fs > 0.0) {
        return Err(Error::param("sample rate must be positive"));
    }
    Ok(StatsKernel::new(window.len()).stats(window))
}

/// Five statistics per channel per window, channel-major (`T7.rms`, `T7.zcr`, ...).
pub fn extract_eeg_features(recording: &RawRecording, cfg: WindowConfig) -> Result<FeatureSequence> {
    cfg.check_rate(recording.sample_rate_hz())?;
    if cfg.window_samples < 4 {
        return Err(Error::param("EEG windows need at least 4 samples"));
    }
    let n = recording.n_samples();
    let t = cfg.frame_count(n);
    if t == 0 {
        return Err(Error::param(format!(
            "recording of {n} samples is shorter than one {}-sample window",
            cfg.window_samples
        )));
    }
    let names = recording
        .channel_labels()
        .iter()
        .flat_map(|label| STAT_NAMES.iter().map(move |s| format!("{label}.{s}")))
        .collect::<Vec<_>>();
    let mut kernel = StatsKernel::new(cfg.window_samples);
    let mut frames = vec![Vec::with_capacity(names.len()); t];
    for channel in recording.samples() {
        for (i, frame) in frames.iter_mut().enumerate() {
            let start = i * cfg.hop_samples;
            let st = kernel.stats(&channel[start..start + cfg.window_samples]);
            frame.extend_from_slice(&st.to_array());
        }
    }
    FeatureSequence::new(frames, FRAME_RATE_HZ, names)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters spanning 0 Hz to Nyquist over `nfft / 2 + 1` bins.
fn mel_filterbank(n_filters: usize, nfft: usize, fs: f64) -> Vec<Vec<f64>> {
    let bins = nfft / 2 + 1;
    let top = hz_to_mel(fs / 2.0);
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| {
            let hz = mel_to_hz(top * i as f64 / (n_filters + 1) as f64);
            hz * nfft as f64 / fs
        })
        .collect();
    (0..n_filters)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let k = k as f64;
                    if k <= lo || k >= hi {
                        0.0
                    } else if k <= mid {
                        (k - lo) / (mid - lo)
                    } else {
                        (hi - k) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II, first `n_out` coefficients.
pub(crate) fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            scale
                * x.iter()
                    .enumerate()
                    .map(|(n, v)| v * (PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m)).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// MFCCs: pre-emphasis, Hamming window, power spectrum, 26 mel filters,
/// floored log, orthonormal DCT-II.
pub fn extract_mfcc(speech: &RawRecording, n_coeffs: usize, cfg: WindowConfig) -> Result<FeatureSequence> {
    if speech.n_channels() != 1 {
        return Err(Error::param(format!(
            "MFCC extraction needs a single channel, got {}",
            speech.n_channels()
        )));
    }
    if n_coeffs == 0 || n_coeffs > MEL_FILTERS {
        return Err(Error::param(format!(
            "n_coeffs must be in 1..={MEL_FILTERS}, got {n_coeffs}"
        )));
    }
    let fs = speech.sample_rate_hz();
    cfg.check_rate(fs)?;
    let x = speech.channel(0);
    let t = cfg.frame_count(x.len());
    if t == 0 {
        return Err(Error::param("speech shorter than one analysis window"));
    }

    let mut emphasized = Vec::with_capacity(x.len());
    emphasized.push(x[0]);
    emphasized.extend(x.windows(2).map(|w| w[1] - PRE_EMPHASIS * w[0]));

    let w = cfg.window_samples;
    let nfft = w.next_power_of_two();
    let hamming: Vec<f64> = (0..w)
        .map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (w as f64 - 1.0).max(1.0)).cos())
        .collect();
    let bank = mel_filterbank(MEL_FILTERS, nfft, fs);
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let mut buf = vec![Complex64::default(); nfft];
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];

    let mut frames = Vec::with_capacity(t);
    for i in 0..t {
        let seg = &emphasized[i * cfg.hop_samples..i * cfg.hop_samples + w];
        buf.iter_mut().for_each(|b| *b = Complex64::default());
        for ((b, v), h) in buf.iter_mut().zip(seg).zip(&hamming) {
            *b = Complex64::new(v * h, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let power: Vec<f64> = buf[..nfft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr() / nfft as f64)
            .collect();
        let log_mel: Vec<f64> = bank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(f, p)| f * p).sum();
                e.max(LOG_FLOOR).ln()
            })
            .collect();
        frames.push(dct2_orthonormal(&log_mel, n_coeffs));
    }
    let names = (0..n_coeffs).map(|i| format!("mfcc{i}")).collect();
    FeatureSequence::new(frames, FRAME_RATE_HZ, names)
}

/// Restricts and reorders channels to `labels`.
pub fn select_channels(recording: &RawRecording, labels: &[String]) -> Result<RawRecording> {
    let rows = labels
        .iter()
        .map(|l| {
            recording
                .channel_labels()
                .iter()
                .position(|c| c == l)
                .map(|i| recording.channel(i).to_vec())
                .ok_or_else(|| Error::Lookup {
                    kind: "channel",
                    name: l.clone(),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    RawRecording::new(rows, recording.sample_rate_hz(), labels.to_vec())
}

/// Joins acoustic and articulatory frames column-wise (acoustic first),
/// trimming to the shorter stream when lengths differ by at most two frames.
pub fn concat_targets(mfcc: &FeatureSequence, artic: &FeatureSequence) -> Result<FeatureSequence> {
    if (mfcc.frame_rate_hz - artic.frame_rate_hz).abs() > 1e-9 {
        return Err(Error::param(format!(
            "frame rates differ: {} vs {}",
            mfcc.frame_rate_hz, artic.frame_rate_hz
        )));
    }
    if mfcc.len().abs_diff(artic.len()) > 2 {
        return Err(Error::shape(format!(
            "stream lengths {} and {} differ by more than 2 frames",
            mfcc.len(),
            artic.len()
        )));
    }
    let t = mfcc.len().min(artic.len());
    let frames = mfcc.frames[..t]
        .iter()
        .zip(&artic.frames[..t])
        .map(|(a, b)| a.iter().chain(b).copied().collect())
        .collect();
    let names = mfcc.names.iter().chain(&artic.names).cloned().collect();
    FeatureSequence::new(frames, mfcc.frame_rate_hz, names)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::CAP_LABELS;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn labels(n: usize) -> Vec<String> {
        CAP_LABELS[..n].iter().map(|s| s.to_string()).collect()
    }

    fn noise_recording(channels: usize, n: usize, seed: u64) -> RawRecording {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..channels)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        RawRecording::new(rows, 1000.0, labels(channels)).unwrap()
    }

    #[test]
    fn alternating_window() {
        let s = window_stats(&[1.0, -1.0, 1.0, -1.0], 1000.0).unwrap();
        assert!((s.rms - 1.0).abs() < 1e-15);
        assert_eq!(s.zcr, 1.0);
        assert_eq!(s.mwa, 0.0);
        assert!((s.kurtosis - 1.0).abs() < 1e-15);
        assert!(s.pse.abs() < 1e-12);
    }

    #[test]
    fn constant_window() {
        let s = window_stats(&[2.0; 4], 1000.0).unwrap();
        assert_eq!(s.rms, 2.0);
        assert_eq!(s.zcr, 0.0);
        assert_eq!(s.mwa, 2.0);
        assert_eq!(s.kurtosis, 0.0);
        assert!(s.pse.abs() < 1e-12);
    }

    #[test]
    fn short_window_rejected() {
        assert!(matches!(window_stats(&[1.0, 2.0, 3.0], 1000.0), Err(Error::Param(_))));
    }

    #[test]
    fn white_noise_entropy_near_max() {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = window_stats(&x, 1000.0).unwrap();
        // Direct periodogram as an independent check.
        let bins = 501;
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * n) as f64 / 1000.0;
                    re += v * a.cos();
                    im += v * a.sin();
                }
                let p = re * re + im * im;
                if k == 0 || k == 500 { p } else { 2.0 * p }
            })
            .collect();
        let total: f64 = power.iter().sum();
        let h: f64 = power.iter().map(|p| p / total).filter(|p| *p > 0.0).map(|p| -p * p.ln()).sum();
        let direct = h / (bins as f64).ln();
        assert!((s.pse - direct).abs() < 1e-9);
        assert!(s.pse > 0.9, "pse {}", s.pse);
    }

    #[test]
    fn eeg_feature_shape() {
        let rec = noise_recording(31, 10_000, 1);
        let f = extract_eeg_features(&rec, WindowConfig::eeg_default()).unwrap();
        assert_eq!(f.len(), 991);
        assert_eq!(f.dim(), 155);
        assert_eq!(f.names()[0], "Fp1.rms");
        assert_eq!(f.names()[4], "Fp1.pse");
        assert_eq!(f.frame_rate_hz(), 100.0);
    }

    #[test]
    fn eeg_features_of_silence() {
        let rec = RawRecording::new(vec![vec![0.0; 400]; 2], 1000.0, labels(2)).unwrap();
        let f = extract_eeg_features(&rec, WindowConfig::eeg_default()).unwrap();
        assert!(f.frames().iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn eeg_rejects_short_or_wrong_rate() {
        let rec = noise_recording(2, 99, 2);
        assert!(extract_eeg_features(&rec, WindowConfig::eeg_default()).is_err());
        let rec = noise_recording(2, 1000, 2);
        assert!(extract_eeg_features(&rec, WindowConfig::new(100, 20).unwrap()).is_err());
    }

    #[test]
    fn temporal_subset_has_twenty_dims() {
        let rec = noise_recording(31, 500, 3);
        let temporal: Vec<String> = crate::signal::TEMPORAL_LABELS.iter().map(|s| s.to_string()).collect();
        let sub = select_channels(&rec, &temporal).unwrap();
        let f = extract_eeg_features(&sub, WindowConfig::eeg_default()).unwrap();
        assert_eq!(f.dim(), 20);
        let frontal: Vec<String> = crate::signal::FRONTAL_LABELS.iter().map(|s| s.to_string()).collect();
        assert_eq!(select_channels(&rec, &frontal).unwrap().n_channels(), 12);
    }

    #[test]
    fn select_all_is_identity_and_unknown_errors() {
        let rec = noise_recording(31, 200, 4);
        assert_eq!(select_channels(&rec, rec.channel_labels()).unwrap(), rec);
        match select_channels(&rec, &["Q9".to_string()]) {
            Err(Error::Lookup { name, .. }) => assert_eq!(name, "Q9"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mfcc_of_silence_is_log_floor_image() {
        let rec = RawRecording::mono(vec![0.0; 16_000], 16_000.0, "mic").unwrap();
        let f = extract_mfcc(&rec, 13, WindowConfig::speech_default()).unwrap();
        assert_eq!(f.len(), 98);
        assert_eq!(f.dim(), 13);
        let c0 = (1.0f64 / 26.0).sqrt() * 26.0 * LOG_FLOOR.ln();
        for frame in f.frames() {
            assert!((frame[0] - c0).abs() < 1e-9);
            assert!(frame[1..].iter().all(|c| c.abs() < 1e-9));
        }
    }

    #[test]
    fn mfcc_is_finite_and_rejects_multichannel() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..8000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rec = RawRecording::mono(x, 16_000.0, "mic").unwrap();
        let f = extract_mfcc(&rec, 13, WindowConfig::speech_default()).unwrap();
        assert!(f.frames().iter().flatten().all(|v| v.is_finite()));
        let two = RawRecording::new(vec![vec![0.0; 800]; 2], 16_000.0, vec!["a".into(), "b".into()]).unwrap();
        assert!(matches!(extract_mfcc(&two, 13, WindowConfig::speech_default()), Err(Error::Param(_))));
    }

    fn seq(t: usize, d: usize, rate: f64, prefix: &str) -> FeatureSequence {
        FeatureSequence::new(
            vec![vec![1.0; d]; t],
            rate,
            (0..d).map(|i| format!("{prefix}{i}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn concat_shapes_and_trim() {
        let c = concat_targets(&seq(10, 13, 100.0, "m"), &seq(10, 6, 100.0, "a")).unwrap();
        assert_eq!((c.len(), c.dim()), (10, 19));
        assert_eq!(c.names()[13], "a0");
        let c = concat_targets(&seq(10, 13, 100.0, "m"), &seq(11, 6, 100.0, "a")).unwrap();
        assert_eq!(c.len(), 10);
        assert!(concat_targets(&seq(10, 13, 100.0, "m"), &seq(10, 6, 50.0, "a")).is_err());
        assert!(concat_targets(&seq(10, 13, 100.0, "m"), &seq(14, 6, 100.0, "a")).is_err());
    }

    #[test]
    fn window_config_validation() {
        assert!(WindowConfig::new(10, 20).is_err());
        assert!(WindowConfig::new(0, 0).is_err());
        assert_eq!(WindowConfig::new(100, 10).unwrap().frame_count(99), 0);
    }
}
