//! Linear time-invariant preprocessing of multichannel recordings.
//!
//! Filters are Butterworth designs obtained through the bilinear transform
//! and realized as cascades of second-order sections.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalp electrode labels of the 31-channel cap, in storage order.
pub const CAP_LABELS: [&str; 31] = [
    "Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8", "FT9", "FC5", "FC1", "FC2", "FC6", "FT10", "T7",
    "C3", "Cz", "C4", "T8", "TP9", "CP5", "CP1", "CP2", "CP6", "TP10", "P7", "P3", "Pz", "P4",
    "P8", "O1", "O2",
];

/// Temporal-lobe sensors.
pub const TEMPORAL_LABELS: [&str; 4] = ["T7", "T8", "TP9", "TP10"];

/// Frontal-lobe sensors.
pub const FRONTAL_LABELS: [&str; 12] = [
    "F3", "F4", "F7", "F8", "FC1", "FC2", "FC5", "Fp1", "Fp2", "FT9", "FT10", "Fz",
];

/// Multichannel time-domain signal, one row per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    samples: Vec<Vec<f64>>,
    sample_rate_hz: f64,
    channel_labels: Vec<String>,
}

impl RawRecording {
    pub fn new(
        samples: Vec<Vec<f64>>,
        sample_rate_hz: f64,
        channel_labels: Vec<String>,
    ) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::param(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if samples.len() != channel_labels.len() {
            return Err(Error::shape(format!(
                "{} signal rows but {} channel labels",
                samples.len(),
                channel_labels.len()
            )));
        }
        if let Some(first) = samples.first() {
            let n = first.len();
            if samples.iter().any(|row| row.len() != n) {
                return Err(Error::shape("channels have unequal lengths"));
            }
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::param("recording contains non-finite samples"));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel_labels,
        })
    }

    /// Single-channel convenience constructor.
    pub fn mono(samples: Vec<f64>, sample_rate_hz: f64, label: &str) -> Result<Self> {
        Self::new(vec![samples], sample_rate_hz, vec![label.to_string()])
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.samples[index]
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn into_samples(self) -> Vec<Vec<f64>> {
        self.samples
    }
}

/// One biquad: `H(z) = (b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sos {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Sos {
    /// Stability triangle: both poles strictly inside the unit circle.
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z_inv2 = z_inv * z_inv;
        let num = self.b0 + z_inv * self.b1 + z_inv2 * self.b2;
        let den = 1.0 + z_inv * self.a1 + z_inv2 * self.a2;
        num / den
    }

    fn scaled(self, gain: f64) -> Self {
        Self {
            b0: self.b0 * gain,
            b1: self.b1 * gain,
            b2: self.b2 * gain,
            ..self
        }
    }
}

/// Cascade of second-order sections bound to a sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct IirFilter {
    sections: Vec<Sos>,
    sample_rate_hz: f64,
}

impl IirFilter {
    pub fn new(sections: Vec<Sos>, sample_rate_hz: f64) -> Result<Self> {
        if sections.is_empty() {
            return Err(Error::param("filter needs at least one section"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::param("filter sample rate must be positive"));
        }
        if let Some(i) = sections.iter().position(|s| !s.is_stable()) {
            return Err(Error::param(format!("section {i} is unstable")));
        }
        Ok(Self {
            sections,
            sample_rate_hz,
        })
    }

    pub fn sections(&self) -> &[Sos] {
        &self.sections
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Filters one channel with zero initial state (direct form II transposed).
    pub fn filter_channel(&self, input: &[f64]) -> Vec<f64> {
        let mut out = input.to_vec();
        for s in &self.sections {
            let (mut s1, mut s2) = (0.0, 0.0);
            for v in out.iter_mut() {
                let x = *v;
                let y = s.b0 * x + s1;
                s1 = s.b1 * x - s.a1 * y + s2;
                s2 = s.b2 * x - s.a2 * y;
                *v = y;
            }
        }
        out
    }
}

/// Butterworth bandpass of total order `order` (the analog prototype has
/// order `order / 2`), one section per prototype pole.
pub fn design_bandpass(low_hz: f64, high_hz: f64, order: usize, fs: f64) -> Result<IirFilter> {
    if !(fs > 0.0) {
        return Err(Error::param("sample rate must be positive"));
    }
    if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::param(format!(
            "band edges must satisfy 0 < low < high < fs/2, got low={low_hz} high={high_hz} fs={fs}"
        )));
    }
    if order < 2 || order % 2 != 0 {
        return Err(Error::param(format!("order must be even and >= 2, got {order}")));
    }
    let proto_order = order / 2;

    // Prewarped edges for the bilinear map s = (z - 1) / (z + 1).
    let wl = (PI * low_hz / fs).tan();
    let wh = (PI * high_hz / fs).tan();
    let bw = wh - wl;
    let w0_sq = wl * wh;

    let mut sections = Vec::with_capacity(proto_order);
    for k in 0..proto_order {
        let theta = PI * (2 * k + proto_order + 1) as f64 / (2 * proto_order) as f64;
        let p = Complex64::from_polar(1.0, theta);
        // Only the upper half plane; the conjugate pole contributes the conjugates.
        if p.im < -1e-12 {
            continue;
        }
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0_sq).sqrt();
        let s1 = (pb + disc) / 2.0;
        let s2 = (pb - disc) / 2.0;
        let z1 = bilinear(s1);
        let z2 = bilinear(s2);
        if p.im.abs() <= 1e-12 {
            // Real prototype pole: its two bandpass poles form one section.
            sections.push(bandpass_section(z1, z2));
        } else {
            sections.push(bandpass_section(z1, z1.conj()));
            sections.push(bandpass_section(z2, z2.conj()));
        }
    }

    let center = 2.0 * w0_sq.sqrt().atan();
    let z_inv = Complex64::from_polar(1.0, -center);
    let sections = sections
        .into_iter()
        .map(|s| s.scaled(1.0 / s.response(z_inv).norm()))
        .collect();
    IirFilter::new(sections, fs)
}

fn bilinear(s: Complex64) -> Complex64 {
    (1.0 + s) / (1.0 - s)
}

fn bandpass_section(p1: Complex64, p2: Complex64) -> Sos {
    // Zeros at z = 1 and z = -1.
    Sos {
        b0: 1.0,
        b1: 0.0,
        b2: -1.0,
        a1: -(p1 + p2).re,
        a2: (p1 * p2).re,
    }
}

/// Second-order notch with a null at `f0_hz` and -3 dB bandwidth `f0_hz / quality`.
pub fn design_notch(f0_hz: f64, quality: f64, fs: f64) -> Result<IirFilter> {
    if !(fs > 0.0) {
        return Err(Error::param("sample rate must be positive"));
    }
    if !(0.0 < f0_hz && f0_hz < fs / 2.0) {
        return Err(Error::param(format!(
            "notch frequency must satisfy 0 < f0 < fs/2, got f0={f0_hz} fs={fs}"
        )));
    }
    if !(quality > 0.0) {
        return Err(Error::param(format!("quality must be positive, got {quality}")));
    }
    let w0 = 2.0 * PI * f0_hz / fs;
    let alpha = w0.sin() / (2.0 * quality);
    let norm = 1.0 + alpha;
    let cos_w0 = w0.cos();
    let section = Sos {
        b0: 1.0 / norm,
        b1: -2.0 * cos_w0 / norm,
        b2: 1.0 / norm,
        a1: -2.0 * cos_w0 / norm,
        a2: (1.0 - alpha) / norm,
    };
    IirFilter::new(vec![section], fs)
}

/// Filters every channel independently.
pub fn apply_filter(filter: &IirFilter, recording: &RawRecording) -> Result<RawRecording> {
    if (filter.sample_rate_hz - recording.sample_rate_hz).abs() > 1e-9 * recording.sample_rate_hz {
        return Err(Error::param(format!(
            "filter designed for {} Hz applied to a {} Hz recording",
            filter.sample_rate_hz, recording.sample_rate_hz
        )));
    }
    let samples = recording
        .samples
        .iter()
        .map(|ch| filter.filter_channel(ch))
        .collect();
    Ok(RawRecording {
        samples,
        sample_rate_hz: recording.sample_rate_hz,
        channel_labels: recording.channel_labels.clone(),
    })
}

/// Complex gain of the cascade at `freq_hz`.
pub fn frequency_response(filter: &IirFilter, freq_hz: f64) -> Result<Complex64> {
    let nyquist = filter.sample_rate_hz / 2.0;
    if !(0.0..=nyquist).contains(&freq_hz) {
        return Err(Error::param(format!(
            "frequency {freq_hz} Hz outside [0, {nyquist}]"
        )));
    }
    let w = 2.0 * PI * freq_hz / filter.sample_rate_hz;
    let z_inv = Complex64::from_polar(1.0, -w);
    Ok(filter
        .sections
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(z_inv)))
}

pub fn magnitude_db(gain: Complex64) -> f64 {
    20.0 * gain.norm().log10()
}
