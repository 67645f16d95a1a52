//! Objective reconstruction metrics: multi-scale log-STFT distance,
//! log-Mel distance, and SNR.
//!
//! Spectrograms use periodic Hann windows, non-centered frames (the first
//! frame starts at sample 0; only complete frames are analyzed), and
//! one-sided magnitudes. Log compression is natural log with an additive
//! floor, so silent bins are well-defined.

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Spectral analysis settings for the two distances.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricConfig {
    /// STFT scales, in samples; the distance averages over all of them.
    pub stft_window_sizes: Vec<usize>,
    pub mel_bins: usize,
    /// Window size for the Mel spectrogram.
    pub mel_window: usize,
    /// Hop = window / hop_divisor, for both metrics.
    pub hop_divisor: usize,
    /// Additive stabilizer inside the log.
    pub floor: f64,
}

impl Default for MetricConfig {
    fn default() -> MetricConfig {
        MetricConfig {
            stft_window_sizes: vec![2048, 512, 128],
            mel_bins: 80,
            mel_window: 1024,
            hop_divisor: 4,
            floor: 1e-5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stft_window_sizes.is_empty() {
            return Err(Error::InvalidConfig("no STFT window sizes".into()));
        }
        for &w in self.stft_window_sizes.iter().chain([&self.mel_window]) {
            if !w.is_power_of_two() {
                return Err(Error::InvalidConfig(format!(
                    "window size {w} is not a power of two"
                )));
            }
            if w / self.hop_divisor.max(1) == 0 || self.hop_divisor == 0 {
                return Err(Error::InvalidConfig(format!(
                    "hop divisor {} leaves window {w} without a positive hop",
                    self.hop_divisor
                )));
            }
        }
        if self.mel_bins == 0 {
            return Err(Error::InvalidConfig("mel_bins must be positive".into()));
        }
        if !(self.floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "log floor must be positive, got {}",
                self.floor
            )));
        }
        Ok(())
    }
}

fn check_comparable(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<()> {
    if reference.samples.len() != estimate.samples.len() {
        return Err(Error::ShapeMismatch(format!(
            "signals have {} and {} samples",
            reference.samples.len(),
            estimate.samples.len()
        )));
    }
    if reference.sample_rate != estimate.sample_rate {
        return Err(Error::ShapeMismatch(format!(
            "signals have sample rates {} and {}",
            reference.sample_rate, estimate.sample_rate
        )));
    }
    Ok(())
}

/// One-sided magnitude spectrogram: `frames × (window/2 + 1)`, row-major.
fn magnitude_spectrogram(
    samples: &[f64],
    window: usize,
    hop: usize,
) -> Result<(Vec<f64>, usize, usize)> {
    if samples.len() < window {
        return Err(Error::EmptyInput(format!(
            "{} samples cannot fill a {window}-sample analysis window",
            samples.len()
        )));
    }
    let frames = (samples.len() - window) / hop + 1;
    let bins = window / 2 + 1;

    // periodic Hann
    let hann: Vec<f64> = (0..window)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / window as f64).cos())
        .collect();

    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut magnitudes = Vec::with_capacity(frames * bins);
    let mut buffer = vec![Complex::new(0.0, 0.0); window];
    for f in 0..frames {
        let start = f * hop;
        for n in 0..window {
            buffer[n] = Complex::new(samples[start + n] * hann[n], 0.0);
        }
        fft.process(&mut buffer);
        magnitudes.extend(buffer[..bins].iter().map(|c| c.norm()));
    }
    Ok((magnitudes, frames, bins))
}

/// Mean L1 distance between log-magnitude spectrograms, averaged over the
/// configured scales.
pub fn stft_distance(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    config: &MetricConfig,
) -> Result<f64> {
    config.validate()?;
    check_comparable(reference, estimate)?;
    let mut total = 0.0;
    for &window in &config.stft_window_sizes {
        let hop = window / config.hop_divisor;
        let (a, frames, bins) = magnitude_spectrogram(&reference.samples, window, hop)?;
        let (b, _, _) = magnitude_spectrogram(&estimate.samples, window, hop)?;
        let sum: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| ((x + config.floor).ln() - (y + config.floor).ln()).abs())
            .sum();
        total += sum / (frames * bins) as f64;
    }
    Ok(total / config.stft_window_sizes.len() as f64)
}

/// HTK Mel scale: `2595 · log10(1 + hz/700)`.
fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular Mel filterbank over the one-sided spectrum: `mel_bins × bins`
/// weights, row-major. Filters are mel-spaced from 0 Hz to Nyquist with
/// continuous (unrounded) edges and unit peak.
fn mel_filterbank(mel_bins: usize, window: usize, sample_rate: u32) -> Vec<f64> {
    let bins = window / 2 + 1;
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..mel_bins + 2)
        .map(|i| mel_to_hz(top * i as f64 / (mel_bins + 1) as f64))
        .collect();

    let mut weights = vec![0.0; mel_bins * bins];
    for m in 0..mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / window as f64;
            let rising = (f - left) / (center - left);
            let falling = (right - f) / (right - center);
            weights[m * bins + k] = rising.min(falling).max(0.0);
        }
    }
    weights
}

/// Mean L1 distance between log-Mel spectrograms.
pub fn mel_distance(
    reference: &AudioBuffer,
    estimate: &AudioBuffer,
    config: &MetricConfig,
) -> Result<f64> {
    config.validate()?;
    check_comparable(reference, estimate)?;
    let window = config.mel_window;
    let hop = window / config.hop_divisor;
    let (a, frames, bins) = magnitude_spectrogram(&reference.samples, window, hop)?;
    let (b, _, _) = magnitude_spectrogram(&estimate.samples, window, hop)?;
    let filters = mel_filterbank(config.mel_bins, window, reference.sample_rate);

    let mut sum = 0.0;
    for f in 0..frames {
        for m in 0..config.mel_bins {
            let project = |spec: &[f64]| -> f64 {
                (0..bins)
                    .map(|k| filters[m * bins + k] * spec[f * bins + k])
                    .sum()
            };
            let x: f64 = project(&a);
            let y: f64 = project(&b);
            sum += ((x + config.floor).ln() - (y + config.floor).ln()).abs();
        }
    }
    Ok(sum / (frames * config.mel_bins) as f64)
}

/// Signal-to-noise ratio in dB: `10·log10(Σref² / Σ(ref−est)²)`, with
/// `+∞` when the residual is exactly zero.
pub fn snr(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64> {
    check_comparable(reference, estimate)?;
    let signal: f64 = reference.samples.iter().map(|s| s * s).sum();
    if signal == 0.0 {
        return Err(Error::UndefinedReference(
            "SNR is undefined for an all-zero reference".into(),
        ));
    }
    let noise: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}
