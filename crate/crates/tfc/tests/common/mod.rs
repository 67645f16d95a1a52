//! Shared signal generators for the integration suites.
//!
//! No recorded speech ships with the repository, so corpus-level tests run
//! on synthetic clips with speech-like structure: pulse-train excitation
//! through formant resonators, noise fricatives, and silent pauses.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfc::audio::{AudioBuffer, TARGET_SAMPLE_RATE};

/// One clip of speech-like audio: randomly ordered voiced, fricative, and
/// pause segments, peak-normalized to 0.8. The first segment is always
/// voiced so a clip is never silent end to end.
pub fn speech_like_clip(seed: u64, len: usize) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sr = TARGET_SAMPLE_RATE as f64;
    let mut samples = vec![0.0f64; len];
    let mut pos = 0usize;
    let mut first = true;
    while pos < len {
        // 33..133 ms at 24 kHz: phone-like segment durations, so temporal
        // structure changes faster than the coarsest frame spacing.
        let seg = rng.gen_range(800..3200).min(len - pos);
        let kind = if first { 0 } else { rng.gen_range(0..100) };
        first = false;
        if kind < 62 {
            voiced_segment(&mut rng, &mut samples[pos..pos + seg], sr);
        } else if kind < 82 {
            fricative_segment(&mut rng, &mut samples[pos..pos + seg], sr);
        }
        // remaining probability mass: a pause, left as digital silence
        pos += seg;
    }
    let peak = samples.iter().fold(0.0f64, |acc, &s| acc.max(s.abs()));
    if peak > 0.0 {
        let gain = 0.8 / peak;
        for s in &mut samples {
            *s *= gain;
        }
    }
    AudioBuffer::new(samples, TARGET_SAMPLE_RATE)
}

/// A corpus of independent speech-like clips.
pub fn speech_corpus(n: usize, len: usize, seed: u64) -> Vec<AudioBuffer> {
    (0..n)
        .map(|i| speech_like_clip(seed.wrapping_add(i as u64), len))
        .collect()
}

/// Glottal-style pulse train with slight period jitter, shaped by three
/// parallel formant resonators.
fn voiced_segment(rng: &mut ChaCha8Rng, out: &mut [f64], sr: f64) {
    let f0 = rng.gen_range(80.0..240.0);
    let formants = [
        (rng.gen_range(300.0..900.0), 0.97, 1.0),
        (rng.gen_range(1100.0..2300.0), 0.96, 0.5),
        (rng.gen_range(2500.0..3500.0), 0.95, 0.25),
    ];
    let n = out.len();
    let period = (sr / f0).round() as usize;
    let mut excitation = vec![0.0f64; n];
    let mut t = rng.gen_range(0..period.max(1));
    while t < n {
        excitation[t] = 1.0;
        t += (period + rng.gen_range(0..5)).max(1);
    }
    for e in &mut excitation {
        *e += 0.01 * rng.gen_range(-1.0f64..1.0);
    }
    for (freq, r, gain) in formants {
        resonate(&excitation, out, freq, r, gain, sr);
    }
    edge_ramp(out, 120);
}

/// Broadband noise colored by a single high resonator.
fn fricative_segment(rng: &mut ChaCha8Rng, out: &mut [f64], sr: f64) {
    let n = out.len();
    let excitation: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0f64..1.0)).collect();
    let freq = rng.gen_range(3000.0..6000.0);
    resonate(&excitation, out, freq, 0.90, 0.05, sr);
    edge_ramp(out, 120);
}

/// Two-pole resonator y[n] = x[n] + 2r·cosθ·y[n−1] − r²·y[n−2], mixed into
/// `out` at `gain`.
fn resonate(excitation: &[f64], out: &mut [f64], freq: f64, r: f64, gain: f64, sr: f64) {
    let theta = 2.0 * std::f64::consts::PI * freq / sr;
    let a1 = 2.0 * r * theta.cos();
    let a2 = -r * r;
    let (mut y1, mut y2) = (0.0f64, 0.0f64);
    for (o, &x) in out.iter_mut().zip(excitation) {
        let y = x + a1 * y1 + a2 * y2;
        *o += gain * y;
        y2 = y1;
        y1 = y;
    }
}

/// Raised-cosine fade over the first and last `ramp` samples.
fn edge_ramp(out: &mut [f64], ramp: usize) {
    let ramp = ramp.min(out.len() / 2);
    let n = out.len();
    for i in 0..ramp {
        let w = 0.5 - 0.5 * (std::f64::consts::PI * i as f64 / ramp as f64).cos();
        out[i] *= w;
        out[n - 1 - i] *= w;
    }
}

/// A clip of `slots` coarse slots where one contiguous half is digital
/// silence and the other half is uniform noise. `silence_first` picks which.
pub fn half_silence_clip(seed: u64, slots: usize, silence_first: bool) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slot_samples = 1280;
    let len = slots * slot_samples;
    let half = (slots / 2) * slot_samples;
    let mut samples = vec![0.0f64; len];
    let noisy = if silence_first {
        &mut samples[half..]
    } else {
        &mut samples[..len - half]
    };
    for s in noisy.iter_mut() {
        *s = rng.gen_range(-0.5f64..0.5);
    }
    AudioBuffer::new(samples, TARGET_SAMPLE_RATE)
}

/// A light two-tone test clip for command-line round trips.
pub fn tone_clip(seed: u64, len: usize) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f1 = rng.gen_range(120.0..400.0);
    let f2 = rng.gen_range(500.0..1600.0);
    let sr = TARGET_SAMPLE_RATE as f64;
    let samples = (0..len)
        .map(|n| {
            let t = n as f64 / sr;
            0.5 * (2.0 * std::f64::consts::PI * f1 * t).sin()
                + 0.25 * (2.0 * std::f64::consts::PI * f2 * t).sin()
                + 0.05 * rng.gen_range(-1.0f64..1.0)
        })
        .collect();
    AudioBuffer::new(samples, TARGET_SAMPLE_RATE)
}
