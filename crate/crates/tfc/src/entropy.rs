//! Non-parametric temporal entropy of waveform segments.
//!
//! Each sample's amplitude is soft-binned against a uniform grid on [-1, 1]
//! via a Gaussian affinity; averaging the affinities over a segment and
//! normalizing yields a distribution whose Shannon entropy (in nats) measures
//! how busy the segment is. Silence and steady tones score low, wideband
//! transients score high. Sliding this measurement along the signal at each
//! granularity tier's stride produces the entropy tracks the allocator ranks.

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::transform::ResolutionSpec;

/// Parameters of the soft-binning entropy estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyConfig {
    /// Number of amplitude bins (≥ 2).
    pub num_bins: usize,
    /// Gaussian affinity width, in amplitude units (> 0).
    pub sigma: f64,
    /// Stabilizer added to the normalizing sum (> 0).
    pub epsilon: f64,
}

impl Default for EntropyConfig {
    /// 64 bins, sigma of one bin width, and a 1e-9 stabilizer.
    fn default() -> Self {
        EntropyConfig {
            num_bins: 64,
            sigma: 2.0 / 63.0,
            epsilon: 1e-9,
        }
    }
}

impl EntropyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "entropy needs at least 2 bins, got {}",
                self.num_bins
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        Ok(())
    }

    /// Largest value the estimator can produce: log(num_bins) nats.
    pub fn max_entropy(&self) -> f64 {
        (self.num_bins as f64).ln()
    }
}

/// Per-tier entropy sequences aligned to the latent frames.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyTracks {
    /// One value per fine frame (length T).
    pub h_f: Vec<f64>,
    /// One value per medium frame (length T/2).
    pub h_m: Vec<f64>,
    /// One value per coarse frame (length T/4).
    pub h_c: Vec<f64>,
}

/// Uniform bin centers from -1 to +1 inclusive: u_i = -1 + 2i/(N-1).
pub fn bin_centers(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "entropy needs at least 2 bins, got {n}"
        )));
    }
    Ok((0..n)
        .map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64)
        .collect())
}

/// Gaussian affinity of one amplitude to every bin center:
/// p_i = exp(-(x - u_i)² / 2σ²).
pub fn sample_affinities(x: f64, config: &EntropyConfig) -> Result<Vec<f64>> {
    config.validate()?;
    let bins = bin_centers(config.num_bins)?;
    let inv_two_sigma_sq = 1.0 / (2.0 * config.sigma * config.sigma);
    Ok(bins
        .iter()
        .map(|&u| (-(x - u) * (x - u) * inv_two_sigma_sq).exp())
        .collect())
}

/// Shannon entropy (nats) of a segment's averaged, epsilon-normalized
/// affinity distribution. Always inside [0, log N].
pub fn segment_entropy(segment: &[f64], config: &EntropyConfig) -> Result<f64> {
    config.validate()?;
    let bins = bin_centers(config.num_bins)?;
    entropy_of_segment(segment, &bins, config)
}

fn entropy_of_segment(segment: &[f64], bins: &[f64], config: &EntropyConfig) -> Result<f64> {
    if segment.is_empty() {
        return Err(Error::EmptyInput(
            "cannot measure entropy of an empty segment".into(),
        ));
    }
    let inv_two_sigma_sq = 1.0 / (2.0 * config.sigma * config.sigma);
    let mut acc = vec![0.0; bins.len()];
    let mut cached = vec![0.0; bins.len()];
    let mut cached_x = f64::NAN;
    let mut constant = true;
    for (i, &x) in segment.iter().enumerate() {
        // Runs of identical samples (silence, padding) reuse the last row.
        if x != cached_x {
            constant &= i == 0;
            for (c, &u) in cached.iter_mut().zip(bins) {
                *c = (-(x - u) * (x - u) * inv_two_sigma_sq).exp();
            }
            cached_x = x;
        }
        for (a, &c) in acc.iter_mut().zip(&cached) {
            *a += c;
        }
    }
    // The mean of identical rows is the row itself. Taking it directly (not
    // sum/len, whose rounding depends on len) keeps the entropy of a
    // constant segment independent of its length, so silence ties exactly.
    if constant {
        acc.copy_from_slice(&cached);
    }

    let len = segment.len() as f64;
    let mut sum = 0.0;
    for a in &mut acc {
        if !constant {
            *a /= len;
        }
        sum += *a;
    }
    let norm = sum + config.epsilon;
    let mut h = 0.0;
    for &a in &acc {
        let p = a / norm;
        if p > 0.0 {
            h -= p * p.ln();
        }
    }
    // The epsilon sub-normalization can overshoot log N by ~1e-10 when N = 2;
    // the estimator's contract is a value inside [0, log N].
    Ok(h.clamp(0.0, config.max_entropy()))
}

/// Slides an entropy window along the signal for each granularity tier.
///
/// At tier stride `s` and receptive field `w`, output index k covers samples
/// `[k·s - (w - s)/2, k·s - (w - s)/2 + w)` — centered on the latent frame —
/// clamped to the signal bounds, so edge windows shorten rather than read
/// zeros. Track lengths are T, T/2, and T/4.
pub fn entropy_tracks(
    audio: &AudioBuffer,
    specs: &[ResolutionSpec; 3],
    config: &EntropyConfig,
) -> Result<EntropyTracks> {
    config.validate()?;
    let [fine, medium, coarse] = specs;
    if medium.stride != 2 * fine.stride || coarse.stride != 4 * fine.stride {
        return Err(Error::ShapeMismatch(
            "tier strides must be in 1:2:4 proportion".into(),
        ));
    }
    let len = audio.samples.len();
    if len < coarse.stride {
        return Err(Error::EmptyInput(format!(
            "signal of {len} samples is shorter than one coarse stride ({})",
            coarse.stride
        )));
    }
    if len % coarse.stride != 0 {
        return Err(Error::Misaligned(format!(
            "signal length {len} is not a multiple of the coarse stride ({}); pad first",
            coarse.stride
        )));
    }

    let bins = bin_centers(config.num_bins)?;
    let track_for = |spec: &ResolutionSpec| -> Result<Vec<f64>> {
        let count = len / spec.stride;
        let back = (spec.receptive_field - spec.stride) / 2;
        let mut track = Vec::with_capacity(count);
        for k in 0..count {
            let center_start = (k * spec.stride) as isize - back as isize;
            let lo = center_start.max(0) as usize;
            let hi = ((center_start + spec.receptive_field as isize) as usize).min(len);
            track.push(entropy_of_segment(&audio.samples[lo..hi], &bins, config)?);
        }
        Ok(track)
    };

    Ok(EntropyTracks {
        h_f: track_for(fine)?,
        h_m: track_for(medium)?,
        h_c: track_for(coarse)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::TARGET_SAMPLE_RATE;
    use crate::transform::{Level, STRIDE};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(n: usize, sigma: f64, epsilon: f64) -> EntropyConfig {
        EntropyConfig {
            num_bins: n,
            sigma,
            epsilon,
        }
    }

    #[test]
    fn bin_centers_span_minus_one_to_one() {
        assert_eq!(bin_centers(2).unwrap(), vec![-1.0, 1.0]);
        assert_eq!(bin_centers(3).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert_eq!(bin_centers(5).unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(matches!(bin_centers(1), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn affinities_follow_the_gaussian() {
        let p = sample_affinities(0.0, &config(3, 1.0, 1e-9)).unwrap();
        let e = (-0.5f64).exp();
        assert!((p[0] - e).abs() < 1e-15);
        assert_eq!(p[1], 1.0);
        assert!((p[2] - e).abs() < 1e-15);

        // amplitude sitting exactly on a bin center scores exactly 1 there
        let p = sample_affinities(-1.0, &config(7, 0.3, 1e-9)).unwrap();
        assert_eq!(p[0], 1.0);

        // equal distances to two bins give equal affinities
        let p = sample_affinities(0.25, &config(5, 0.5, 1e-9)).unwrap();
        assert_eq!(p[2], p[3]);
        assert!((p[2] - (-0.125f64).exp()).abs() < 1e-15);
        assert!((p[2] - 0.8825).abs() < 1e-4);
    }

    #[test]
    fn wide_sigma_silence_is_nearly_uniform_over_two_bins() {
        // with sigma 10, both bins are equidistant from 0, so the
        // distribution is uniform and H sits at log 2 (minus an epsilon bite)
        let h = segment_entropy(&[0.0; 100], &config(2, 10.0, 1e-12)).unwrap();
        assert!((h - std::f64::consts::LN_2).abs() < 1e-9, "H = {h}");
    }

    #[test]
    fn silence_scores_below_noise() {
        let cfg = EntropyConfig::default();
        let h_silence = segment_entropy(&vec![0.0; 24000], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let noise: Vec<f64> = (0..24000).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let h_noise = segment_entropy(&noise, &cfg).unwrap();
            assert!(h_silence < h_noise, "{h_silence} !< {h_noise}");
        }
    }

    #[test]
    fn single_sample_collapses_to_normalized_affinities() {
        let cfg = EntropyConfig::default();
        let x = 0.3172;
        let p = sample_affinities(x, &cfg).unwrap();
        let sum: f64 = p.iter().sum();
        // far bins underflow to affinity 0; the 0·log 0 = 0 convention drops them
        let expected: f64 = -p
            .iter()
            .map(|&v| v / (sum + cfg.epsilon))
            .filter(|&q| q > 0.0)
            .map(|q| q * q.ln())
            .sum::<f64>();
        let h = segment_entropy(&[x], &cfg).unwrap();
        assert!((h - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_segment_is_rejected() {
        assert!(matches!(
            segment_entropy(&[], &EntropyConfig::default()),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(segment_entropy(&[0.0], &config(1, 1.0, 1e-9)).is_err());
        assert!(segment_entropy(&[0.0], &config(4, 0.0, 1e-9)).is_err());
        assert!(segment_entropy(&[0.0], &config(4, 1.0, 0.0)).is_err());
    }

    #[test]
    fn track_lengths_follow_the_tier_strides() {
        let audio = AudioBuffer::new(vec![0.1; 24320], TARGET_SAMPLE_RATE);
        let tracks =
            entropy_tracks(&audio, &ResolutionSpec::tiers(), &EntropyConfig::default()).unwrap();
        assert_eq!(tracks.h_f.len(), 76);
        assert_eq!(tracks.h_m.len(), 38);
        assert_eq!(tracks.h_c.len(), 19);
    }

    #[test]
    fn constant_input_gives_constant_tracks() {
        let audio = AudioBuffer::new(vec![0.0; 7680], TARGET_SAMPLE_RATE);
        let tracks =
            entropy_tracks(&audio, &ResolutionSpec::tiers(), &EntropyConfig::default()).unwrap();
        for track in [&tracks.h_f, &tracks.h_m, &tracks.h_c] {
            let (lo, hi) = track
                .iter()
                .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
            assert!(hi - lo < 1e-12, "track varies: {lo}..{hi}");
        }
    }

    #[test]
    fn tracks_match_segment_entropy_on_their_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..5120).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let audio = AudioBuffer::new(samples.clone(), TARGET_SAMPLE_RATE);
        let cfg = EntropyConfig::default();
        let tracks = entropy_tracks(&audio, &ResolutionSpec::tiers(), &cfg).unwrap();

        // spot-check a few windows of each tier against direct slices
        let check = |level: Level, k: usize, got: f64| {
            let spec = ResolutionSpec::for_level(level);
            let start = (k * spec.stride) as isize - 160;
            let lo = start.max(0) as usize;
            let hi = ((start + spec.receptive_field as isize) as usize).min(samples.len());
            let want = segment_entropy(&samples[lo..hi], &cfg).unwrap();
            assert_eq!(got, want, "{level:?} window {k}");
        };
        check(Level::Fine, 0, tracks.h_f[0]);
        check(Level::Fine, 9, tracks.h_f[9]);
        check(Level::Fine, 15, tracks.h_f[15]);
        check(Level::Medium, 0, tracks.h_m[0]);
        check(Level::Medium, 5, tracks.h_m[5]);
        check(Level::Coarse, 3, tracks.h_c[3]);
    }

    #[test]
    fn coarse_track_separates_silence_from_noise() {
        // 0.5 s of silence then 0.5 s of noise (padded to 24320): every
        // coarse window fully inside the silent half must score below every
        // window fully inside the noisy half.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mut samples = vec![0.0; 24320];
            for s in samples[12000..24000].iter_mut() {
                *s = rng.gen_range(-1.0..1.0);
            }
            let audio = AudioBuffer::new(samples, TARGET_SAMPLE_RATE);
            let tracks =
                entropy_tracks(&audio, &ResolutionSpec::tiers(), &EntropyConfig::default())
                    .unwrap();
            // window k covers [1280k - 160, 1280k + 1440): fully silent for
            // k ≤ 8, fully noisy for 10 ≤ k ≤ 17
            let silent_max = tracks.h_c[..=8].iter().cloned().fold(f64::MIN, f64::max);
            let noisy_min = tracks.h_c[10..=17].iter().cloned().fold(f64::MAX, f64::min);
            assert!(silent_max < noisy_min, "{silent_max} !< {noisy_min}");
        }
    }

    #[test]
    fn short_or_misaligned_audio_is_rejected() {
        let tiers = ResolutionSpec::tiers();
        let cfg = EntropyConfig::default();
        let short = AudioBuffer::new(vec![0.0; 640], TARGET_SAMPLE_RATE);
        assert!(matches!(
            entropy_tracks(&short, &tiers, &cfg),
            Err(Error::EmptyInput(_))
        ));
        let misaligned = AudioBuffer::new(vec![0.0; 1280 + STRIDE], TARGET_SAMPLE_RATE);
        assert!(matches!(
            entropy_tracks(&misaligned, &tiers, &cfg),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn mixtures_of_separated_constants_raise_entropy() {
        let cfg = EntropyConfig::default();
        for (a, b) in [(-0.8, 0.7), (-0.3, 0.4), (0.0, 0.9)] {
            let h_a = segment_entropy(&vec![a; 200], &cfg).unwrap();
            let h_b = segment_entropy(&vec![b; 200], &cfg).unwrap();
            let mut mix = vec![a; 100];
            mix.extend(vec![b; 100]);
            let h_mix = segment_entropy(&mix, &cfg).unwrap();
            assert!(h_mix >= h_a.max(h_b), "H({a},{b}) = {h_mix} < max({h_a}, {h_b})");
        }
    }

    proptest! {
        #[test]
        fn entropy_stays_inside_its_bounds(
            samples in proptest::collection::vec(-1.0f64..=1.0, 1..200),
            n in 2usize..32,
            sigma in 0.01f64..2.0,
        ) {
            let cfg = config(n, sigma, 1e-9);
            let h = segment_entropy(&samples, &cfg).unwrap();
            prop_assert!(h >= 0.0);
            prop_assert!(h <= cfg.max_entropy());
        }

        #[test]
        fn entropy_ignores_sample_order(
            samples in proptest::collection::vec(-1.0f64..=1.0, 2..100),
            seed in 0u64..1000,
        ) {
            let cfg = EntropyConfig::default();
            let h = segment_entropy(&samples, &cfg).unwrap();
            let mut shuffled = samples.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // Fisher–Yates
            for i in (1..shuffled.len()).rev() {
                let j = rng.gen_range(0..=i);
                shuffled.swap(i, j);
            }
            let h2 = segment_entropy(&shuffled, &cfg).unwrap();
            prop_assert!((h - h2).abs() < 1e-12);
        }
    }
}
