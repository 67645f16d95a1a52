//! Invertible MDCT analysis/synthesis and latent downsampling.
//!
//! The analysis transform slices the signal into 640-sample windows hopped by
//! 320 samples and produces 320 MDCT coefficients per frame — 75 frames per
//! second at 24 kHz. A sine window satisfying the Princen–Bradley condition
//! makes synthesis-by-overlap-add reconstruct every interior sample exactly
//! (up to double-precision rounding), so any end-to-end distortion is
//! attributable to quantization and granularity choices alone.
//!
//! Medium- and coarse-rate latents are produced by average-pooling the fine
//! sequence by 2 and 4.

use std::f64::consts::PI;
use std::sync::OnceLock;

use crate::audio::{AudioBuffer, TARGET_SAMPLE_RATE};
use crate::error::{Error, Result};

/// Analysis hop in samples; one fine frame per stride.
pub const STRIDE: usize = 320;
/// MDCT window length (two strides).
pub const WINDOW: usize = 2 * STRIDE;
/// Coarse slots span this many fine frames; inputs are padded to a multiple.
pub const SLOT_FACTOR: usize = 4;
/// Fine frame rate in Hz at the target sample rate.
pub const FINE_FRAME_RATE: f64 = TARGET_SAMPLE_RATE as f64 / STRIDE as f64;

/// Temporal granularity tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Level {
    Fine,
    Medium,
    Coarse,
}

impl Level {
    /// Fine frames per frame of this tier.
    pub fn span(self) -> usize {
        match self {
            Level::Fine => 1,
            Level::Medium => 2,
            Level::Coarse => 4,
        }
    }

    /// Lowercase name used in reports and CSV output.
    pub fn name(self) -> &'static str {
        match self {
            Level::Fine => "fine",
            Level::Medium => "medium",
            Level::Coarse => "coarse",
        }
    }
}

/// Stride, receptive field, and frame rate of one granularity tier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolutionSpec {
    pub level: Level,
    pub stride: usize,
    pub receptive_field: usize,
    pub frame_rate: f64,
}

impl ResolutionSpec {
    /// The tier layout for the codec's standard configuration: strides
    /// 320/640/1280, receptive fields W, W+s, W+3s with W = 640 and s = 320.
    pub fn for_level(level: Level) -> ResolutionSpec {
        let span = level.span();
        ResolutionSpec {
            level,
            stride: STRIDE * span,
            receptive_field: WINDOW + STRIDE * (span - 1),
            frame_rate: FINE_FRAME_RATE / span as f64,
        }
    }

    /// All three tiers, fine first.
    pub fn tiers() -> [ResolutionSpec; 3] {
        [
            ResolutionSpec::for_level(Level::Fine),
            ResolutionSpec::for_level(Level::Medium),
            ResolutionSpec::for_level(Level::Coarse),
        ]
    }
}

/// A sequence of equal-dimension latent vectors with its temporal metadata.
///
/// Frames are stored row-major in one flat buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    data: Vec<f64>,
    dim: usize,
    pub frame_rate: f64,
    pub stride: usize,
    pub receptive_field: usize,
}

impl LatentSequence {
    pub fn new(
        data: Vec<f64>,
        dim: usize,
        frame_rate: f64,
        stride: usize,
        receptive_field: usize,
    ) -> Result<LatentSequence> {
        if dim == 0 {
            return Err(Error::ShapeMismatch("latent dimension must be positive".into()));
        }
        if data.len() % dim != 0 {
            return Err(Error::ShapeMismatch(format!(
                "{} values do not tile into frames of dimension {dim}",
                data.len()
            )));
        }
        if receptive_field < stride {
            return Err(Error::ShapeMismatch(
                "receptive field must be at least one stride".into(),
            ));
        }
        Ok(LatentSequence {
            data,
            dim,
            frame_rate,
            stride,
            receptive_field,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.dim..(t + 1) * self.dim]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// MDCT analyzer/synthesizer with a precomputed windowed cosine basis.
pub struct Mdct {
    stride: usize,
    window: Vec<f64>,
    /// cos(π/N · (n + 0.5 + N/2) · (k + 0.5)) stored row-major by n (2N × N).
    basis: Vec<f64>,
}

impl Mdct {
    pub fn new(stride: usize) -> Mdct {
        let n = stride;
        let len = 2 * n;
        let window: Vec<f64> = (0..len)
            .map(|i| (PI / len as f64 * (i as f64 + 0.5)).sin())
            .collect();
        let mut basis = vec![0.0; len * n];
        for (i, row) in basis.chunks_exact_mut(n).enumerate() {
            let phase = i as f64 + 0.5 + n as f64 / 2.0;
            for (k, b) in row.iter_mut().enumerate() {
                *b = (PI / n as f64 * phase * (k as f64 + 0.5)).cos();
            }
        }
        Mdct {
            stride,
            window,
            basis,
        }
    }

    /// Forward MDCT. The input must be padded to a whole number of coarse
    /// slots; the output has one 320-dimensional frame per stride. Frame `t`
    /// windows samples `[t·s, t·s + 2s)`, with the final half-window reading
    /// zeros past the end of the signal.
    pub fn analyze(&self, audio: &AudioBuffer) -> Result<LatentSequence> {
        audio.ensure_target_rate()?;
        let n = self.stride;
        let len = audio.samples.len();
        if len % (n * SLOT_FACTOR) != 0 {
            return Err(Error::Misaligned(format!(
                "signal length {len} is not a multiple of one coarse slot ({} samples); pad first",
                n * SLOT_FACTOR
            )));
        }
        let frames = len / n;
        let mut data = vec![0.0; frames * n];
        let mut windowed = vec![0.0; 2 * n];
        for t in 0..frames {
            let start = t * n;
            let avail = (len - start).min(2 * n);
            for i in 0..avail {
                windowed[i] = self.window[i] * audio.samples[start + i];
            }
            for w in windowed.iter_mut().skip(avail) {
                *w = 0.0;
            }
            let out = &mut data[t * n..(t + 1) * n];
            for (i, &v) in windowed.iter().enumerate() {
                if v != 0.0 {
                    let row = &self.basis[i * n..(i + 1) * n];
                    for (k, &b) in row.iter().enumerate() {
                        out[k] += v * b;
                    }
                }
            }
        }
        LatentSequence::new(
            data,
            n,
            audio.sample_rate as f64 / n as f64,
            n,
            2 * n,
        )
    }

    /// Inverse MDCT with overlap-add. Interior samples (everything past the
    /// first stride of an analyze→synthesize round trip) reconstruct exactly
    /// up to double-precision rounding.
    pub fn synthesize(&self, latents: &LatentSequence) -> Result<AudioBuffer> {
        let n = self.stride;
        if latents.dim() != n {
            return Err(Error::ShapeMismatch(format!(
                "expected latent dimension {n}, got {}",
                latents.dim()
            )));
        }
        let frames = latents.num_frames();
        let mut samples = vec![0.0; frames * n];
        let scale = 2.0 / n as f64;
        for t in 0..frames {
            let coeffs = latents.frame(t);
            let start = t * n;
            let avail = (samples.len() - start).min(2 * n);
            for i in 0..avail {
                let row = &self.basis[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for (k, &b) in row.iter().enumerate() {
                    acc += coeffs[k] * b;
                }
                samples[start + i] += scale * self.window[i] * acc;
            }
        }
        Ok(AudioBuffer::new(samples, TARGET_SAMPLE_RATE))
    }
}

fn default_mdct() -> &'static Mdct {
    static MDCT: OnceLock<Mdct> = OnceLock::new();
    MDCT.get_or_init(|| Mdct::new(STRIDE))
}

/// Forward MDCT at the codec's standard stride (320 samples, 75 Hz).
pub fn analyze(audio: &AudioBuffer) -> Result<LatentSequence> {
    default_mdct().analyze(audio)
}

/// Inverse MDCT at the codec's standard stride.
pub fn synthesize(latents: &LatentSequence) -> Result<AudioBuffer> {
    default_mdct().synthesize(latents)
}

/// Average-pools consecutive frames by `factor` (2 or 4). Pooling by 4 is two
/// cascaded halvings, so `downsample_latents(z, 4)` equals
/// `downsample_latents(downsample_latents(z, 2), 2)` bit for bit.
pub fn downsample_latents(latents: &LatentSequence, factor: usize) -> Result<LatentSequence> {
    match factor {
        2 => pool_by_two(latents),
        4 => pool_by_two(&pool_by_two(latents)?),
        other => Err(Error::InvalidConfig(format!(
            "downsample factor must be 2 or 4, got {other}"
        ))),
    }
}

fn pool_by_two(latents: &LatentSequence) -> Result<LatentSequence> {
    let t = latents.num_frames();
    if t % 2 != 0 {
        return Err(Error::Misaligned(format!(
            "cannot halve an odd frame count ({t})"
        )));
    }
    let dim = latents.dim();
    let mut data = vec![0.0; t / 2 * dim];
    for (pair, out) in latents.data().chunks_exact(2 * dim).zip(data.chunks_exact_mut(dim)) {
        for d in 0..dim {
            out[d] = (pair[d] + pair[dim + d]) / 2.0;
        }
    }
    LatentSequence::new(
        data,
        dim,
        latents.frame_rate / 2.0,
        latents.stride * 2,
        latents.receptive_field + latents.stride,
    )
}
