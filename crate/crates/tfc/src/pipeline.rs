//! End-to-end encode and decode orchestration: the crate's public API.
//!
//! Encoding normalizes and pads the signal, produces the fine-rate latents
//! and their two pooled tiers, measures temporal entropy, allocates
//! granularity, quantizes only the selected frames of each tier, and
//! assembles the coded stream. Decoding reverses the path: dequantize per
//! tier, scatter back onto the timeline, fuse, run the decoder ladder, and
//! synthesize.
//!
//! The analysis half ([`analyze_signal`]) and the reconstruction half
//! ([`reconstruct_tiers`]) are exposed separately so the transform and
//! allocation paths can be exercised with quantization bypassed.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::allocator::{allocate_masks, GranularityMasks, GranularityRatios};
use crate::audio::{normalize_peak, pad_to_slot_multiple, AudioBuffer};
use crate::bitstream::{masks_to_patterns, patterns_to_masks, VfrStream};
use crate::entropy::{entropy_tracks, EntropyConfig, EntropyTracks};
use crate::error::{Error, Result};
use crate::fusion::{fuse, ladder_decode, LadderMode};
use crate::metrics::MetricConfig;
use crate::rvq::{
    codebooks_to_bytes, load_codebooks, rvq_decode, rvq_encode, save_codebooks,
    train_rvq, CodeSequence, RvqCodebooks,
};
use crate::transform::{
    analyze, downsample_latents, synthesize, LatentSequence, Level, ResolutionSpec,
    SLOT_FACTOR, STRIDE,
};

/// Dimension of every latent frame produced by the analysis transform.
pub const LATENT_DIM: usize = STRIDE;

/// Codec-wide settings. The defaults encode at the full quantizer depth
/// with a mixed allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecConfig {
    pub entropy: EntropyConfig,
    pub ratios: GranularityRatios,
    /// Quantizer stages used at encode time (must not exceed the trained
    /// depth of any codebook).
    pub n_q: usize,
    /// Decoder ladder variant; `Exact` is the codec path.
    pub ladder: LadderMode,
    pub metrics: MetricConfig,
}

impl Default for CodecConfig {
    fn default() -> CodecConfig {
        CodecConfig {
            entropy: EntropyConfig::default(),
            ratios: GranularityRatios::new(0.4, 0.3, 0.3)
                .expect("default ratios sum to one"),
            n_q: 8,
            ladder: LadderMode::Exact,
            metrics: MetricConfig::default(),
        }
    }
}

/// The three codebooks a coded stream refers to, one per tier.
#[derive(Debug, Clone, PartialEq)]
pub struct CodebookSet {
    pub fine: RvqCodebooks,
    pub medium: RvqCodebooks,
    pub coarse: RvqCodebooks,
}

const FINE_FILE: &str = "fine.tfcb";
const MEDIUM_FILE: &str = "medium.tfcb";
const COARSE_FILE: &str = "coarse.tfcb";

impl CodebookSet {
    /// Validates that the books carry the expected tier tags and agree on
    /// dimension and size.
    pub fn new(
        fine: RvqCodebooks,
        medium: RvqCodebooks,
        coarse: RvqCodebooks,
    ) -> Result<CodebookSet> {
        for (books, level) in [
            (&fine, Level::Fine),
            (&medium, Level::Medium),
            (&coarse, Level::Coarse),
        ] {
            if books.level != level {
                return Err(Error::CodebookMismatch {
                    expected: level.name().to_string(),
                    got: books.level.name().to_string(),
                });
            }
        }
        if medium.dim() != fine.dim() || coarse.dim() != fine.dim() {
            return Err(Error::ShapeMismatch(format!(
                "codebook dimensions {}/{}/{} disagree",
                fine.dim(),
                medium.dim(),
                coarse.dim()
            )));
        }
        if medium.size() != fine.size() || coarse.size() != fine.size() {
            return Err(Error::ShapeMismatch(format!(
                "codebook sizes {}/{}/{} disagree",
                fine.size(),
                medium.size(),
                coarse.size()
            )));
        }
        Ok(CodebookSet {
            fine,
            medium,
            coarse,
        })
    }

    pub fn dim(&self) -> usize {
        self.fine.dim()
    }

    pub fn size(&self) -> usize {
        self.fine.size()
    }

    pub fn codebook_bits(&self) -> u8 {
        self.fine.codebook_bits()
    }

    /// Deepest quantizer usable with every tier.
    pub fn max_stages(&self) -> usize {
        self.fine
            .num_stages()
            .min(self.medium.num_stages())
            .min(self.coarse.num_stages())
    }

    /// Identifier embedded in coded streams: a truncated SHA-256 of the
    /// three books' serialized bytes. Stable across save/load.
    pub fn hash(&self) -> Result<[u8; 16]> {
        let mut hasher = Sha256::new();
        for books in [&self.fine, &self.medium, &self.coarse] {
            hasher.update(codebooks_to_bytes(books)?);
        }
        let digest = hasher.finalize();
        Ok(digest[..16].try_into().expect("digest is 32 bytes"))
    }

    fn tier(&self, level: Level) -> &RvqCodebooks {
        match level {
            Level::Fine => &self.fine,
            Level::Medium => &self.medium,
            Level::Coarse => &self.coarse,
        }
    }

    /// Writes `fine.tfcb`, `medium.tfcb`, and `coarse.tfcb` under `dir`,
    /// creating the directory if needed.
    pub fn save_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_codebooks(&self.fine, dir.join(FINE_FILE))?;
        save_codebooks(&self.medium, dir.join(MEDIUM_FILE))?;
        save_codebooks(&self.coarse, dir.join(COARSE_FILE))
    }

    pub fn load_from_dir(dir: impl AsRef<Path>) -> Result<CodebookSet> {
        let dir = dir.as_ref();
        CodebookSet::new(
            load_codebooks(dir.join(FINE_FILE))?,
            load_codebooks(dir.join(MEDIUM_FILE))?,
            load_codebooks(dir.join(COARSE_FILE))?,
        )
    }
}

/// The fine-rate latents and their two pooled tiers.
#[derive(Debug, Clone, PartialEq)]
pub struct TierLatents {
    pub fine: LatentSequence,
    pub medium: LatentSequence,
    pub coarse: LatentSequence,
}

/// Everything the encoder derives from a signal before quantization.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalAnalysis {
    /// Peak-normalized input, zero-padded to a whole number of slots.
    pub padded: AudioBuffer,
    pub latents: TierLatents,
    pub tracks: EntropyTracks,
    pub masks: GranularityMasks,
}

/// Runs the analysis half of the encoder: normalize → pad → transform →
/// pool → entropy → allocation.
pub fn analyze_signal(audio: &AudioBuffer, config: &CodecConfig) -> Result<SignalAnalysis> {
    let normalized = normalize_peak(audio.clone())?;
    let padded = pad_to_slot_multiple(normalized, STRIDE, SLOT_FACTOR)?;
    let fine = analyze(&padded)?;
    let medium = downsample_latents(&fine, 2)?;
    let coarse = downsample_latents(&fine, 4)?;
    let tracks = entropy_tracks(&padded, &ResolutionSpec::tiers(), &config.entropy)?;
    let masks = allocate_masks(&tracks, config.ratios)?;
    Ok(SignalAnalysis {
        padded,
        latents: TierLatents {
            fine,
            medium,
            coarse,
        },
        tracks,
        masks,
    })
}

/// Runs the reconstruction half of the decoder on (possibly unquantized)
/// tier latents: fuse → ladder → synthesize → trim.
pub fn reconstruct_tiers(
    tiers: &TierLatents,
    masks: &GranularityMasks,
    mode: LadderMode,
    original_length: usize,
) -> Result<AudioBuffer> {
    let fused = fuse(&tiers.fine, &tiers.medium, &tiers.coarse, masks)?;
    let y_f = ladder_decode(&fused, masks, mode)?;
    let mut audio = synthesize(&y_f)?;
    if original_length > audio.samples.len() {
        return Err(Error::MalformedStructure(format!(
            "cannot trim {} synthesized samples to {original_length}",
            audio.samples.len()
        )));
    }
    audio.samples.truncate(original_length);
    audio.original_length = original_length;
    Ok(audio)
}

fn tier_index(level: Level) -> usize {
    match level {
        Level::Fine => 0,
        Level::Medium => 1,
        Level::Coarse => 2,
    }
}

/// Keeps only the mask-selected frames, preserving order and metadata.
fn select_frames(z: &LatentSequence, mask: &[bool]) -> Result<LatentSequence> {
    if mask.len() != z.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "mask of {} entries against {} frames",
            mask.len(),
            z.num_frames()
        )));
    }
    let d = z.dim();
    let mut data = Vec::with_capacity(mask.iter().filter(|&&b| b).count() * d);
    for (t, &keep) in mask.iter().enumerate() {
        if keep {
            data.extend_from_slice(z.frame(t));
        }
    }
    LatentSequence::new(data, d, z.frame_rate, z.stride, z.receptive_field)
}

/// Inverse of [`select_frames`]: places compacted frames at the mask's
/// positions and zeros elsewhere.
fn scatter_frames(
    compact: &LatentSequence,
    mask: &[bool],
    level: Level,
) -> Result<LatentSequence> {
    let spec = ResolutionSpec::for_level(level);
    let d = compact.dim();
    let mut data = vec![0.0; mask.len() * d];
    let mut src = 0;
    for (t, &keep) in mask.iter().enumerate() {
        if keep {
            data[t * d..(t + 1) * d].copy_from_slice(compact.frame(src));
            src += 1;
        }
    }
    if src != compact.num_frames() {
        return Err(Error::ShapeMismatch(format!(
            "{} decoded frames for {src} selected positions",
            compact.num_frames()
        )));
    }
    LatentSequence::new(data, d, spec.frame_rate, spec.stride, spec.receptive_field)
}

/// Encodes a signal into a coded stream using the given codebooks.
///
/// Frames not selected by the granularity masks are never quantized nor
/// emitted; the stream carries exactly `n_q` indices per selected frame.
pub fn encode(
    audio: &AudioBuffer,
    books: &CodebookSet,
    config: &CodecConfig,
) -> Result<VfrStream> {
    if config.n_q == 0 || config.n_q > books.max_stages() {
        return Err(Error::InvalidConfig(format!(
            "n_q = {} outside the trained depth 1..={}",
            config.n_q,
            books.max_stages()
        )));
    }
    if books.dim() != LATENT_DIM {
        return Err(Error::CodebookMismatch {
            expected: format!("latent dimension {LATENT_DIM}"),
            got: format!("latent dimension {}", books.dim()),
        });
    }

    let analysis = analyze_signal(audio, config)?;
    let masks = &analysis.masks;
    let patterns = masks_to_patterns(masks)?;

    let mut tier_codes: Vec<CodeSequence> = Vec::with_capacity(3);
    for (z, mask, level) in [
        (&analysis.latents.fine, &masks.b_f, Level::Fine),
        (&analysis.latents.medium, &masks.b_m, Level::Medium),
        (&analysis.latents.coarse, &masks.b_c, Level::Coarse),
    ] {
        let selected = select_frames(z, mask)?;
        let (codes, _) = rvq_encode(&selected, books.tier(level), config.n_q)?;
        tier_codes.push(codes);
    }

    let total_frames: usize = patterns.iter().map(|p| p.frames()).sum();
    let mut payload = Vec::with_capacity(total_frames * config.n_q);
    let mut cursors = [0usize; 3];
    for pattern in &patterns {
        for &level in pattern.levels() {
            let i = tier_index(level);
            payload.extend_from_slice(tier_codes[i].frame_indices(cursors[i]));
            cursors[i] += 1;
        }
    }

    Ok(VfrStream {
        sample_rate: analysis.padded.sample_rate,
        stride: STRIDE as u16,
        n_q: config.n_q as u8,
        codebook_bits: books.codebook_bits(),
        latent_dim: LATENT_DIM as u16,
        original_length: analysis.padded.original_length as u64,
        codebook_hash: books.hash()?,
        patterns,
        payload,
    })
}

/// Decodes a coded stream back into audio of `original_length` samples.
pub fn decode(
    stream: &VfrStream,
    books: &CodebookSet,
    config: &CodecConfig,
) -> Result<AudioBuffer> {
    let expected = books.hash()?;
    if stream.codebook_hash != expected {
        return Err(Error::CodebookMismatch {
            expected: hex(&expected),
            got: hex(&stream.codebook_hash),
        });
    }
    let n_q = stream.n_q as usize;
    let total_frames = stream.num_frames();
    if stream.payload.len() != total_frames * n_q {
        return Err(Error::MalformedStructure(format!(
            "payload holds {} indices but the patterns imply {}",
            stream.payload.len(),
            total_frames * n_q
        )));
    }

    let masks = patterns_to_masks(&stream.patterns);
    let mut tier_indices: [Vec<u16>; 3] = Default::default();
    let mut offset = 0;
    for pattern in &stream.patterns {
        for &level in pattern.levels() {
            tier_indices[tier_index(level)]
                .extend_from_slice(&stream.payload[offset..offset + n_q]);
            offset += n_q;
        }
    }

    let mut scattered: Vec<LatentSequence> = Vec::with_capacity(3);
    for (indices, (mask, level)) in tier_indices.into_iter().zip([
        (&masks.b_f, Level::Fine),
        (&masks.b_m, Level::Medium),
        (&masks.b_c, Level::Coarse),
    ]) {
        let frames = indices.len() / n_q;
        let codes = CodeSequence::new(indices, n_q, frames)?;
        let compact = rvq_decode(&codes, books.tier(level))?;
        scattered.push(scatter_frames(&compact, mask, level)?);
    }
    let [fine, medium, coarse]: [LatentSequence; 3] =
        scattered.try_into().expect("three tiers");

    reconstruct_tiers(
        &TierLatents {
            fine,
            medium,
            coarse,
        },
        &masks,
        config.ladder,
        stream.original_length as usize,
    )
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains a codebook set on a corpus of clips: each clip is normalized,
/// padded, transformed, and pooled, and each tier's codebooks are trained
/// on its own latents. Returns the per-stage mean squared distortions per
/// tier alongside the books.
pub fn train_codebook_set(
    clips: &[AudioBuffer],
    n_q: usize,
    k: usize,
    seed: u64,
    iters: usize,
) -> Result<(CodebookSet, [Vec<f64>; 3])> {
    if clips.is_empty() {
        return Err(Error::EmptyInput("no training clips".into()));
    }
    let mut fine_latents = Vec::with_capacity(clips.len());
    let mut medium_latents = Vec::with_capacity(clips.len());
    let mut coarse_latents = Vec::with_capacity(clips.len());
    for clip in clips {
        let normalized = normalize_peak(clip.clone())?;
        let padded = pad_to_slot_multiple(normalized, STRIDE, SLOT_FACTOR)?;
        let fine = analyze(&padded)?;
        medium_latents.push(downsample_latents(&fine, 2)?);
        coarse_latents.push(downsample_latents(&fine, 4)?);
        fine_latents.push(fine);
    }
    // distinct seeds per tier so no two tiers share an initialization
    let (fine, d_f) = train_rvq(&fine_latents, Level::Fine, n_q, k, seed, iters)?;
    let (medium, d_m) = train_rvq(
        &medium_latents,
        Level::Medium,
        n_q,
        k,
        seed.wrapping_add(1),
        iters,
    )?;
    let (coarse, d_c) = train_rvq(
        &coarse_latents,
        Level::Coarse,
        n_q,
        k,
        seed.wrapping_add(2),
        iters,
    )?;
    Ok((CodebookSet::new(fine, medium, coarse)?, [d_f, d_m, d_c]))
}
