//! Residual vector quantization with offline k-means codebook training.
//!
//! Each stage quantizes the residual left by the previous stages: stage 1
//! sees the raw latent, stage 2 the difference between the latent and stage
//! 1's codeword, and so on. Decoding sums the indexed codewords. Because the
//! recursion is causal in the stage index, a stream encoded with `n_q`
//! stages can be decoded (or re-encoded) with any smaller count — the
//! dropout property the bitstream's global `n_q` relies on.
//!
//! Codebooks are trained per granularity tier by residual k-means: stage i
//! runs seeded k-means++ plus Lloyd iterations on the residuals after stages
//! < i. Centroids are stored as 32-bit floats, and training computes its
//! residuals from the stored (rounded) values so that training-time and
//! encode-time arithmetic agree exactly.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitstream::crc32;
use crate::error::{Error, Result};
use crate::transform::{LatentSequence, Level, ResolutionSpec};

/// Stages trained by default.
pub const DEFAULT_NUM_STAGES: usize = 32;
/// Stages used at encode time by default (codebook dropout).
pub const DEFAULT_INFERENCE_STAGES: usize = 8;

const CODEBOOK_MAGIC: &[u8; 4] = b"TFCB";
const CODEBOOK_VERSION: u8 = 1;

/// An ordered set of RVQ stage codebooks for one granularity tier.
///
/// Every stage holds `size` codewords of dimension `dim`, stored row-major
/// as 32-bit floats. `size` is a power of two so indices pack exactly into
/// `codebook_bits` bits.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebooks {
    stages: Vec<Vec<f32>>,
    dim: usize,
    size: usize,
    pub level: Level,
    /// Seed the books were trained with; absent for books loaded from disk
    /// (the file format does not record it).
    pub training_seed: Option<u64>,
}

impl RvqCodebooks {
    pub fn new(
        stages: Vec<Vec<f32>>,
        dim: usize,
        size: usize,
        level: Level,
        training_seed: Option<u64>,
    ) -> Result<RvqCodebooks> {
        if stages.is_empty() {
            return Err(Error::InvalidConfig("codebooks need at least one stage".into()));
        }
        if dim == 0 {
            return Err(Error::InvalidConfig("codeword dimension must be positive".into()));
        }
        if !size.is_power_of_two() || size < 2 || size > 1 << 15 {
            return Err(Error::InvalidConfig(format!(
                "codebook size must be a power of two in [2, 32768], got {size}"
            )));
        }
        for (i, stage) in stages.iter().enumerate() {
            if stage.len() != size * dim {
                return Err(Error::ShapeMismatch(format!(
                    "stage {i} holds {} values, expected {size}×{dim}",
                    stage.len()
                )));
            }
        }
        Ok(RvqCodebooks {
            stages,
            dim,
            size,
            level,
            training_seed,
        })
    }

    /// Number of trained stages N_q.
    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Codeword dimension D.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Codewords per stage K.
    pub fn size(&self) -> usize {
        self.size
    }

    /// Bits per packed index: log2(K).
    pub fn codebook_bits(&self) -> u8 {
        self.size.trailing_zeros() as u8
    }

    /// One codeword as stored.
    pub fn codeword(&self, stage: usize, index: usize) -> &[f32] {
        &self.stages[stage][index * self.dim..(index + 1) * self.dim]
    }

    /// One stage widened to f64 for exact-order arithmetic.
    fn stage_f64(&self, stage: usize) -> Vec<f64> {
        self.stages[stage].iter().map(|&v| v as f64).collect()
    }
}

/// Quantizer indices for a sequence of frames, `n_q` per frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeSequence {
    indices: Vec<u16>,
    pub n_q: usize,
    num_frames: usize,
}

impl CodeSequence {
    pub fn new(indices: Vec<u16>, n_q: usize, num_frames: usize) -> Result<CodeSequence> {
        if n_q == 0 {
            return Err(Error::InvalidConfig("n_q must be at least 1".into()));
        }
        if indices.len() != n_q * num_frames {
            return Err(Error::ShapeMismatch(format!(
                "{} indices do not tile into {num_frames} frames × {n_q} stages",
                indices.len()
            )));
        }
        Ok(CodeSequence {
            indices,
            n_q,
            num_frames,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    /// The `n_q` stage indices of frame `t`.
    pub fn frame_indices(&self, t: usize) -> &[u16] {
        &self.indices[t * self.n_q..(t + 1) * self.n_q]
    }

    pub fn indices(&self) -> &[u16] {
        &self.indices
    }

    /// Keeps only the first `n_q` stages of every frame (codebook dropout).
    pub fn truncated(&self, n_q: usize) -> Result<CodeSequence> {
        if n_q == 0 || n_q > self.n_q {
            return Err(Error::InvalidConfig(format!(
                "cannot truncate {} stages to {n_q}",
                self.n_q
            )));
        }
        let indices = (0..self.num_frames)
            .flat_map(|t| self.frame_indices(t)[..n_q].iter().copied())
            .collect();
        CodeSequence::new(indices, n_q, self.num_frames)
    }
}

/// Index of the nearest codeword by squared Euclidean distance, ties broken
/// toward the smaller index; returns (index, squared distance).
fn nearest(point: &[f64], codewords: &[f64], count: usize) -> (usize, f64) {
    let dim = point.len();
    let mut best_index = 0;
    let mut best_dist = f64::INFINITY;
    for j in 0..count {
        let c = &codewords[j * dim..(j + 1) * dim];
        let mut acc = 0.0;
        for d in 0..dim {
            let diff = point[d] - c[d];
            acc += diff * diff;
            if acc > best_dist {
                break; // cannot beat the incumbent; full distance only grows
            }
        }
        if acc < best_dist {
            best_dist = acc;
            best_index = j;
        }
    }
    (best_index, best_dist)
}

/// Quantizes every frame of `z` through the first `n_q` stages.
///
/// Returns the chosen indices and the quantized latents ẑ (the stage-wise
/// sum of chosen codewords, accumulated in stage order — bit-identical to
/// what `rvq_decode` reproduces).
pub fn rvq_encode(
    z: &LatentSequence,
    books: &RvqCodebooks,
    n_q: usize,
) -> Result<(CodeSequence, LatentSequence)> {
    if n_q == 0 || n_q > books.num_stages() {
        return Err(Error::InvalidConfig(format!(
            "n_q = {n_q} outside 1..={} trained stages",
            books.num_stages()
        )));
    }
    if z.dim() != books.dim() {
        return Err(Error::ShapeMismatch(format!(
            "latent dimension {} does not match codebook dimension {}",
            z.dim(),
            books.dim()
        )));
    }
    let dim = books.dim();
    let stages: Vec<Vec<f64>> = (0..n_q).map(|i| books.stage_f64(i)).collect();

    let frames = z.num_frames();
    let mut indices = Vec::with_capacity(frames * n_q);
    let mut quantized = vec![0.0; frames * dim];
    let mut residual = vec![0.0; dim];
    for t in 0..frames {
        residual.copy_from_slice(z.frame(t));
        let zhat = &mut quantized[t * dim..(t + 1) * dim];
        for stage in stages.iter() {
            let (j, _) = nearest(&residual, stage, books.size());
            indices.push(j as u16);
            let c = &stage[j * dim..(j + 1) * dim];
            for d in 0..dim {
                residual[d] -= c[d];
                zhat[d] += c[d];
            }
        }
    }

    let codes = CodeSequence::new(indices, n_q, frames)?;
    let zq = LatentSequence::new(
        quantized,
        dim,
        z.frame_rate,
        z.stride,
        z.receptive_field,
    )?;
    Ok((codes, zq))
}

/// Sums the indexed codewords of the first `codes.n_q` stages.
pub fn rvq_decode(codes: &CodeSequence, books: &RvqCodebooks) -> Result<LatentSequence> {
    if codes.n_q > books.num_stages() {
        return Err(Error::InvalidConfig(format!(
            "stream uses {} stages but the codebooks hold {}",
            codes.n_q,
            books.num_stages()
        )));
    }
    let dim = books.dim();
    let stages: Vec<Vec<f64>> = (0..codes.n_q).map(|i| books.stage_f64(i)).collect();
    let mut data = vec![0.0; codes.num_frames() * dim];
    for t in 0..codes.num_frames() {
        let zhat = &mut data[t * dim..(t + 1) * dim];
        for (stage, &index) in stages.iter().zip(codes.frame_indices(t)) {
            let index = index as usize;
            if index >= books.size() {
                return Err(Error::CorruptCode {
                    index,
                    size: books.size(),
                });
            }
            let c = &stage[index * dim..(index + 1) * dim];
            for d in 0..dim {
                zhat[d] += c[d];
            }
        }
    }
    let spec = ResolutionSpec::for_level(books.level);
    LatentSequence::new(data, dim, spec.frame_rate, spec.stride, spec.receptive_field)
}

/// Seeded k-means++ initialization followed by Lloyd iterations. Empty
/// clusters are re-seeded to the point farthest from its assigned center.
/// Returns k×dim centers, row-major.
fn kmeans(
    data: &[f64],
    n: usize,
    dim: usize,
    k: usize,
    iters: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let point = |i: usize| &data[i * dim..(i + 1) * dim];

    // k-means++ seeding: each new center is drawn with probability
    // proportional to the squared distance from the centers chosen so far.
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(point(rng.gen_range(0..n)));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(point(i), &centers[..dim]))
        .collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let chosen = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            // all remaining points coincide with existing centers
            rng.gen_range(0..n)
        };
        let new_center = point(chosen).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(point(i), &new_center));
        }
        centers.extend_from_slice(&new_center);
        debug_assert_eq!(centers.len(), (c + 1) * dim);
    }

    let mut assignment = vec![0usize; n];
    let mut distance = vec![0.0f64; n];
    for _ in 0..iters {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let (j, dist) = nearest(point(i), &centers, k);
            assignment[i] = j;
            distance[i] = dist;
            counts[j] += 1;
            let s = &mut sums[j * dim..(j + 1) * dim];
            for (sv, &pv) in s.iter_mut().zip(point(i)) {
                *sv += pv;
            }
        }
        for j in 0..k {
            if counts[j] == 0 {
                // revive on the worst-represented point
                let far = distance
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(i, _)| i)
                    .unwrap();
                centers[j * dim..(j + 1) * dim].copy_from_slice(point(far));
                distance[far] = 0.0;
            } else {
                for d in 0..dim {
                    centers[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                }
            }
        }
    }
    centers
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Trains `n_q` residual stages of size `k` on the frames of `latents`.
///
/// Returns the codebooks and the mean squared residual norm remaining after
/// each stage (the training-set distortion curve).
pub fn train_rvq(
    latents: &[LatentSequence],
    level: Level,
    n_q: usize,
    k: usize,
    seed: u64,
    iters: usize,
) -> Result<(RvqCodebooks, Vec<f64>)> {
    if n_q == 0 {
        return Err(Error::InvalidConfig("n_q must be at least 1".into()));
    }
    if !k.is_power_of_two() || k < 2 || k > 1 << 15 {
        return Err(Error::InvalidConfig(format!(
            "codebook size must be a power of two in [2, 32768], got {k}"
        )));
    }
    let dim = match latents.first() {
        Some(z) => z.dim(),
        None => return Err(Error::EmptyInput("no training latents".into())),
    };
    let n: usize = latents.iter().map(|z| z.num_frames()).sum();
    if n < k {
        return Err(Error::EmptyInput(format!(
            "insufficient training data: {n} frames for {k} codewords"
        )));
    }
    let mut residuals = Vec::with_capacity(n * dim);
    for z in latents {
        if z.dim() != dim {
            return Err(Error::ShapeMismatch(format!(
                "training sequences mix dimensions {dim} and {}",
                z.dim()
            )));
        }
        residuals.extend_from_slice(z.data());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stages = Vec::with_capacity(n_q);
    let mut distortions = Vec::with_capacity(n_q);
    for _ in 0..n_q {
        let centers = kmeans(&residuals, n, dim, k, iters, &mut rng);
        // round to storage precision before computing the next residuals, so
        // training residuals equal what encode will see
        let stored: Vec<f32> = centers.iter().map(|&v| v as f32).collect();
        let quantized: Vec<f64> = stored.iter().map(|&v| v as f64).collect();
        let mut total = 0.0;
        for i in 0..n {
            let r = &mut residuals[i * dim..(i + 1) * dim];
            let (j, dist) = nearest(r, &quantized, k);
            let c = &quantized[j * dim..(j + 1) * dim];
            for d in 0..dim {
                r[d] -= c[d];
            }
            total += dist;
        }
        distortions.push(total / n as f64);
        stages.push(stored);
    }

    let books = RvqCodebooks::new(stages, dim, k, level, Some(seed))?;
    Ok((books, distortions))
}

// --- codebook file format ----------------------------------------------------

fn level_id(level: Level) -> u8 {
    match level {
        Level::Fine => 0,
        Level::Medium => 1,
        Level::Coarse => 2,
    }
}

fn level_from_id(id: u8) -> Result<Level> {
    match id {
        0 => Ok(Level::Fine),
        1 => Ok(Level::Medium),
        2 => Ok(Level::Coarse),
        other => Err(Error::MalformedStructure(format!(
            "unknown resolution id {other} in codebook file"
        ))),
    }
}

/// Serializes codebooks: magic, version, resolution id, u16 D, u16 K,
/// u8 N_q, the stage floats little-endian, and a CRC-32 over everything
/// before it.
pub fn codebooks_to_bytes(books: &RvqCodebooks) -> Result<Vec<u8>> {
    if books.dim() > u16::MAX as usize || books.num_stages() > u8::MAX as usize {
        return Err(Error::InvalidConfig(
            "codebook shape exceeds the file format's field widths".into(),
        ));
    }
    let mut out = Vec::with_capacity(15 + books.num_stages() * books.size() * books.dim() * 4);
    out.extend_from_slice(CODEBOOK_MAGIC);
    out.push(CODEBOOK_VERSION);
    out.push(level_id(books.level));
    out.extend_from_slice(&(books.dim() as u16).to_le_bytes());
    out.extend_from_slice(&(books.size() as u16).to_le_bytes());
    out.push(books.num_stages() as u8);
    for stage in &books.stages {
        for v in stage {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = crc32(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

/// Parses what `codebooks_to_bytes` wrote.
pub fn codebooks_from_bytes(bytes: &[u8]) -> Result<RvqCodebooks> {
    if bytes.len() < 15 {
        return Err(Error::StreamFormat("codebook file shorter than its header".into()));
    }
    if &bytes[0..4] != CODEBOOK_MAGIC {
        return Err(Error::StreamFormat("not a codebook file (bad magic)".into()));
    }
    if bytes[4] != CODEBOOK_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let level = level_from_id(bytes[5])?;
    let dim = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let size = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let n_q = bytes[10] as usize;
    if dim == 0 || n_q == 0 || !size.is_power_of_two() || size < 2 {
        return Err(Error::MalformedStructure(format!(
            "implausible codebook shape: D={dim}, K={size}, N_q={n_q}"
        )));
    }
    let expected = 11 + n_q * size * dim * 4 + 4;
    if bytes.len() != expected {
        return Err(Error::StreamFormat(format!(
            "codebook file is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let stored = u32::from_le_bytes(bytes[expected - 4..].try_into().unwrap());
    if crc32(&bytes[..expected - 4]) != stored {
        return Err(Error::Corrupted("codebook file checksum mismatch".into()));
    }

    let mut stages = Vec::with_capacity(n_q);
    let mut at = 11;
    for _ in 0..n_q {
        let mut stage = Vec::with_capacity(size * dim);
        for _ in 0..size * dim {
            stage.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()));
            at += 4;
        }
        stages.push(stage);
    }
    RvqCodebooks::new(stages, dim, size, level, None)
}

/// Writes one tier's codebooks to disk.
pub fn save_codebooks(books: &RvqCodebooks, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = codebooks_to_bytes(books)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads one tier's codebooks from disk.
pub fn load_codebooks(path: impl AsRef<Path>) -> Result<RvqCodebooks> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    codebooks_from_bytes(&bytes)
}
