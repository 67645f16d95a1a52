//! Bit-exact VFR container: granularity structure plus RVQ indices.
//!
//! A coded stream is a fixed 43-byte header, one 3-bit pattern symbol per
//! coarse slot describing how that slot's 4 fine positions were allocated,
//! the quantizer indices packed `codebook_bits` apiece in temporal order,
//! and a trailing CRC-32. Both bit-packed sections are MSB-first and padded
//! to a byte boundary, so the layout is reproducible byte for byte.

use crate::allocator::GranularityMasks;
use crate::error::{Error, Result};
use crate::transform::Level;

const STREAM_MAGIC: &[u8; 4] = b"TFC1";
const STREAM_VERSION: u8 = 1;
/// Magic + version + fixed header fields.
const HEADER_LEN: usize = 4 + 1 + 4 + 2 + 1 + 1 + 2 + 4 + 8 + 16;

/// How one coarse slot (4 fine positions) is granularized, in temporal
/// order. Three bits encode the five possibilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotPattern {
    /// One coarse frame covers the slot.
    Coarse,
    /// Two medium frames.
    MediumMedium,
    /// A medium frame, then two fine frames.
    MediumFine,
    /// Two fine frames, then a medium frame.
    FineMedium,
    /// Four fine frames.
    FineFine,
}

impl SlotPattern {
    pub fn code(self) -> u8 {
        match self {
            SlotPattern::Coarse => 0,
            SlotPattern::MediumMedium => 1,
            SlotPattern::MediumFine => 2,
            SlotPattern::FineMedium => 3,
            SlotPattern::FineFine => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<SlotPattern> {
        match code {
            0 => Ok(SlotPattern::Coarse),
            1 => Ok(SlotPattern::MediumMedium),
            2 => Ok(SlotPattern::MediumFine),
            3 => Ok(SlotPattern::FineMedium),
            4 => Ok(SlotPattern::FineFine),
            other => Err(Error::MalformedStructure(format!(
                "invalid slot pattern code {other}"
            ))),
        }
    }

    /// Coded frames in this slot.
    pub fn frames(self) -> usize {
        self.levels().len()
    }

    /// The tier of each coded frame in the slot, in temporal order.
    pub fn levels(self) -> &'static [Level] {
        match self {
            SlotPattern::Coarse => &[Level::Coarse],
            SlotPattern::MediumMedium => &[Level::Medium, Level::Medium],
            SlotPattern::MediumFine => &[Level::Medium, Level::Fine, Level::Fine],
            SlotPattern::FineMedium => &[Level::Fine, Level::Fine, Level::Medium],
            SlotPattern::FineFine => &[Level::Fine; 4],
        }
    }
}

/// Converts partition masks into one pattern symbol per coarse slot.
pub fn masks_to_patterns(masks: &GranularityMasks) -> Result<Vec<SlotPattern>> {
    if !masks.is_valid_partition() {
        return Err(Error::InvalidConfig(
            "granularity masks violate the partition identity".into(),
        ));
    }
    Ok((0..masks.b_c.len())
        .map(|s| {
            if masks.b_c[s] {
                SlotPattern::Coarse
            } else {
                match (masks.b_m[2 * s], masks.b_m[2 * s + 1]) {
                    (true, true) => SlotPattern::MediumMedium,
                    (true, false) => SlotPattern::MediumFine,
                    (false, true) => SlotPattern::FineMedium,
                    (false, false) => SlotPattern::FineFine,
                }
            }
        })
        .collect())
}

/// Exact inverse of [`masks_to_patterns`].
pub fn patterns_to_masks(patterns: &[SlotPattern]) -> GranularityMasks {
    let slots = patterns.len();
    let mut masks = GranularityMasks {
        b_f: vec![false; slots * 4],
        b_m: vec![false; slots * 2],
        b_c: vec![false; slots],
    };
    for (s, p) in patterns.iter().enumerate() {
        match p {
            SlotPattern::Coarse => masks.b_c[s] = true,
            SlotPattern::MediumMedium => {
                masks.b_m[2 * s] = true;
                masks.b_m[2 * s + 1] = true;
            }
            SlotPattern::MediumFine => {
                masks.b_m[2 * s] = true;
                masks.b_f[4 * s + 2] = true;
                masks.b_f[4 * s + 3] = true;
            }
            SlotPattern::FineMedium => {
                masks.b_f[4 * s] = true;
                masks.b_f[4 * s + 1] = true;
                masks.b_m[2 * s + 1] = true;
            }
            SlotPattern::FineFine => {
                for i in 0..4 {
                    masks.b_f[4 * s + i] = true;
                }
            }
        }
    }
    masks
}

/// A coded utterance, ready for packing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VfrStream {
    pub sample_rate: u32,
    pub stride: u16,
    pub n_q: u8,
    pub codebook_bits: u8,
    pub latent_dim: u16,
    pub original_length: u64,
    /// Identifies the codebook set the indices refer to.
    pub codebook_hash: [u8; 16],
    /// One symbol per coarse slot, temporal order.
    pub patterns: Vec<SlotPattern>,
    /// `n_q` indices per coded frame, temporal order, flattened.
    pub payload: Vec<u16>,
}

impl VfrStream {
    /// Coded frames implied by the slot patterns.
    pub fn num_frames(&self) -> usize {
        self.patterns.iter().map(|p| p.frames()).sum()
    }

    pub fn num_coarse_slots(&self) -> usize {
        self.patterns.len()
    }

    fn validate(&self) -> Result<()> {
        if self.n_q == 0 {
            return Err(Error::MalformedStructure("n_q must be at least 1".into()));
        }
        if self.codebook_bits == 0 || self.codebook_bits > 16 {
            return Err(Error::MalformedStructure(format!(
                "codebook_bits must be in 1..=16, got {}",
                self.codebook_bits
            )));
        }
        if self.stride == 0 || self.latent_dim == 0 || self.sample_rate == 0 {
            return Err(Error::MalformedStructure(
                "sample_rate, stride, and latent_dim must be positive".into(),
            ));
        }
        if self.patterns.len() > u32::MAX as usize {
            return Err(Error::MalformedStructure("too many coarse slots".into()));
        }
        let expected = self.num_frames() * self.n_q as usize;
        if self.payload.len() != expected {
            return Err(Error::MalformedStructure(format!(
                "payload holds {} indices but the patterns imply {expected}",
                self.payload.len()
            )));
        }
        let limit = 1u32 << self.codebook_bits;
        for &index in &self.payload {
            if u32::from(index) >= limit {
                return Err(Error::CorruptCode {
                    index: index as usize,
                    size: limit as usize,
                });
            }
        }
        Ok(())
    }
}

/// Serializes a stream to its byte-exact wire format.
pub fn pack(stream: &VfrStream) -> Result<Vec<u8>> {
    stream.validate()?;
    let mut out = Vec::with_capacity(
        HEADER_LEN + stream.patterns.len() / 2 + stream.payload.len() * 2 + 4,
    );
    out.extend_from_slice(STREAM_MAGIC);
    out.push(STREAM_VERSION);
    out.extend_from_slice(&stream.sample_rate.to_le_bytes());
    out.extend_from_slice(&stream.stride.to_le_bytes());
    out.push(stream.n_q);
    out.push(stream.codebook_bits);
    out.extend_from_slice(&stream.latent_dim.to_le_bytes());
    out.extend_from_slice(&(stream.patterns.len() as u32).to_le_bytes());
    out.extend_from_slice(&stream.original_length.to_le_bytes());
    out.extend_from_slice(&stream.codebook_hash);

    let mut patterns = BitWriter::new();
    for p in &stream.patterns {
        patterns.write_bits(p.code() as u32, 3);
    }
    out.extend_from_slice(&patterns.into_bytes());

    let mut payload = BitWriter::new();
    for &index in &stream.payload {
        payload.write_bits(index as u32, stream.codebook_bits as usize);
    }
    out.extend_from_slice(&payload.into_bytes());

    let checksum = crc32(&out);
    out.extend_from_slice(&checksum.to_le_bytes());
    Ok(out)
}

/// Parses and validates a packed stream: magic, version, checksum, and
/// structural consistency between the declared counts and the byte length.
pub fn unpack(bytes: &[u8]) -> Result<VfrStream> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(Error::StreamFormat(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != STREAM_MAGIC {
        return Err(Error::StreamFormat("not a coded stream (bad magic)".into()));
    }
    if bytes[4] != STREAM_VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32(&bytes[..bytes.len() - 4]) != stored {
        return Err(Error::Corrupted("stream checksum mismatch".into()));
    }

    let sample_rate = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
    let stride = u16::from_le_bytes(bytes[9..11].try_into().unwrap());
    let n_q = bytes[11];
    let codebook_bits = bytes[12];
    let latent_dim = u16::from_le_bytes(bytes[13..15].try_into().unwrap());
    let num_slots = u32::from_le_bytes(bytes[15..19].try_into().unwrap()) as usize;
    let original_length = u64::from_le_bytes(bytes[19..27].try_into().unwrap());
    let codebook_hash: [u8; 16] = bytes[27..43].try_into().unwrap();

    if n_q == 0 || codebook_bits == 0 || codebook_bits > 16 {
        return Err(Error::MalformedStructure(format!(
            "implausible header: n_q={n_q}, codebook_bits={codebook_bits}"
        )));
    }

    let pattern_bytes = (num_slots * 3).div_ceil(8);
    let body = &bytes[HEADER_LEN..bytes.len() - 4];
    if body.len() < pattern_bytes {
        return Err(Error::MalformedStructure(format!(
            "{num_slots} slots need {pattern_bytes} pattern bytes, stream has {}",
            body.len()
        )));
    }
    let mut reader = BitReader::new(&body[..pattern_bytes]);
    let mut patterns = Vec::with_capacity(num_slots);
    for _ in 0..num_slots {
        let code = reader.read_bits(3).ok_or_else(|| {
            Error::MalformedStructure("pattern section ended early".into())
        })?;
        patterns.push(SlotPattern::from_code(code as u8)?);
    }

    let frames: usize = patterns.iter().map(|p| p.frames()).sum();
    let index_count = frames * n_q as usize;
    let payload_bytes = (index_count * codebook_bits as usize).div_ceil(8);
    if body.len() != pattern_bytes + payload_bytes {
        return Err(Error::MalformedStructure(format!(
            "patterns imply {index_count} indices ({payload_bytes} payload bytes), \
             stream carries {}",
            body.len() - pattern_bytes
        )));
    }
    let mut reader = BitReader::new(&body[pattern_bytes..]);
    let mut payload = Vec::with_capacity(index_count);
    for _ in 0..index_count {
        let v = reader.read_bits(codebook_bits as usize).ok_or_else(|| {
            Error::MalformedStructure("payload section ended early".into())
        })?;
        payload.push(v as u16);
    }

    let stream = VfrStream {
        sample_rate,
        stride,
        n_q,
        codebook_bits,
        latent_dim,
        original_length,
        codebook_hash,
        patterns,
        payload,
    };
    stream.validate()?;
    Ok(stream)
}

/// Bitrate accounting for a coded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct BitrateReport {
    pub frames: usize,
    pub duration_seconds: f64,
    /// Realized average frame rate: frames / duration.
    pub frames_per_second: f64,
    /// frames_per_second × n_q × codebook_bits — the index bits only.
    pub payload_bps: f64,
    /// Header, pattern symbols, padding, and checksum.
    pub overhead_bps: f64,
    pub total_bps: f64,
}

/// Computes payload and overhead rates from the stream's own bookkeeping.
pub fn measure_bitrate(stream: &VfrStream) -> Result<BitrateReport> {
    if stream.original_length == 0 || stream.sample_rate == 0 {
        return Err(Error::EmptyInput(
            "cannot measure bitrate over a zero-length signal".into(),
        ));
    }
    let frames = stream.num_frames();
    let seconds_inverse = stream.sample_rate as f64 / stream.original_length as f64;
    let frames_per_second = frames as f64 * seconds_inverse;
    let payload_bps =
        frames_per_second * (stream.n_q as f64 * stream.codebook_bits as f64);

    let payload_bits = frames * stream.n_q as usize * stream.codebook_bits as usize;
    let pattern_bits = stream.patterns.len() * 3;
    let total_bits = 8 * (HEADER_LEN
        + pattern_bits.div_ceil(8)
        + payload_bits.div_ceil(8)
        + 4);
    let overhead_bps = (total_bits - payload_bits) as f64 * seconds_inverse;

    Ok(BitrateReport {
        frames,
        duration_seconds: stream.original_length as f64 / stream.sample_rate as f64,
        frames_per_second,
        payload_bps,
        overhead_bps,
        total_bps: payload_bps + overhead_bps,
    })
}

// --- bit-level utilities ------------------------------------------------------

/// MSB-first bit packer.
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits already used in the trailing partial byte (0..8).
    used: usize,
}

impl BitWriter {
    pub fn new() -> BitWriter {
        BitWriter {
            bytes: Vec::new(),
            used: 0,
        }
    }

    /// Appends the low `width` bits of `value`, most significant first.
    pub fn write_bits(&mut self, value: u32, width: usize) {
        assert!(width <= 32, "bit width {width} exceeds 32");
        for i in (0..width).rev() {
            let bit = (value >> i) & 1;
            if self.used == 0 {
                self.bytes.push(0);
            }
            let last = self.bytes.last_mut().unwrap();
            *last |= (bit as u8) << (7 - self.used);
            self.used = (self.used + 1) % 8;
        }
    }

    /// Finishes the stream, zero-padding the final partial byte.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

impl Default for BitWriter {
    fn default() -> Self {
        BitWriter::new()
    }
}

/// MSB-first bit reader over a byte slice.
pub struct BitReader<'a> {
    bytes: &'a [u8],
    /// Next bit to read, counted from the start.
    pos: usize,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> BitReader<'a> {
        BitReader { bytes, pos: 0 }
    }

    /// Reads `width` bits MSB-first; `None` once the slice is exhausted.
    pub fn read_bits(&mut self, width: usize) -> Option<u32> {
        assert!(width <= 32, "bit width {width} exceeds 32");
        if self.pos + width > self.bytes.len() * 8 {
            return None;
        }
        let mut value = 0u32;
        for _ in 0..width {
            let byte = self.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            value = (value << 1) | bit as u32;
            self.pos += 1;
        }
        Some(value)
    }
}

/// CRC-32 (IEEE 802.3 polynomial, reflected), as used by zip and png.
pub fn crc32(bytes: &[u8]) -> u32 {
    const fn table() -> [u32; 256] {
        let mut t = [0u32; 256];
        let mut i = 0;
        while i < 256 {
            let mut c = i as u32;
            let mut k = 0;
            while k < 8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
                k += 1;
            }
            t[i] = c;
            i += 1;
        }
        t
    }
    const TABLE: [u32; 256] = table();
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc = TABLE[((crc ^ b as u32) & 0xFF) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}
