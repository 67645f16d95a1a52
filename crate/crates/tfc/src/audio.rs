//! WAV file I/O, peak normalization, and slot-aligned padding.
//!
//! The codec consumes mono 24 kHz audio. Files at other rates are rejected
//! rather than resampled, and multichannel inputs are averaged down to mono
//! at load time.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Sample rate the codec operates at.
pub const TARGET_SAMPLE_RATE: u32 = 24000;

/// Symmetric 16-bit PCM scale used for both reading and writing, so a
/// write→read round trip stays within half of one quantization step.
const PCM16_SCALE: f64 = 32767.0;

/// Mono audio held as real-valued samples.
///
/// `samples.len()` may exceed `original_length` once padding has been
/// appended; the padding is stripped again when the buffer is written out.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    /// Amplitude values; inside [-1, 1] once normalized.
    pub samples: Vec<f64>,
    /// Sampling rate in Hz.
    pub sample_rate: u32,
    /// Sample count before any padding was appended.
    pub original_length: usize,
}

impl AudioBuffer {
    /// Wraps raw samples; `original_length` is the current sample count.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        let original_length = samples.len();
        AudioBuffer {
            samples,
            sample_rate,
            original_length,
        }
    }

    /// Duration of the unpadded signal in seconds.
    pub fn duration_seconds(&self) -> f64 {
        self.original_length as f64 / self.sample_rate as f64
    }

    /// Errors unless the buffer is at the codec's operating rate.
    pub fn ensure_target_rate(&self) -> Result<()> {
        if self.sample_rate != TARGET_SAMPLE_RATE {
            return Err(Error::UnsupportedSampleRate {
                got: self.sample_rate,
                expected: TARGET_SAMPLE_RATE,
            });
        }
        Ok(())
    }
}

/// Loads a PCM WAV file (16-bit integer or 32-bit IEEE float, any channel
/// count) and averages the channels down to mono. No normalization is
/// applied here.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_wav(&bytes)
}

/// Scales the buffer so its peak magnitude is exactly 1. All-zero input is
/// returned unchanged; an empty buffer is an error.
pub fn normalize_peak(mut audio: AudioBuffer) -> Result<AudioBuffer> {
    if audio.samples.is_empty() {
        return Err(Error::EmptyInput(
            "cannot normalize an empty buffer".into(),
        ));
    }
    let peak = audio
        .samples
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s.abs()));
    if peak > 0.0 {
        for s in &mut audio.samples {
            *s /= peak;
        }
    }
    Ok(audio)
}

/// Appends zeros until the length is the smallest multiple of
/// `stride × slot_factor` that covers the current samples. `original_length`
/// is left untouched so the padding can be stripped on output.
pub fn pad_to_slot_multiple(
    mut audio: AudioBuffer,
    stride: usize,
    slot_factor: usize,
) -> Result<AudioBuffer> {
    if stride == 0 || slot_factor == 0 {
        return Err(Error::InvalidConfig(
            "stride and slot_factor must be positive".into(),
        ));
    }
    let slot = stride * slot_factor;
    let target = audio.samples.len().div_ceil(slot) * slot;
    audio.samples.resize(target, 0.0);
    Ok(audio)
}

/// Writes the first `original_length` samples as a 16-bit PCM mono WAV,
/// clamping anything outside [-1, 1].
pub fn save_wav(audio: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n = audio.original_length.min(audio.samples.len());
    let mut data = Vec::with_capacity(n * 2);
    for &s in &audio.samples[..n] {
        let v = (s.clamp(-1.0, 1.0) * PCM16_SCALE).round() as i16;
        data.extend_from_slice(&v.to_le_bytes());
    }

    let mut out = Vec::with_capacity(44 + data.len());
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data.len() as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // integer PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&audio.sample_rate.to_le_bytes());
    out.extend_from_slice(&(audio.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(&data);

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

// --- RIFF parsing -----------------------------------------------------------

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

struct WavFormat {
    format_tag: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn parse_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let header = take(bytes, 0, 12)?;
    if &header[0..4] != b"RIFF" || &header[8..12] != b"WAVE" {
        return Err(Error::WavFormat("missing RIFF/WAVE header".into()));
    }

    let mut offset = 12;
    let mut format: Option<WavFormat> = None;
    let mut data: Option<&[u8]> = None;

    while offset < bytes.len() {
        let chunk_header = take(bytes, offset, 8)?;
        let id: [u8; 4] = chunk_header[0..4].try_into().unwrap();
        let size = u32::from_le_bytes(chunk_header[4..8].try_into().unwrap()) as usize;
        let body = take(bytes, offset + 8, size)?;
        match &id {
            b"fmt " => format = Some(parse_fmt_chunk(body)?),
            b"data" => {
                data = Some(body);
                break; // first data chunk wins
            }
            _ => {} // skip LIST, fact, cue, ...
        }
        // chunk bodies are word-aligned: odd sizes carry one pad byte
        offset += 8 + size + (size % 2);
    }

    let format = format.ok_or_else(|| Error::WavFormat("no fmt chunk before data".into()))?;
    let data = data.ok_or_else(|| Error::WavFormat("no data chunk".into()))?;
    if format.channels == 0 {
        return Err(Error::WavFormat("fmt declares zero channels".into()));
    }

    let per_sample = decode_fn(&format)?;
    let sample_bytes = format.bits_per_sample as usize / 8;
    let block = sample_bytes * format.channels as usize;
    if data.len() % block != 0 {
        return Err(Error::WavFormat(format!(
            "data chunk length {} is not a multiple of the {}-byte frame",
            data.len(),
            block
        )));
    }

    let channels = format.channels as usize;
    let frames = data.len() / block;
    let mut samples = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut acc = 0.0;
        for c in 0..channels {
            let at = f * block + c * sample_bytes;
            acc += per_sample(&data[at..at + sample_bytes]);
        }
        samples.push(acc / channels as f64);
    }

    Ok(AudioBuffer::new(samples, format.sample_rate))
}

fn parse_fmt_chunk(body: &[u8]) -> Result<WavFormat> {
    if body.len() < 16 {
        return Err(Error::WavFormat("fmt chunk shorter than 16 bytes".into()));
    }
    let mut format_tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
    if format_tag == FORMAT_EXTENSIBLE {
        // WAVE_FORMAT_EXTENSIBLE: the real tag is the first two bytes of the
        // SubFormat GUID in the extension block.
        if body.len() < 40 {
            return Err(Error::WavFormat(
                "extensible fmt chunk missing its extension block".into(),
            ));
        }
        format_tag = u16::from_le_bytes(body[24..26].try_into().unwrap());
    }
    Ok(WavFormat {
        format_tag,
        channels: u16::from_le_bytes(body[2..4].try_into().unwrap()),
        sample_rate: u32::from_le_bytes(body[4..8].try_into().unwrap()),
        bits_per_sample: u16::from_le_bytes(body[14..16].try_into().unwrap()),
    })
}

/// Picks the converter for one sample's little-endian bytes.
fn decode_fn(format: &WavFormat) -> Result<fn(&[u8]) -> f64> {
    match (format.format_tag, format.bits_per_sample) {
        (FORMAT_PCM, 16) => Ok(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / PCM16_SCALE),
        (FORMAT_IEEE_FLOAT, 32) => {
            Ok(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        }
        (FORMAT_PCM, bits) => Err(Error::WavFormat(format!(
            "unsupported PCM bit depth {bits} (only 16-bit integer is read)"
        ))),
        (FORMAT_IEEE_FLOAT, bits) => Err(Error::WavFormat(format!(
            "unsupported float bit depth {bits} (only 32-bit float is read)"
        ))),
        (tag, _) => Err(Error::UnsupportedWavCodec(tag)),
    }
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    bytes
        .get(offset..offset + len)
        .ok_or_else(|| Error::WavFormat("file truncated mid-chunk".into()))
}
