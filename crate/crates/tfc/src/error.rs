//! Error type shared across the codec.
//!
//! Every fallible operation in the crate returns [`Result`]. The variants are
//! grouped by how the command-line front end reports them: I/O and file-format
//! problems, configuration problems, codebook mismatches, and corrupted data.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All the ways codec operations can fail.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Underlying filesystem or stream I/O failed.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A WAV file could not be parsed or uses an unsupported encoding.
    #[error("invalid wav file: {0}")]
    WavFormat(String),

    /// The audio uses a codec other than integer/float PCM.
    #[error("unsupported wav codec: format tag {0}")]
    UnsupportedWavCodec(u16),

    /// The sample rate is not the one the codec operates at.
    #[error("unsupported sample rate {got} Hz (codec operates at {expected} Hz)")]
    UnsupportedSampleRate { got: u32, expected: u32 },

    /// An operation received an empty or all-zero signal it cannot handle.
    #[error("empty or degenerate input: {0}")]
    EmptyInput(String),

    /// A buffer length does not meet an alignment precondition.
    #[error("misaligned input: {0}")]
    Misaligned(String),

    /// A parameter or parameter combination is out of range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A requested average frame rate cannot be met by any ratio mix.
    #[error("target frame rate {target_hz} Hz is not achievable (valid range {min_hz}..={max_hz} Hz)")]
    InfeasibleTarget {
        target_hz: f64,
        min_hz: f64,
        max_hz: f64,
    },

    /// Array shapes disagree (latent dims, mask lengths, and so on).
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A metric was asked to compare against an all-zero reference.
    #[error("undefined reference: {0}")]
    UndefinedReference(String),

    /// The stream was produced with a different codebook set.
    #[error("codebook mismatch: stream expects codebook hash {expected}, loaded set has {got}")]
    CodebookMismatch { expected: String, got: String },

    /// The byte stream is not a codec stream at all.
    #[error("not a codec stream: {0}")]
    StreamFormat(String),

    /// The stream declares a container version this build cannot read.
    #[error("unsupported stream version {0}")]
    UnsupportedVersion(u8),

    /// Checksum failure: the bytes were damaged in transit or at rest.
    #[error("stream corrupted: {0}")]
    Corrupted(String),

    /// The stream decodes structurally but its fields are inconsistent.
    #[error("malformed stream structure: {0}")]
    MalformedStructure(String),

    /// A quantizer index lies outside the codebook.
    #[error("corrupt code: index {index} out of range for codebook of size {size}")]
    CorruptCode { index: usize, size: usize },
}

impl Error {
    /// Convenience constructor for I/O failures tied to a path.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code class for the command-line front end.
    ///
    /// 2 = I/O or file-format problems, 3 = configuration problems,
    /// 4 = codebook mismatch, 5 = corrupted or structurally invalid streams.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. }
            | Error::WavFormat(_)
            | Error::UnsupportedWavCodec(_)
            | Error::UnsupportedSampleRate { .. } => 2,
            Error::EmptyInput(_)
            | Error::Misaligned(_)
            | Error::InvalidConfig(_)
            | Error::InfeasibleTarget { .. }
            | Error::ShapeMismatch(_)
            | Error::UndefinedReference(_) => 3,
            Error::CodebookMismatch { .. } => 4,
            Error::StreamFormat(_)
            | Error::UnsupportedVersion(_)
            | Error::Corrupted(_)
            | Error::MalformedStructure(_)
            | Error::CorruptCode { .. } => 5,
        }
    }
}
