//! Variable-frame-rate speech codec.
//!
//! The codec measures short-time waveform entropy, assigns each region of the
//! signal a temporal granularity (fine / medium / coarse), quantizes MDCT
//! latents with a residual vector quantizer, and serializes the result into a
//! self-describing bitstream. Steady, low-information stretches ride at a
//! quarter of the full frame rate; transients keep full resolution.

pub mod allocator;
pub mod audio;
pub mod bitstream;
pub mod cli;
pub mod entropy;
pub mod error;
pub mod fusion;
pub mod metrics;
pub mod pipeline;
pub mod rvq;
pub mod transform;

pub use error::{Error, Result};
