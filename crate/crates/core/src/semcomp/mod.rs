//! Compression of the binary building map before transmission.
//!
//! Two paths share the error type and bit accounting: vector quantization
//! against a shared codebook ([`vq`]) and a block-DCT codec ([`jpeg`]).

mod dct;
mod jpeg;
mod vq;

pub use dct::{dct_block_forward, dct_block_inverse, Block, BLOCK};
pub use jpeg::{jpeg_decode_binary, jpeg_decode_tolerant, jpeg_encode_binary, jpeg_header, quant_table};
pub use vq::{
    bits_per_index, encode_map, nearest_codeword, pack_indices, patchify, train_codebook,
    train_codebook_traced, unpack_indices, unpatchify, vq_decode, vq_encode, Codebook, Latents, VqEncoding,
    BINARY_THRESHOLD,
};

use crate::grid::{GridError, MapKind};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SemCompError {
    #[error("map {width}x{height} is not divisible into {block}x{block} blocks")]
    IndivisibleDims { width: usize, height: usize, block: usize },
    #[error("expected vectors of length {expected}, got {actual}")]
    DimMismatch { expected: usize, actual: usize },
    #[error("invalid codebook: {0}")]
    InvalidCodebook(&'static str),
    #[error("index {index} out of range for a codebook of {n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("corrupt stream: {0}")]
    CorruptStream(&'static str),
    #[error("only {distinct} distinct latents, cannot train {requested} codewords")]
    TooFewDistinctLatents { distinct: usize, requested: usize },
    #[error("quality {0} outside 1..=100")]
    InvalidQuality(u8),
    #[error("expected a binary map, got {0:?}")]
    NotBinary(MapKind),
    #[error("i/o: {message}")]
    Io { kind: std::io::ErrorKind, message: String },
    #[error(transparent)]
    Grid(#[from] GridError),
}

impl From<std::io::Error> for SemCompError {
    fn from(e: std::io::Error) -> Self {
        SemCompError::Io { kind: e.kind(), message: e.to_string() }
    }
}

/// A compressed building map, whichever path produced it.
#[derive(Debug, Clone, PartialEq)]
pub enum Compressed<'a> {
    /// Encoding plus the size of the codebook it indexes.
    Vq(&'a VqEncoding, usize),
    Bytes(&'a [u8]),
}

/// Exact number of bits that go on the air for a compressed map.
pub fn payload_bits(enc: Compressed<'_>) -> u64 {
    match enc {
        Compressed::Vq(e, n) => e.payload_bits(n),
        Compressed::Bytes(b) => 8 * b.len() as u64,
    }
}
