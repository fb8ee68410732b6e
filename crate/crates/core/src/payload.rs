//! The wire format for transmitted semantics, a binary symmetric channel and
//! bandwidth accounting.
//!
//! Layout (little endian): `"RSEM"`, `u8` version, `u8` scheme, `u16` width,
//! `u16` height, `u8` transmitter count, then per transmitter `u16 x`,
//! `u16 y`, `f32 pl0`, `f32 theta_tilde`, then `u32` blob length and the blob.

use crate::grid::{GridMap, Pixel, SparseObservationSet};
use crate::ldpl::LdplParams;
use rand::distr::{Bernoulli, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RSEM";
pub const VERSION: u8 = 1;
/// Bytes before the first transmitter record.
pub const FIXED_HEADER_LEN: usize = 11;
pub const BS_RECORD_LEN: usize = 12;
/// Bits per observation in the raw baseline: `u16 x`, `u16 y`, `f32` value.
pub const RAW_BITS_PER_SAMPLE: u64 = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PayloadError {
    #[error("bad magic, not an RSEM payload")]
    BadMagic,
    #[error("unsupported payload version {0}")]
    UnsupportedVersion(u8),
    #[error("payload truncated: needed {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("{trailing} trailing bytes after the blob")]
    LengthMismatch { trailing: usize },
    #[error("{0} transmitters do not fit in one payload (max 255)")]
    TooManyBs(usize),
    #[error("blob of {0} bytes exceeds the u32 length field")]
    BlobTooLarge(usize),
    #[error("unknown compression scheme tag {0}")]
    UnknownScheme(u8),
    #[error("invalid payload: {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Vq = 0,
    Jpeg = 1,
}

impl TryFrom<u8> for Scheme {
    type Error = PayloadError;

    fn try_from(v: u8) -> Result<Self, PayloadError> {
        match v {
            0 => Ok(Scheme::Vq),
            1 => Ok(Scheme::Jpeg),
            other => Err(PayloadError::UnknownScheme(other)),
        }
    }
}

/// Everything the receiver needs to rebuild its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPayload {
    pub scheme: Scheme,
    pub width: usize,
    pub height: usize,
    pub bs_list: Vec<Pixel>,
    /// Aligned with `bs_list`.
    pub ldpl_list: Vec<LdplParams>,
    pub blob: Vec<u8>,
}

impl SemanticPayload {
    /// Validating constructor. Parameters are rounded to `f32` here so that
    /// a serialize/deserialize round trip is exact.
    pub fn new(
        scheme: Scheme,
        width: usize,
        height: usize,
        bs_list: Vec<Pixel>,
        ldpl_list: Vec<LdplParams>,
        blob: Vec<u8>,
    ) -> Result<Self, PayloadError> {
        let p = SemanticPayload {
            scheme,
            width,
            height,
            bs_list,
            ldpl_list: ldpl_list.into_iter().map(LdplParams::to_f32_precision).collect(),
            blob,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PayloadError> {
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return Err(PayloadError::Invalid("dimensions exceed u16"));
        }
        if self.bs_list.is_empty() {
            return Err(PayloadError::Invalid("no transmitters"));
        }
        if self.bs_list.len() > u8::MAX as usize {
            return Err(PayloadError::TooManyBs(self.bs_list.len()));
        }
        if self.bs_list.len() != self.ldpl_list.len() {
            return Err(PayloadError::Invalid("transmitter and parameter lists differ in length"));
        }
        if self.bs_list.iter().any(|p| p.x >= self.width || p.y >= self.height) {
            return Err(PayloadError::Invalid("transmitter outside the map"));
        }
        if self.blob.is_empty() {
            return Err(PayloadError::Invalid("empty segmentation blob"));
        }
        if u32::try_from(self.blob.len()).is_err() {
            return Err(PayloadError::BlobTooLarge(self.blob.len()));
        }
        Ok(())
    }

    /// Length of the prefix the channel leaves untouched when the header is
    /// protected: fixed header, transmitter records and blob length.
    pub fn header_len(&self) -> usize {
        protected_len(self.bs_list.len())
    }
}

fn protected_len(n_bs: usize) -> usize {
    FIXED_HEADER_LEN + BS_RECORD_LEN * n_bs + 4
}

pub fn serialize(p: &SemanticPayload) -> Result<Vec<u8>, PayloadError> {
    p.validate()?;
    let mut out = Vec::with_capacity(p.header_len() + p.blob.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(p.scheme as u8);
    out.extend_from_slice(&(p.width as u16).to_le_bytes());
    out.extend_from_slice(&(p.height as u16).to_le_bytes());
    out.push(p.bs_list.len() as u8);
    for (bs, params) in p.bs_list.iter().zip(&p.ldpl_list) {
        out.extend_from_slice(&(bs.x as u16).to_le_bytes());
        out.extend_from_slice(&(bs.y as u16).to_le_bytes());
        out.extend_from_slice(&(params.pl0 as f32).to_le_bytes());
        out.extend_from_slice(&(params.theta_tilde as f32).to_le_bytes());
    }
    out.extend_from_slice(&(p.blob.len() as u32).to_le_bytes());
    out.extend_from_slice(&p.blob);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PayloadError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(PayloadError::Truncated { needed: end, have: self.bytes.len() });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PayloadError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PayloadError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, PayloadError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32(&mut self) -> Result<f32, PayloadError> {
        let b = self.take(4)?;
        Ok(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn deserialize(bytes: &[u8]) -> Result<SemanticPayload, PayloadError> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| PayloadError::BadMagic)? != MAGIC {
        return Err(PayloadError::BadMagic);
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(PayloadError::UnsupportedVersion(version));
    }
    let scheme = Scheme::try_from(c.u8()?)?;
    let width = c.u16()? as usize;
    let height = c.u16()? as usize;
    let n_bs = c.u8()? as usize;
    let mut bs_list = Vec::with_capacity(n_bs);
    let mut ldpl_list = Vec::with_capacity(n_bs);
    for _ in 0..n_bs {
        let x = c.u16()? as usize;
        let y = c.u16()? as usize;
        let pl0 = f64::from(c.f32()?);
        let theta_tilde = f64::from(c.f32()?);
        bs_list.push(Pixel { x, y });
        ldpl_list.push(LdplParams { pl0, theta_tilde });
    }
    let blob_len = c.u32()? as usize;
    let blob = c.take(blob_len)?.to_vec();
    if c.pos != bytes.len() {
        return Err(PayloadError::LengthMismatch { trailing: bytes.len() - c.pos });
    }
    let p = SemanticPayload { scheme, width, height, bs_list, ldpl_list, blob };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Independent bit-flip probability, in `[0, 1)`.
    pub ber: f64,
    pub seed: u64,
    /// Leave the header, transmitter records and blob length intact.
    pub protect_header: bool,
}

impl ChannelConfig {
    pub fn noiseless() -> Self {
        ChannelConfig { ber: 0.0, seed: 0, protect_header: false }
    }
}

/// Passes `bytes` through a binary symmetric channel. Length is preserved.
///
/// # Panics
/// If `cfg.ber` is outside `[0, 1)`.
pub fn apply_channel(bytes: &[u8], cfg: &ChannelConfig) -> Vec<u8> {
    assert!((0.0..1.0).contains(&cfg.ber), "bit error rate {} outside [0, 1)", cfg.ber);
    let mut out = bytes.to_vec();
    if cfg.ber == 0.0 {
        return out;
    }
    let start = if cfg.protect_header && bytes.len() > FIXED_HEADER_LEN - 1 {
        protected_len(bytes[FIXED_HEADER_LEN - 1] as usize).min(bytes.len())
    } else if cfg.protect_header {
        bytes.len()
    } else {
        0
    };
    let flip = Bernoulli::new(cfg.ber).expect("ber checked above");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for byte in &mut out[start..] {
        for bit in 0..8 {
            if flip.sample(&mut rng) {
                *byte ^= 1 << bit;
            }
        }
    }
    out
}

/// Kilobits on the air: `8 · len / 1000`.
pub fn measure_bandwidth(bytes: &[u8]) -> f64 {
    8.0 * bytes.len() as f64 / 1000.0
}

/// Size of the uncompressed alternative: one bit per map pixel plus 64 bits
/// per measurement.
pub fn raw_baseline_bits(buildings: &GridMap, samples: &SparseObservationSet) -> u64 {
    buildings.len() as u64 + RAW_BITS_PER_SAMPLE * samples.len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{MapKind, Observation};
    use proptest::prelude::*;

    fn minimal() -> SemanticPayload {
        SemanticPayload::new(
            Scheme::Jpeg,
            8,
            8,
            vec![Pixel { x: 3, y: 4 }],
            vec![LdplParams::new(40.0, 20.0)],
            vec![0xAB],
        )
        .unwrap()
    }

    #[test]
    fn minimal_payload_layout() {
        let b = serialize(&minimal()).unwrap();
        assert_eq!(b.len(), 4 + 1 + 1 + 2 + 2 + 1 + (2 + 2 + 4 + 4) + 4 + 1);
        assert_eq!(&b[..4], b"RSEM");
        assert_eq!(b[4], 1);
        assert_eq!(b[5], 1);
        assert_eq!(&b[6..8], &[8, 0]);
        assert_eq!(b[10], 1);
        assert_eq!(&b[11..13], &[3, 0]);
        assert_eq!(&b[15..19], &40.0f32.to_le_bytes());
        assert_eq!(&b[23..27], &[1, 0, 0, 0]);
        assert_eq!(b[27], 0xAB);
        assert_eq!(deserialize(&b).unwrap(), minimal());
        assert_eq!(serialize(&minimal()).unwrap(), b);
    }

    #[test]
    fn deserialize_errors() {
        let b = serialize(&minimal()).unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert_eq!(deserialize(&bad), Err(PayloadError::BadMagic));
        assert_eq!(deserialize(&b[..2]), Err(PayloadError::BadMagic));
        let mut bad = b.clone();
        bad[4] = 2;
        assert_eq!(deserialize(&bad), Err(PayloadError::UnsupportedVersion(2)));
        let mut long_blob = b.clone();
        long_blob[23] = 5;
        assert!(matches!(deserialize(&long_blob), Err(PayloadError::Truncated { .. })));
        for cut in 4..b.len() {
            assert!(matches!(deserialize(&b[..cut]), Err(PayloadError::Truncated { .. })), "cut {cut}");
        }
        let mut extra = b.clone();
        extra.push(0);
        assert_eq!(deserialize(&extra), Err(PayloadError::LengthMismatch { trailing: 1 }));
        let mut scheme = b;
        scheme[5] = 7;
        assert_eq!(deserialize(&scheme), Err(PayloadError::UnknownScheme(7)));
    }

    #[test]
    fn constructor_rejects_invalid_payloads() {
        let p = LdplParams::new(40.0, 20.0);
        let px = Pixel { x: 0, y: 0 };
        assert!(SemanticPayload::new(Scheme::Vq, 8, 8, vec![], vec![], vec![1]).is_err());
        assert!(SemanticPayload::new(Scheme::Vq, 8, 8, vec![px], vec![p], vec![]).is_err());
        assert!(SemanticPayload::new(Scheme::Vq, 8, 8, vec![Pixel { x: 8, y: 0 }], vec![p], vec![1]).is_err());
        assert!(SemanticPayload::new(Scheme::Vq, 8, 8, vec![px, px], vec![p], vec![1]).is_err());
        assert_eq!(
            SemanticPayload::new(Scheme::Vq, 300, 300, vec![px; 256], vec![p; 256], vec![1]),
            Err(PayloadError::TooManyBs(256))
        );
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let b = serialize(&minimal()).unwrap();
        assert_eq!(apply_channel(&b, &ChannelConfig::noiseless()), b);
    }

    #[test]
    fn channel_is_deterministic_and_length_preserving() {
        let data: Vec<u8> = (0..=255).collect();
        let cfg = ChannelConfig { ber: 0.1, seed: 9, protect_header: false };
        let a = apply_channel(&data, &cfg);
        assert_eq!(a, apply_channel(&data, &cfg));
        assert_eq!(a.len(), data.len());
        assert_ne!(a, data);
        let other = apply_channel(&data, &ChannelConfig { seed: 10, ..cfg });
        assert_ne!(a, other);
    }

    #[test]
    fn flip_count_matches_binomial_statistics() {
        let n_bytes = 125_000;
        let n = (8 * n_bytes) as f64;
        let p = 0.01;
        let sigma = (n * p * (1.0 - p)).sqrt();
        let zeros = vec![0u8; n_bytes];
        for seed in 0..5 {
            let cfg = ChannelConfig { ber: p, seed, protect_header: false };
            let flips: u32 = apply_channel(&zeros, &cfg).iter().map(|b| b.count_ones()).sum();
            assert!((f64::from(flips) - n * p).abs() <= 3.0 * sigma, "seed {seed}: {flips} flips");
        }
    }

    #[test]
    fn bandwidth_and_raw_baseline() {
        assert_eq!(measure_bandwidth(&[0; 1024]), 8.192);
        assert_eq!(measure_bandwidth(&[]), 0.0);
        let map = GridMap::zeros(256, 256, MapKind::Binary);
        assert_eq!(raw_baseline_bits(&map, &SparseObservationSet::empty(256, 256)), 65536);
        let empty = GridMap::zeros(0, 0, MapKind::Binary);
        let samples: Vec<Observation> = (0..10).map(|i| Observation { x: i, y: 0, psd: -50.0 }).collect();
        let set = SparseObservationSet::new(16, 16, samples).unwrap();
        assert_eq!(raw_baseline_bits(&empty, &set), 640);
    }

    fn arb_payload() -> impl Strategy<Value = SemanticPayload> {
        (1usize..300, 1usize..300, 1usize..6, any::<bool>(), prop::collection::vec(any::<u8>(), 1..200))
            .prop_flat_map(|(w, h, n, jpeg, blob)| {
                let bs = prop::collection::vec((0..w, 0..h, -50.0f64..150.0, 0.0f64..80.0), n);
                (Just((w, h, jpeg, blob)), bs)
            })
            .prop_map(|((w, h, jpeg, blob), bs)| {
                let scheme = if jpeg { Scheme::Jpeg } else { Scheme::Vq };
                let (px, params) =
                    bs.into_iter().map(|(x, y, a, b)| (Pixel { x, y }, LdplParams::new(a, b))).unzip();
                SemanticPayload::new(scheme, w, h, px, params, blob).unwrap()
            })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(p in arb_payload()) {
            let b = serialize(&p).unwrap();
            prop_assert_eq!(b.len(), p.header_len() + p.blob.len());
            prop_assert_eq!(deserialize(&b).unwrap(), p);
        }

        #[test]
        fn protected_header_survives_any_ber(p in arb_payload(), ber in 0.0f64..0.99, seed in any::<u64>()) {
            let b = serialize(&p).unwrap();
            let noisy = apply_channel(&b, &ChannelConfig { ber, seed, protect_header: true });
            prop_assert_eq!(&noisy[..p.header_len()], &b[..p.header_len()]);
            let q = deserialize(&noisy).unwrap();
            prop_assert_eq!(q.bs_list, p.bs_list);
            prop_assert_eq!(q.ldpl_list, p.ldpl_list);
            prop_assert_eq!(q.blob.len(), p.blob.len());
        }

        #[test]
        fn bandwidth_is_additive(a in prop::collection::vec(any::<u8>(), 0..100), b in prop::collection::vec(any::<u8>(), 0..100)) {
            let joined: Vec<u8> = a.iter().chain(&b).copied().collect();
            prop_assert!((measure_bandwidth(&joined) - measure_bandwidth(&a) - measure_bandwidth(&b)).abs() < 1e-12);
        }
    }
}
