//! 8-bit binary PGM (P5) images for maps with values in `[0, 1]`.

use super::HarnessError;
use crate::grid::{GridMap, MapKind};
use std::path::Path;

/// Encodes `round(v · 255)` per pixel (halves round up).
pub fn encode_pgm(map: &GridMap) -> Result<Vec<u8>, HarnessError> {
    let mut out = format!("P5\n{} {}\n255\n", map.width(), map.height()).into_bytes();
    out.reserve(map.len());
    for &v in map.values() {
        if !(0.0..=1.0).contains(&v) {
            return Err(HarnessError::OutOfRange(v));
        }
        out.push((v * 255.0 + 0.5).floor() as u8);
    }
    Ok(out)
}

fn malformed(reason: &'static str) -> HarnessError {
    HarnessError::MalformedFile { path: None, reason }
}

/// Parses a P5 image. Pixel values are divided by the header's maximum;
/// binary maps are re-thresholded at 0.5.
pub fn decode_pgm(bytes: &[u8], kind: MapKind) -> Result<GridMap, HarnessError> {
    let mut pos = 0usize;
    let mut token = || -> Result<&[u8], HarnessError> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(malformed("header ends early")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };
    if token()? != b"P5" {
        return Err(malformed("not a binary PGM (P5)"));
    }
    let mut number = || -> Result<usize, HarnessError> {
        std::str::from_utf8(token()?).ok().and_then(|s| s.parse().ok()).ok_or(malformed("bad header number"))
    };
    let (w, h, max) = (number()?, number()?, number()?);
    if max == 0 || max > 255 {
        return Err(malformed("only 8-bit PGM is supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let body = bytes.get(pos + 1..).ok_or(malformed("missing raster"))?;
    if body.len() != w * h {
        return Err(malformed("raster size does not match the header"));
    }
    let values = body
        .iter()
        .map(|&b| {
            let v = f64::from(b) / max as f64;
            if kind == MapKind::Binary {
                f64::from(u8::from(v >= 0.5))
            } else {
                v
            }
        })
        .collect();
    Ok(GridMap::new(w, h, kind, values)?)
}

pub fn save_map(path: impl AsRef<Path>, map: &GridMap) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let bytes = encode_pgm(map)?;
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn load_map(path: impl AsRef<Path>, kind: MapKind) -> Result<GridMap, HarnessError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    decode_pgm(&bytes, kind).map_err(|e| e.at(path))
}
