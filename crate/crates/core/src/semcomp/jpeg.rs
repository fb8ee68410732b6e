//! A small JPEG-style codec for binary segmentation maps.
//!
//! Pipeline per 8×8 block: level shift to `[-128, 127]`, orthonormal DCT,
//! uniform quantization by the quality-scaled luminance table, DC predicted
//! from the left, upper and upper-left blocks with the median edge detector,
//! zig-zag scan, zero-run/value pairs packed as
//! LEB128 varints. Blocks whose quantized coefficients are all zero after DC
//! prediction are not stored; a varint skip count precedes every stored
//! block, and a final skip covers trailing empty blocks.
//!
//! Stream layout: `"RSJB"`, `u8` quality, `u16` width, `u16` height (little
//! endian), then the block records. The receiver thresholds the decoded
//! image at 0.5 so the output is binary again.

use super::dct::{dct_block_forward, dct_block_inverse, Block, BLOCK};
use super::vq::BINARY_THRESHOLD;
use super::SemCompError;
use crate::grid::{GridMap, MapKind};

const MAGIC: &[u8; 4] = b"RSJB";
pub const HEADER_LEN: usize = 9;
const EOB: u32 = 64;

const LUMA_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Row-major position of the i-th coefficient in zig-zag order.
const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7,
    14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39,
    46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Quality-scaled quantization table, libjpeg convention.
pub fn quant_table(quality: u8) -> Result<[u16; 64], SemCompError> {
    if !(1..=100).contains(&quality) {
        return Err(SemCompError::InvalidQuality(quality));
    }
    let q = u32::from(quality);
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut table = [0u16; 64];
    for (t, &base) in table.iter_mut().zip(LUMA_TABLE.iter()) {
        *t = ((u32::from(base) * scale + 50) / 100).clamp(1, 255) as u16;
    }
    Ok(table)
}

fn quantized_dc_of(level: f64, q0: u16) -> i64 {
    // DC of a constant block is 8 × value.
    (BLOCK as f64 * level / f64::from(q0)).round() as i64
}

/// Median edge detector over the quantized DCs of the left (`a`), upper
/// (`b`) and upper-left (`c`) blocks. Exact along axis-aligned edges.
fn med(a: i64, b: i64, c: i64) -> i64 {
    if c >= a.max(b) {
        a.min(b)
    } else if c <= a.min(b) {
        a.max(b)
    } else {
        a + b - c
    }
}

/// Quantized DCs of the blocks decoded so far; outside the image every
/// block reads as background.
struct DcGrid {
    dcs: Vec<i64>,
    cols: usize,
    background: i64,
}

impl DcGrid {
    fn new(cols: usize, rows: usize, background: i64) -> Self {
        DcGrid { dcs: vec![background; cols * rows], cols, background }
    }

    fn predict(&self, bx: usize, by: usize) -> i64 {
        let at = |x: Option<usize>, y: Option<usize>| match (x, y) {
            (Some(x), Some(y)) => self.dcs[y * self.cols + x],
            _ => self.background,
        };
        let (left, up) = (bx.checked_sub(1), by.checked_sub(1));
        med(at(left, Some(by)), at(Some(bx), up), at(left, up))
    }

    fn set(&mut self, bx: usize, by: usize, dc: i64) {
        self.dcs[by * self.cols + bx] = dc;
    }
}

fn put_varint(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn put_svarint(out: &mut Vec<u8>, v: i64) {
    let v = v as i32;
    put_varint(out, ((v << 1) ^ (v >> 31)) as u32);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn varint(&mut self) -> Result<u32, SemCompError> {
        let mut v: u64 = 0;
        for shift in (0..35).step_by(7) {
            let Some(&b) = self.bytes.get(self.pos) else {
                return Err(SemCompError::CorruptStream("stream ends inside a varint"));
            };
            self.pos += 1;
            v |= u64::from(b & 0x7f) << shift;
            if b & 0x80 == 0 {
                return u32::try_from(v).map_err(|_| SemCompError::CorruptStream("varint overflows 32 bits"));
            }
        }
        Err(SemCompError::CorruptStream("varint longer than 5 bytes"))
    }

    fn svarint(&mut self) -> Result<i64, SemCompError> {
        let u = self.varint()?;
        Ok(i64::from((u >> 1) as i32 ^ -((u & 1) as i32)))
    }
}

fn check_dims(width: usize, height: usize) -> Result<(), SemCompError> {
    if width % BLOCK != 0 || height % BLOCK != 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(SemCompError::IndivisibleDims { width, height, block: BLOCK });
    }
    Ok(())
}

/// Compresses a binary map. Dimensions must be multiples of 8.
pub fn jpeg_encode_binary(map: &GridMap, quality: u8) -> Result<Vec<u8>, SemCompError> {
    if map.kind() != MapKind::Binary {
        return Err(SemCompError::NotBinary(map.kind()));
    }
    let (w, h) = map.dims();
    check_dims(w, h)?;
    let table = quant_table(quality)?;

    let mut out = Vec::with_capacity(HEADER_LEN + 16);
    out.extend_from_slice(MAGIC);
    out.push(quality);
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());

    let mut dcs = DcGrid::new(w / BLOCK, h / BLOCK, quantized_dc_of(-128.0, table[0]));
    let mut skip: u32 = 0;
    for by in 0..h / BLOCK {
        for bx in 0..w / BLOCK {
            let mut block: Block = [[0.0; BLOCK]; BLOCK];
            for (dy, row) in block.iter_mut().enumerate() {
                for (dx, v) in row.iter_mut().enumerate() {
                    *v = map.get(bx * BLOCK + dx, by * BLOCK + dy) * 255.0 - 128.0;
                }
            }
            let coef = dct_block_forward(&block);
            let mut q = [0i64; 64];
            for (k, (c, step)) in coef.iter().flatten().zip(table.iter()).enumerate() {
                q[k] = (c / f64::from(*step)).round() as i64;
            }
            let pred = dcs.predict(bx, by);
            dcs.set(bx, by, q[0]);
            q[0] -= pred;

            if q.iter().all(|&c| c == 0) {
                skip += 1;
                continue;
            }
            put_varint(&mut out, skip);
            skip = 0;
            let mut run = 0u32;
            for &pos in ZIGZAG.iter() {
                let c = q[pos];
                if c == 0 {
                    run += 1;
                } else {
                    put_varint(&mut out, run);
                    put_svarint(&mut out, c);
                    run = 0;
                }
            }
            put_varint(&mut out, EOB);
        }
    }
    if skip > 0 {
        put_varint(&mut out, skip);
    }
    Ok(out)
}

/// Header fields of a stream: `(quality, width, height)`.
pub fn jpeg_header(bytes: &[u8]) -> Result<(u8, usize, usize), SemCompError> {
    if bytes.len() < HEADER_LEN {
        return Err(SemCompError::CorruptStream("stream shorter than its header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(SemCompError::CorruptStream("bad RSJB magic"));
    }
    let w = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    let h = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
    Ok((bytes[4], w, h))
}

/// Decodes a stream produced by [`jpeg_encode_binary`] into a binary map.
/// Any malformed or truncated stream is rejected as a whole.
pub fn jpeg_decode_binary(bytes: &[u8]) -> Result<GridMap, SemCompError> {
    let (quality, w, h) = jpeg_header(bytes)?;
    check_dims(w, h).map_err(|_| SemCompError::CorruptStream("header dimensions are not block multiples"))?;
    let table =
        quant_table(quality).map_err(|_| SemCompError::CorruptStream("header quality out of range"))?;
    decode_blocks(&bytes[HEADER_LEN..], w, h, &table, false)
}

/// Receiver-side decoding of a stream that may have crossed a noisy channel.
/// Size and quality come from the caller and the stream header is skipped.
/// Blocks from the first undecodable record on are background, so only bad
/// arguments are errors.
pub fn jpeg_decode_tolerant(
    bytes: &[u8],
    width: usize,
    height: usize,
    quality: u8,
) -> Result<GridMap, SemCompError> {
    check_dims(width, height)?;
    let table = quant_table(quality)?;
    decode_blocks(bytes.get(HEADER_LEN..).unwrap_or(&[]), width, height, &table, true)
}

fn decode_blocks(
    body: &[u8],
    w: usize,
    h: usize,
    table: &[u16; 64],
    tolerant: bool,
) -> Result<GridMap, SemCompError> {
    let (bw, bh) = (w / BLOCK, h / BLOCK);
    let total = bw * bh;
    let mut values = vec![0.0; w * h];
    let mut reader = Reader { bytes: body, pos: 0 };
    let mut dcs = DcGrid::new(bw, bh, quantized_dc_of(-128.0, table[0]));
    let mut index = 0usize;

    let paint = |index: usize, q: &[i64; 64], values: &mut [f64]| {
        let mut coef: Block = [[0.0; BLOCK]; BLOCK];
        for (k, c) in coef.iter_mut().flatten().enumerate() {
            *c = q[k] as f64 * f64::from(table[k]);
        }
        let pixels = dct_block_inverse(&coef);
        let (bx, by) = (index % bw, index / bw);
        for (dy, row) in pixels.iter().enumerate() {
            for (dx, v) in row.iter().enumerate() {
                let level = (v + 128.0) / 255.0;
                values[(by * BLOCK + dy) * w + bx * BLOCK + dx] =
                    f64::from(u8::from(level >= BINARY_THRESHOLD));
            }
        }
    };

    let mut run = || -> Result<(), SemCompError> {
        while index < total {
            let skip = reader.varint()? as usize;
            if skip > total - index {
                return Err(SemCompError::CorruptStream("skip runs past the last block"));
            }
            for _ in 0..skip {
                let (bx, by) = (index % bw, index / bw);
                let mut q = [0i64; 64];
                q[0] = dcs.predict(bx, by);
                dcs.set(bx, by, q[0]);
                paint(index, &q, &mut values);
                index += 1;
            }
            if index == total {
                break;
            }

            let mut q = [0i64; 64];
            let mut pos = 0usize;
            loop {
                let run = reader.varint()?;
                if run == EOB {
                    break;
                }
                pos += run as usize;
                if pos >= 64 {
                    return Err(SemCompError::CorruptStream("zero run leaves the block"));
                }
                let v = reader.svarint()?;
                if v == 0 {
                    return Err(SemCompError::CorruptStream("explicit zero coefficient"));
                }
                q[ZIGZAG[pos]] = v;
                pos += 1;
            }
            let (bx, by) = (index % bw, index / bw);
            q[0] = dcs
                .predict(bx, by)
                .checked_add(q[0])
                .filter(|dc| dc.abs() < 1 << 40)
                .ok_or(SemCompError::CorruptStream("DC prediction overflows"))?;
            dcs.set(bx, by, q[0]);
            paint(index, &q, &mut values);
            index += 1;
        }
        if !reader.at_end() {
            return Err(SemCompError::CorruptStream("trailing bytes after the last block"));
        }
        Ok(())
    };
    match run() {
        Ok(()) => {}
        Err(e) if !tolerant => return Err(e),
        Err(_) => {
            // blocks past the damage are background
            let mut q = [0i64; 64];
            q[0] = quantized_dc_of(-128.0, table[0]);
            while index < total {
                paint(index, &q, &mut values);
                index += 1;
            }
        }
    }
    Ok(GridMap::new(w, h, MapKind::Binary, values)?)
}
