//! Patch-based vector quantization of binary segmentation maps.
//!
//! A map is cut into non-overlapping `P×P` patches, each flattened row-major
//! into a latent vector of length `L = P²`. Every latent is replaced by the
//! index of its nearest codeword, and only the index vector travels.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SemCompError;
use crate::grid::{GridMap, MapKind};

/// Binarization threshold applied after decoding.
pub const BINARY_THRESHOLD: f64 = 0.5;

const CODEBOOK_MAGIC: &[u8; 4] = b"RSCB";
const CODEBOOK_VERSION: u8 = 1;

/// Latent vectors of a map together with the latent grid shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Latents {
    /// `A`: patches per column of the map.
    pub rows: usize,
    /// `B`: patches per row of the map.
    pub cols: usize,
    pub patch: usize,
    pub vectors: Vec<Vec<f64>>,
}

/// Cuts `map` into row-major `patch × patch` tiles, each flattened row-major.
pub fn patchify(map: &GridMap, patch: usize) -> Result<Latents, SemCompError> {
    let (w, h) = map.dims();
    if patch == 0 || w % patch != 0 || h % patch != 0 {
        return Err(SemCompError::IndivisibleDims { width: w, height: h, block: patch });
    }
    let (rows, cols) = (h / patch, w / patch);
    let mut vectors = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut z = Vec::with_capacity(patch * patch);
            for y in r * patch..(r + 1) * patch {
                let start = map.index(c * patch, y);
                z.extend_from_slice(&map.values()[start..start + patch]);
            }
            vectors.push(z);
        }
    }
    Ok(Latents { rows, cols, patch, vectors })
}

/// Inverse of [`patchify`].
pub fn unpatchify(latents: &Latents, kind: MapKind) -> Result<GridMap, SemCompError> {
    let p = latents.patch;
    let (w, h) = (latents.cols * p, latents.rows * p);
    if latents.vectors.len() != latents.rows * latents.cols {
        return Err(SemCompError::DimMismatch {
            expected: latents.rows * latents.cols,
            actual: latents.vectors.len(),
        });
    }
    let mut values = vec![0.0; w * h];
    for (i, z) in latents.vectors.iter().enumerate() {
        if z.len() != p * p {
            return Err(SemCompError::DimMismatch { expected: p * p, actual: z.len() });
        }
        let (r, c) = (i / latents.cols, i % latents.cols);
        for dy in 0..p {
            let start = (r * p + dy) * w + c * p;
            values[start..start + p].copy_from_slice(&z[dy * p..(dy + 1) * p]);
        }
    }
    Ok(GridMap::new(w, h, kind, values)?)
}

/// `n` codewords of dimension `L`, pairwise distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    codewords: Vec<Vec<f64>>,
}

impl Codebook {
    pub fn new(codewords: Vec<Vec<f64>>) -> Result<Self, SemCompError> {
        let Some(first) = codewords.first() else {
            return Err(SemCompError::InvalidCodebook("codebook is empty"));
        };
        let dim = first.len();
        if dim == 0 {
            return Err(SemCompError::InvalidCodebook("codewords have zero length"));
        }
        if codewords.iter().any(|w| w.len() != dim) {
            return Err(SemCompError::InvalidCodebook("codewords differ in length"));
        }
        if codewords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SemCompError::InvalidCodebook("non-finite codeword entry"));
        }
        let mut seen = std::collections::HashSet::new();
        for w in &codewords {
            if !seen.insert(bit_key(w)) {
                return Err(SemCompError::InvalidCodebook("duplicate codeword"));
            }
        }
        Ok(Codebook { codewords })
    }

    /// Number of codewords `n`.
    pub fn len(&self) -> usize {
        self.codewords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.codewords.is_empty()
    }

    /// Codeword dimension `L`.
    pub fn dim(&self) -> usize {
        self.codewords[0].len()
    }

    pub fn codewords(&self) -> &[Vec<f64>] {
        &self.codewords
    }

    pub fn codeword(&self, i: usize) -> &[f64] {
        &self.codewords[i]
    }

    /// Side of the square patch a codeword encodes, if `L` is a square.
    pub fn patch_size(&self) -> Option<usize> {
        let l = self.dim();
        let p = (l as f64).sqrt().round() as usize;
        (p * p == l).then_some(p)
    }

    /// Bits needed per transmitted index.
    pub fn bits_per_index(&self) -> u32 {
        bits_per_index(self.len())
    }

    /// `RSCB` file: magic, `u8` version, `u16` n, `u16` L, then `n·L`
    /// little-endian `f32`.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<(), SemCompError> {
        let n = u16::try_from(self.len())
            .map_err(|_| SemCompError::InvalidCodebook("more than 65535 codewords"))?;
        let l = u16::try_from(self.dim())
            .map_err(|_| SemCompError::InvalidCodebook("codeword longer than 65535"))?;
        let mut buf = Vec::with_capacity(9 + 4 * self.len() * self.dim());
        buf.extend_from_slice(CODEBOOK_MAGIC);
        buf.push(CODEBOOK_VERSION);
        buf.extend_from_slice(&n.to_le_bytes());
        buf.extend_from_slice(&l.to_le_bytes());
        for v in self.codewords.iter().flatten() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, SemCompError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self, SemCompError> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SemCompError> {
        if bytes.len() < 9 || &bytes[..4] != CODEBOOK_MAGIC {
            return Err(SemCompError::InvalidCodebook("missing RSCB header"));
        }
        if bytes[4] != CODEBOOK_VERSION {
            return Err(SemCompError::InvalidCodebook("unsupported codebook version"));
        }
        let n = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
        let l = u16::from_le_bytes([bytes[7], bytes[8]]) as usize;
        let body = &bytes[9..];
        if body.len() != 4 * n * l {
            return Err(SemCompError::InvalidCodebook("codebook body length does not match header"));
        }
        let flat: Vec<f64> =
            body.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]]))).collect();
        Codebook::new(flat.chunks(l.max(1)).map(<[f64]>::to_vec).collect())
    }

    /// The same codebook with every entry rounded to `f32`, i.e. exactly
    /// what a reader of the `RSCB` file sees.
    pub fn to_f32_precision(&self) -> Result<Codebook, SemCompError> {
        Codebook::new(
            self.codewords.iter().map(|w| w.iter().map(|&v| f64::from(v as f32)).collect()).collect(),
        )
    }
}

/// `ceil(log2 n)`, with a one-word codebook needing no bits at all.
pub fn bits_per_index(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn bit_key(v: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 compare equal, so they must share a key.
    v.iter().map(|x| if *x == 0.0 { 0 } else { x.to_bits() }).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest codeword; ties go to the smaller index.
pub fn nearest_codeword(z: &[f64], cb: &Codebook) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, w) in cb.codewords.iter().enumerate() {
        let d = sq_dist(z, w);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Nearest-codeword assignment of each latent.
pub fn vq_encode(latents: &[Vec<f64>], cb: &Codebook) -> Result<Vec<u32>, SemCompError> {
    latents
        .iter()
        .map(|z| {
            if z.len() != cb.dim() {
                return Err(SemCompError::DimMismatch { expected: cb.dim(), actual: z.len() });
            }
            Ok(nearest_codeword(z, cb).0 as u32)
        })
        .collect()
}

/// The transmitted index vector and the latent grid shape.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VqEncoding {
    pub indices: Vec<u32>,
    pub rows: usize,
    pub cols: usize,
    pub patch: usize,
}

impl VqEncoding {
    /// `A·B·ceil(log2 n)`.
    pub fn payload_bits(&self, codebook_size: usize) -> u64 {
        (self.rows * self.cols) as u64 * u64::from(bits_per_index(codebook_size))
    }

    /// Packs the indices MSB-first at `ceil(log2 n)` bits each; the last
    /// byte is zero-padded.
    pub fn pack(&self, codebook_size: usize) -> Vec<u8> {
        pack_indices(&self.indices, bits_per_index(codebook_size))
    }

    /// Inverse of [`VqEncoding::pack`] for a map of `width × height` pixels.
    pub fn unpack(
        bytes: &[u8],
        width: usize,
        height: usize,
        patch: usize,
        codebook_size: usize,
    ) -> Result<Self, SemCompError> {
        if patch == 0 || width % patch != 0 || height % patch != 0 {
            return Err(SemCompError::IndivisibleDims { width, height, block: patch });
        }
        let (rows, cols) = (height / patch, width / patch);
        let indices = unpack_indices(bytes, rows * cols, bits_per_index(codebook_size))?;
        Ok(VqEncoding { indices, rows, cols, patch })
    }
}

pub fn pack_indices(indices: &[u32], bits: u32) -> Vec<u8> {
    let total = indices.len() * bits as usize;
    let mut out = vec![0u8; total.div_ceil(8)];
    let mut pos = 0usize;
    for &idx in indices {
        for b in (0..bits).rev() {
            if (idx >> b) & 1 == 1 {
                out[pos / 8] |= 0x80 >> (pos % 8);
            }
            pos += 1;
        }
    }
    out
}

pub fn unpack_indices(bytes: &[u8], count: usize, bits: u32) -> Result<Vec<u32>, SemCompError> {
    let needed = (count * bits as usize).div_ceil(8);
    if bytes.len() < needed {
        return Err(SemCompError::CorruptStream("index vector is truncated"));
    }
    if bytes.len() > needed {
        return Err(SemCompError::CorruptStream("trailing bytes after index vector"));
    }
    let mut pos = 0usize;
    Ok((0..count)
        .map(|_| {
            let mut v = 0u32;
            for _ in 0..bits {
                let bit = (bytes[pos / 8] >> (7 - pos % 8)) & 1;
                v = (v << 1) | u32::from(bit);
                pos += 1;
            }
            v
        })
        .collect())
}

/// Patchify then quantize.
pub fn encode_map(map: &GridMap, cb: &Codebook) -> Result<VqEncoding, SemCompError> {
    let patch = cb.patch_size().ok_or(SemCompError::InvalidCodebook("codeword length is not a square"))?;
    let latents = patchify(map, patch)?;
    let indices = vq_encode(&latents.vectors, cb)?;
    Ok(VqEncoding { indices, rows: latents.rows, cols: latents.cols, patch })
}

/// Rebuilds the map from codewords and re-binarizes it at 0.5.
pub fn vq_decode(enc: &VqEncoding, cb: &Codebook) -> Result<GridMap, SemCompError> {
    if enc.patch * enc.patch != cb.dim() {
        return Err(SemCompError::DimMismatch { expected: cb.dim(), actual: enc.patch * enc.patch });
    }
    if enc.indices.len() != enc.rows * enc.cols {
        return Err(SemCompError::DimMismatch { expected: enc.rows * enc.cols, actual: enc.indices.len() });
    }
    let vectors = enc
        .indices
        .iter()
        .map(|&k| {
            let k = k as usize;
            if k >= cb.len() {
                return Err(SemCompError::IndexOutOfRange { index: k, n: cb.len() });
            }
            Ok(cb.codeword(k).iter().map(|&v| f64::from(u8::from(v >= BINARY_THRESHOLD))).collect())
        })
        .collect::<Result<Vec<Vec<f64>>, _>>()?;
    unpatchify(&Latents { rows: enc.rows, cols: enc.cols, patch: enc.patch, vectors }, MapKind::Binary)
}

/// Seeded k-means (k-means++ initialization, Lloyd iterations).
pub fn train_codebook(
    latents: &[Vec<f64>],
    n: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook, SemCompError> {
    train_codebook_traced(latents, n, iters, seed, |_| {})
}

/// [`train_codebook`], calling `on_iter` with the centroids after
/// initialization and after every Lloyd iteration.
pub fn train_codebook_traced<F>(
    latents: &[Vec<f64>],
    n: usize,
    iters: usize,
    seed: u64,
    mut on_iter: F,
) -> Result<Codebook, SemCompError>
where
    F: FnMut(&[Vec<f64>]),
{
    if n == 0 {
        return Err(SemCompError::InvalidCodebook("codebook size must be positive"));
    }
    let dim = latents.first().map(Vec::len).unwrap_or(0);
    if let Some(bad) = latents.iter().find(|z| z.len() != dim) {
        return Err(SemCompError::DimMismatch { expected: dim, actual: bad.len() });
    }

    // Identical latents always land in the same cluster, so k-means over the
    // distinct vectors with multiplicities is the same problem, much smaller.
    let mut slot: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut points: Vec<&[f64]> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for z in latents {
        match slot.get(&bit_key(z)) {
            Some(&i) => weights[i] += 1.0,
            None => {
                slot.insert(bit_key(z), points.len());
                points.push(z);
                weights.push(1.0);
            }
        }
    }
    if points.len() < n {
        return Err(SemCompError::TooFewDistinctLatents { distinct: points.len(), requested: n });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&points, &weights, n, &mut rng);
    on_iter(&centroids);

    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..iters {
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centroids.iter().enumerate() {
                let d = sq_dist(p, c);
                if d < best.1 {
                    best = (j, d);
                }
            }
            if assign[i] != best.0 {
                changed = true;
                assign[i] = best.0;
            }
            dists[i] = best.1;
        }

        let mut members = vec![0usize; n];
        for &a in &assign {
            members[a] += 1;
        }
        // Empty clusters take over the worst-served point of a cluster that
        // can spare one.
        for j in 0..n {
            if members[j] > 0 {
                continue;
            }
            let donor = (0..points.len())
                .filter(|&i| members[assign[i]] > 1)
                .max_by(|&a, &b| (weights[a] * dists[a]).total_cmp(&(weights[b] * dists[b])).then(b.cmp(&a)));
            if let Some(i) = donor {
                members[assign[i]] -= 1;
                assign[i] = j;
                members[j] = 1;
                dists[i] = 0.0;
                changed = true;
            }
        }

        let mut sums = vec![vec![0.0; dim]; n];
        let mut mass = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let a = assign[i];
            mass[a] += weights[i];
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += weights[i] * v;
            }
        }
        for j in 0..n {
            if mass[j] > 0.0 {
                centroids[j] = sums[j].iter().map(|s| s / mass[j]).collect();
            }
        }
        on_iter(&centroids);
        if !changed {
            break;
        }
    }

    let mut seen = std::collections::HashSet::new();
    centroids.retain(|c| seen.insert(bit_key(c)));
    Codebook::new(centroids)
}

fn kmeans_pp_init(points: &[&[f64]], weights: &[f64], n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = WeightedIndex::new(weights).expect("weights are positive").sample(rng);
    let mut centroids = vec![points[first].to_vec()];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < n {
        let scores: Vec<f64> = nearest.iter().zip(weights).map(|(d, w)| d * w).collect();
        // Distinct points outnumber the centroids, so some score is positive.
        let next = WeightedIndex::new(&scores).expect("a positive score remains").sample(rng);
        let c = points[next].to_vec();
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn binary_map(w: usize, h: usize, f: impl FnMut(usize, usize) -> f64) -> GridMap {
        GridMap::from_fn(w, h, MapKind::Binary, f).unwrap()
    }

    #[test]
    fn patchify_examples() {
        let m = binary_map(2, 2, |x, y| f64::from(u8::from(x == y)));
        let l = patchify(&m, 2).unwrap();
        assert_eq!(l.vectors, vec![vec![1.0, 0.0, 0.0, 1.0]]);

        let m4 = binary_map(4, 4, |x, y| f64::from(u8::from((x * 3 + y) % 2 == 0)));
        let l4 = patchify(&m4, 2).unwrap();
        assert_eq!(l4.vectors.len(), 4);
        assert_eq!(unpatchify(&l4, MapKind::Binary).unwrap(), m4);

        let big = GridMap::zeros(256, 256, MapKind::Binary);
        let lb = patchify(&big, 8).unwrap();
        assert_eq!((lb.rows, lb.cols), (32, 32));
        assert_eq!(lb.vectors.len(), 1024);
        assert!(lb.vectors.iter().all(|z| z.len() == 64));

        assert!(matches!(patchify(&m4, 3), Err(SemCompError::IndivisibleDims { .. })));
    }

    #[test]
    fn bits_per_index_values() {
        assert_eq!(bits_per_index(1), 0);
        assert_eq!(bits_per_index(2), 1);
        assert_eq!(bits_per_index(3), 2);
        assert_eq!(bits_per_index(256), 8);
        assert_eq!(bits_per_index(257), 9);
    }

    #[test]
    fn encode_examples() {
        let cb = Codebook::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(vq_encode(&[vec![0.9, 0.1]], &cb).unwrap(), vec![0]);
        let cb4 =
            Codebook::new(vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.3, 0.7]]).unwrap();
        assert_eq!(vq_encode(&[vec![0.3, 0.7]], &cb4).unwrap(), vec![3]);
        assert!(matches!(vq_encode(&[vec![0.0]], &cb), Err(SemCompError::DimMismatch { .. })));
        // Equidistant: the lower index wins.
        assert_eq!(vq_encode(&[vec![0.5, 0.5]], &cb).unwrap(), vec![0]);
    }

    #[test]
    fn encoding_is_exhaustively_optimal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cb =
            Codebook::new((0..17).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect()).unwrap();
        let latents: Vec<Vec<f64>> =
            (0..500).map(|_| (0..6).map(|_| rng.random::<f64>()).collect()).collect();
        let idx = vq_encode(&latents, &cb).unwrap();
        for (z, &k) in latents.iter().zip(&idx) {
            let chosen = sq_dist(z, cb.codeword(k as usize));
            for w in cb.codewords() {
                assert!(chosen <= sq_dist(z, w));
            }
        }
    }

    #[test]
    fn two_point_clustering_is_exact() {
        let mut latents = vec![vec![0.0; 16]; 500];
        latents.extend(vec![vec![1.0; 16]; 500]);
        let cb = train_codebook(&latents, 2, 25, 9).unwrap();
        let mut words = cb.codewords().to_vec();
        words.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(words, vec![vec![0.0; 16], vec![1.0; 16]]);
    }

    #[test]
    fn single_codeword_is_the_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let latents: Vec<Vec<f64>> =
            (0..300).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let cb = train_codebook(&latents, 1, 10, 1).unwrap();
        for d in 0..4 {
            let mean = latents.iter().map(|z| z[d]).sum::<f64>() / latents.len() as f64;
            assert!((cb.codeword(0)[d] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn sse_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let latents: Vec<Vec<f64>> = (0..600)
            .map(|i| {
                let centre = (i % 5) as f64;
                (0..3).map(|_| centre + rng.random_range(-0.8..0.8)).collect()
            })
            .collect();
        let mut history = Vec::new();
        train_codebook_traced(&latents, 8, 25, 4, |c| {
            // SSE of this centroid set under its own optimal assignment,
            // recomputed from the raw latents.
            let sse: f64 =
                latents.iter().map(|z| c.iter().map(|w| sq_dist(z, w)).fold(f64::INFINITY, f64::min)).sum();
            history.push(sse);
        })
        .unwrap();
        assert!(history.len() >= 2);
        for pair in history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "{history:?}");
        }
    }

    #[test]
    fn training_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let latents: Vec<Vec<f64>> =
            (0..200).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let a = train_codebook(&latents, 6, 25, 77).unwrap();
        let b = train_codebook(&latents, 6, 25, 77).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 6);
    }

    #[test]
    fn too_few_distinct_latents() {
        let latents = vec![vec![0.0; 4]; 10];
        assert_eq!(
            train_codebook(&latents, 2, 5, 0),
            Err(SemCompError::TooFewDistinctLatents { distinct: 1, requested: 2 })
        );
    }

    #[test]
    fn decode_examples() {
        // Every patch is exactly a codeword: lossless.
        let m = binary_map(8, 4, |x, _| f64::from(u8::from(x >= 4)));
        let cb = Codebook::new(vec![vec![0.0; 16], vec![1.0; 16]]).unwrap();
        let enc = encode_map(&m, &cb).unwrap();
        assert_eq!(enc.indices, vec![0, 1]);
        assert_eq!(vq_decode(&enc, &cb).unwrap(), m);

        // One codeword: a tiling of its thresholded pattern.
        let word: Vec<f64> = vec![0.9, 0.2, 0.4, 0.6];
        let single = Codebook::new(vec![word]).unwrap();
        let enc = encode_map(&binary_map(4, 2, |_, _| 0.0), &single).unwrap();
        let out = vq_decode(&enc, &single).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);

        let bad = VqEncoding { indices: vec![0, 5], rows: 1, cols: 2, patch: 4 };
        assert_eq!(vq_decode(&bad, &cb), Err(SemCompError::IndexOutOfRange { index: 5, n: 2 }));
    }

    #[test]
    fn trained_codebook_beats_single_codeword() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let maps: Vec<GridMap> = (0..12)
            .map(|_| {
                let (x0, y0) = (rng.random_range(0..20), rng.random_range(0..20));
                let (x1, y1) = (x0 + rng.random_range(4..12), y0 + rng.random_range(4..12));
                binary_map(32, 32, |x, y| f64::from(u8::from(x >= x0 && x < x1 && y >= y0 && y < y1)))
            })
            .collect();
        let latents: Vec<Vec<f64>> = maps.iter().flat_map(|m| patchify(m, 4).unwrap().vectors).collect();
        let rich = train_codebook(&latents, 16, 25, 1).unwrap();
        let single = train_codebook(&latents, 1, 25, 1).unwrap();
        let hamming = |cb: &Codebook| -> usize {
            maps.iter()
                .map(|m| {
                    let out = vq_decode(&encode_map(m, cb).unwrap(), cb).unwrap();
                    out.values().iter().zip(m.values()).filter(|(a, b)| a != b).count()
                })
                .sum()
        };
        assert!(hamming(&rich) <= hamming(&single));
    }

    #[test]
    fn codebook_file_round_trip() {
        let cb = Codebook::new(vec![vec![0.25, 0.5, 0.75, 1.0], vec![0.1, 0.2, 0.3, 0.4]]).unwrap();
        let bytes = cb.to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"RSCB");
        assert_eq!(bytes.len(), 9 + 2 * 4 * 4);
        let back = Codebook::from_bytes(&bytes).unwrap();
        assert_eq!(back, cb.to_f32_precision().unwrap());
        assert!(Codebook::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Codebook::from_bytes(&bad).is_err());
    }

    #[test]
    fn packing_examples() {
        let enc = VqEncoding { indices: vec![1, 0, 1, 1, 0, 0, 0, 1, 1], rows: 3, cols: 3, patch: 2 };
        assert_eq!(enc.payload_bits(2), 9);
        let bytes = enc.pack(2);
        assert_eq!(bytes, vec![0b1011_0001, 0b1000_0000]);
        let back = VqEncoding::unpack(&bytes, 6, 6, 2, 2).unwrap();
        assert_eq!(back, enc);
        assert!(VqEncoding::unpack(&bytes[..1], 6, 6, 2, 2).is_err());
    }

    proptest! {
        #[test]
        fn pack_unpack_identity(bits in 1u32..=16, raw in prop::collection::vec(any::<u32>(), 0..64)) {
            let idx: Vec<u32> = raw.iter().map(|v| v & ((1u32 << bits) - 1)).collect();
            let bytes = pack_indices(&idx, bits);
            prop_assert_eq!(bytes.len(), (idx.len() * bits as usize).div_ceil(8));
            prop_assert_eq!(unpack_indices(&bytes, idx.len(), bits).unwrap(), idx);
        }

        #[test]
        fn patch_round_trip(p in 1usize..5, a in 1usize..5, b in 1usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = GridMap::from_fn(b * p, a * p, MapKind::Binary, |_, _| f64::from(u8::from(rng.random_bool(0.5)))).unwrap();
            prop_assert_eq!(unpatchify(&patchify(&m, p).unwrap(), MapKind::Binary).unwrap(), m);
        }

        #[test]
        fn vq_payload_depends_only_on_shape(seed in any::<u64>(), n in 2usize..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let idx: Vec<u32> = (0..64).map(|_| rng.random_range(0..n as u32)).collect();
            let enc = VqEncoding { indices: idx, rows: 8, cols: 8, patch: 8 };
            prop_assert_eq!(enc.payload_bits(n), 64 * u64::from(bits_per_index(n)));
            prop_assert_eq!(enc.pack(n).len() as u64, enc.payload_bits(n).div_ceil(8));
        }
    }
}
