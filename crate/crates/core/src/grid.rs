//! Dense grid fields and sparse observation sets.
//!
//! Everything in the crate addresses pixels as `(x, y)` with `x` the column
//! and `y` the row; storage is row-major, so pixel `(x, y)` lives at index
//! `y * width + x`.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (usize, usize), right: (usize, usize) },
    #[error("map kind mismatch: {left:?} vs {right:?}")]
    KindMismatch { left: MapKind, right: MapKind },
    #[error("expected {expected} values for the grid, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("value {value} at index {index} violates the {kind:?} invariant")]
    InvalidValue { kind: MapKind, index: usize, value: f64 },
    #[error("field has no finite positive value to normalize by")]
    DegenerateField,
    #[error("reference field is all zero")]
    ZeroReference,
    #[error("pixel ({x}, {y}) is outside a {width}x{height} grid")]
    OutOfBounds { x: usize, y: usize, width: usize, height: usize },
    #[error("duplicate observation at ({x}, {y})")]
    DuplicateObservation { x: usize, y: usize },
    #[error("downsampling factor {factor} does not divide {width}x{height}")]
    IndivisibleFactor { factor: usize, width: usize, height: usize },
}

/// What the values of a [`GridMap`] mean. The kind decides which value
/// range is enforced at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    /// Received power in dBm. Any finite value.
    PowerDbm,
    /// Received power mapped into `[0, 1]`.
    NormalizedPower,
    /// `0.0` or `1.0` only.
    Binary,
    /// Radio depth in `[0, 1]`.
    Depth,
    /// Unconstrained finite field, e.g. a path-loss surface in dB.
    Scalar,
}

impl MapKind {
    fn admits(self, v: f64) -> bool {
        if !v.is_finite() {
            return false;
        }
        match self {
            MapKind::PowerDbm | MapKind::Scalar => true,
            MapKind::NormalizedPower | MapKind::Depth => (0.0..=1.0).contains(&v),
            MapKind::Binary => v == 0.0 || v == 1.0,
        }
    }
}

/// A pixel coordinate. Ordering is lexicographic on `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pixel {
    pub x: usize,
    pub y: usize,
}

impl Pixel {
    pub const fn new(x: usize, y: usize) -> Self {
        Pixel { x, y }
    }

    /// Euclidean distance in pixels.
    pub fn distance(self, other: Pixel) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }
}

impl From<(usize, usize)> for Pixel {
    fn from((x, y): (usize, usize)) -> Self {
        Pixel { x, y }
    }
}

impl fmt::Display for Pixel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

/// A dense row-major scalar field with an explicit [`MapKind`].
///
/// Construction validates the kind's value range, so a `GridMap` that exists
/// always satisfies its invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    kind: MapKind,
    values: Vec<f64>,
}

impl GridMap {
    pub fn new(width: usize, height: usize, kind: MapKind, values: Vec<f64>) -> Result<Self, GridError> {
        let expected = width * height;
        if values.len() != expected {
            return Err(GridError::LengthMismatch { expected, actual: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !kind.admits(**v)) {
            return Err(GridError::InvalidValue { kind, index, value });
        }
        Ok(GridMap { width, height, kind, values })
    }

    /// A grid with every pixel set to `value`.
    pub fn filled(width: usize, height: usize, kind: MapKind, value: f64) -> Result<Self, GridError> {
        Self::new(width, height, kind, vec![value; width * height])
    }

    pub fn zeros(width: usize, height: usize, kind: MapKind) -> Self {
        GridMap { width, height, kind, values: vec![0.0; width * height] }
    }

    /// Builds a grid by evaluating `f(x, y)` at every pixel in row-major order.
    pub fn from_fn<F>(width: usize, height: usize, kind: MapKind, mut f: F) -> Result<Self, GridError>
    where
        F: FnMut(usize, usize) -> f64,
    {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, kind, values)
    }

    /// Binary map with ones at the given pixels.
    pub fn one_hot(width: usize, height: usize, pixels: &[Pixel]) -> Result<Self, GridError> {
        let mut map = Self::zeros(width, height, MapKind::Binary);
        for &p in pixels {
            let i = map.checked_index(p)?;
            map.values[i] = 1.0;
        }
        Ok(map)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn kind(&self) -> MapKind {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn contains(&self, p: Pixel) -> bool {
        p.x < self.width && p.y < self.height
    }

    pub fn checked_index(&self, p: Pixel) -> Result<usize, GridError> {
        if self.contains(p) {
            Ok(self.index(p.x, p.y))
        } else {
            Err(GridError::OutOfBounds { x: p.x, y: p.y, width: self.width, height: self.height })
        }
    }

    /// Value at `(x, y)`. Panics when out of bounds.
    pub fn get(&self, x: usize, y: usize) -> f64 {
        assert!(x < self.width && y < self.height, "pixel ({x}, {y}) out of bounds");
        self.values[self.index(x, y)]
    }

    pub fn at(&self, p: Pixel) -> f64 {
        self.get(p.x, p.y)
    }

    /// Same values under a different kind, re-validated.
    pub fn with_kind(self, kind: MapKind) -> Result<Self, GridError> {
        Self::new(self.width, self.height, kind, self.values)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of pixels equal to `1.0`.
    pub fn count_ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1.0).count()
    }

    /// Pixels whose value is `1.0`, in row-major order.
    pub fn ones(&self) -> Vec<Pixel> {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v == 1.0)
            .map(|(i, _)| Pixel::new(i % self.width, i / self.width))
            .collect()
    }

    pub fn ensure_same_dims(&self, other: &GridMap) -> Result<(), GridError> {
        if self.dims() != other.dims() {
            return Err(GridError::DimensionMismatch { left: self.dims(), right: other.dims() });
        }
        Ok(())
    }

    /// Integer-factor block downsampling.
    ///
    /// Continuous kinds take the block mean. Binary maps take the block mean
    /// and re-binarize at 0.5 (ties go to 1), so a thin feature that covers
    /// half a block survives.
    pub fn downsample(&self, factor: usize) -> Result<GridMap, GridError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(GridError::IndivisibleFactor { factor, width: self.width, height: self.height });
        }
        if factor == 1 {
            return Ok(self.clone());
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let area = (factor * factor) as f64;
        let mut out = Vec::with_capacity(w * h);
        for by in 0..h {
            for bx in 0..w {
                let mut acc = 0.0;
                for y in by * factor..(by + 1) * factor {
                    let row = y * self.width;
                    acc += self.values[row + bx * factor..row + (bx + 1) * factor].iter().sum::<f64>();
                }
                let mean = acc / area;
                out.push(match self.kind {
                    MapKind::Binary => f64::from(u8::from(mean >= 0.5)),
                    _ => mean,
                });
            }
        }
        GridMap::new(w, h, self.kind, out)
    }

    /// One of the eight symmetries of the rectangle grid. Bit 0 of `t`
    /// transposes, bit 1 mirrors columns, bit 2 mirrors rows; the mirrors
    /// apply after the transpose.
    pub fn symmetry(&self, t: u8) -> GridMap {
        let transpose = t & 1 != 0;
        let (w, h) = if transpose { (self.height, self.width) } else { (self.width, self.height) };
        let mut values = Vec::with_capacity(self.values.len());
        for y in 0..h {
            for x in 0..w {
                let x1 = if t & 2 != 0 { w - 1 - x } else { x };
                let y1 = if t & 4 != 0 { h - 1 - y } else { y };
                let (sx, sy) = if transpose { (y1, x1) } else { (x1, y1) };
                values.push(self.values[sy * self.width + sx]);
            }
        }
        GridMap { width: w, height: h, kind: self.kind, values }
    }

    /// Block max-pooling; keeps isolated ones such as base-station markers.
    pub fn max_pool(&self, factor: usize) -> Result<GridMap, GridError> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(GridError::IndivisibleFactor { factor, width: self.width, height: self.height });
        }
        let (w, h) = (self.width / factor, self.height / factor);
        GridMap::from_fn(w, h, self.kind, |bx, by| {
            let mut m = f64::NEG_INFINITY;
            for y in by * factor..(by + 1) * factor {
                for x in bx * factor..(bx + 1) * factor {
                    m = m.max(self.get(x, y));
                }
            }
            m
        })
    }
}

/// Dynamic range `[p_min, p_max]` in dBm used to convert between dBm maps
/// and normalized-power maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange {
    pub p_min: f64,
    pub p_max: f64,
}

impl DynamicRange {
    pub fn new(p_min: f64, p_max: f64) -> Option<Self> {
        (p_min.is_finite() && p_max.is_finite() && p_max > p_min).then_some(DynamicRange { p_min, p_max })
    }

    pub fn span(&self) -> f64 {
        self.p_max - self.p_min
    }

    /// dBm → `[0, 1]`, clamped.
    pub fn normalize(&self, dbm: f64) -> f64 {
        ((dbm - self.p_min) / self.span()).clamp(0.0, 1.0)
    }

    pub fn to_dbm(&self, normalized: f64) -> f64 {
        self.p_min + normalized * self.span()
    }

    pub fn normalize_map(&self, map: &GridMap) -> Result<GridMap, GridError> {
        expect_kind(map, MapKind::PowerDbm)?;
        let values = map.values().iter().map(|&v| self.normalize(v)).collect();
        GridMap::new(map.width(), map.height(), MapKind::NormalizedPower, values)
    }

    pub fn dbm_map(&self, map: &GridMap) -> Result<GridMap, GridError> {
        expect_kind(map, MapKind::NormalizedPower)?;
        let values = map.values().iter().map(|&v| self.to_dbm(v)).collect();
        GridMap::new(map.width(), map.height(), MapKind::PowerDbm, values)
    }
}

pub(crate) fn expect_kind(map: &GridMap, kind: MapKind) -> Result<(), GridError> {
    if map.kind() != kind {
        return Err(GridError::KindMismatch { left: map.kind(), right: kind });
    }
    Ok(())
}

/// One power measurement at a pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: usize,
    pub y: usize,
    /// Measured power in dBm.
    pub psd: f64,
}

impl Observation {
    pub fn pixel(&self) -> Pixel {
        Pixel::new(self.x, self.y)
    }
}

/// Sparse power samples over a `width × height` region. Coordinates are
/// in bounds and unique.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "RawObservations", into = "RawObservations")]
pub struct SparseObservationSet {
    width: usize,
    height: usize,
    samples: Vec<Observation>,
}

impl SparseObservationSet {
    pub fn new(width: usize, height: usize, samples: Vec<Observation>) -> Result<Self, GridError> {
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if s.x >= width || s.y >= height {
                return Err(GridError::OutOfBounds { x: s.x, y: s.y, width, height });
            }
            if !seen.insert((s.x, s.y)) {
                return Err(GridError::DuplicateObservation { x: s.x, y: s.y });
            }
        }
        Ok(SparseObservationSet { width, height, samples })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        SparseObservationSet { width, height, samples: Vec::new() }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn samples(&self) -> &[Observation] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RawObservations {
    width: usize,
    height: usize,
    samples: Vec<Observation>,
}

impl TryFrom<RawObservations> for SparseObservationSet {
    type Error = GridError;

    fn try_from(raw: RawObservations) -> Result<Self, Self::Error> {
        SparseObservationSet::new(raw.width, raw.height, raw.samples)
    }
}

impl From<SparseObservationSet> for RawObservations {
    fn from(set: SparseObservationSet) -> Self {
        RawObservations { width: set.width, height: set.height, samples: set.samples }
    }
}
