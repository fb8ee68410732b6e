//! Line-of-sight obstruction ratios and the radio depth map.
//!
//! The depth map at a pixel is the max-normalized sum, over transmitters, of
//! the LDPL path loss from that transmitter weighted by the fraction of
//! non-building pixels on the straight pixel path between the two points.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, GridMap, MapKind, Pixel};
use crate::ldpl::LdplParams;
use crate::metrics::max_normalize;

/// Clamp distance used when evaluating path loss at the transmitter pixel.
pub const D_MIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("at least one transmitter is required")]
    NoTransmitters,
    #[error("{bs} base stations but {params} parameter sets")]
    CountMismatch { bs: usize, params: usize },
    #[error("building map must be binary, got {0:?}")]
    NotBinary(MapKind),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Pixels on the straight line between two endpoints, both inclusive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LosPath(Vec<Pixel>);

impl LosPath {
    pub fn pixels(&self) -> &[Pixel] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Pixel {
        self.0[0]
    }

    pub fn last(&self) -> Pixel {
        self.0[self.0.len() - 1]
    }
}

/// Bresenham line from `a` to `b`.
///
/// The raster is always traced from the lexicographically smaller endpoint
/// and reversed if needed, so `los_path(a, b)` and `los_path(b, a)` cover the
/// same pixel set.
pub fn los_path(a: Pixel, b: Pixel) -> LosPath {
    let (start, end, flip) = if a <= b { (a, b, false) } else { (b, a, true) };
    let mut pixels = Vec::new();
    trace(start, end, |p| pixels.push(p));
    if flip {
        pixels.reverse();
    }
    LosPath(pixels)
}

fn trace(start: Pixel, end: Pixel, mut visit: impl FnMut(Pixel)) {
    let (mut x, mut y) = (start.x as i64, start.y as i64);
    let (x1, y1) = (end.x as i64, end.y as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        visit(Pixel::new(x as usize, y as usize));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn ensure_binary(buildings: &GridMap) -> Result<(), DepthError> {
    if buildings.kind() != MapKind::Binary {
        return Err(DepthError::NotBinary(buildings.kind()));
    }
    Ok(())
}

/// Fraction of non-building pixels on the path between `target` and `tx`.
/// Building pixels are `1` in `buildings`; both endpoints count.
pub fn los_ratio(buildings: &GridMap, target: Pixel, tx: Pixel) -> Result<f64, DepthError> {
    ensure_binary(buildings)?;
    buildings.checked_index(target)?;
    buildings.checked_index(tx)?;
    Ok(ratio_unchecked(buildings, target, tx))
}

fn ratio_unchecked(buildings: &GridMap, target: Pixel, tx: Pixel) -> f64 {
    let (start, end) = if target <= tx { (target, tx) } else { (tx, target) };
    let (mut total, mut open) = (0usize, 0usize);
    let values = buildings.values();
    let w = buildings.width();
    trace(start, end, |p| {
        total += 1;
        if values[p.y * w + p.x] == 0.0 {
            open += 1;
        }
    });
    open as f64 / total as f64
}

/// The LOS ratio from `tx` to every pixel of the grid.
pub fn los_ratio_map(buildings: &GridMap, tx: Pixel) -> Result<GridMap, DepthError> {
    ensure_binary(buildings)?;
    buildings.checked_index(tx)?;
    let (w, h) = buildings.dims();
    let values: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| (0..w).map(move |x| ratio_unchecked(buildings, Pixel::new(x, y), tx)))
        .collect();
    Ok(GridMap::new(w, h, MapKind::Depth, values)?)
}

/// Un-normalized depth field `Σ_t PL_t · B_t`.
pub fn depth_field(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params_list: &[LdplParams],
) -> Result<GridMap, DepthError> {
    ensure_binary(buildings)?;
    if bs_list.is_empty() {
        return Err(DepthError::NoTransmitters);
    }
    if bs_list.len() != params_list.len() {
        return Err(DepthError::CountMismatch { bs: bs_list.len(), params: params_list.len() });
    }
    for &bs in bs_list {
        buildings.checked_index(bs)?;
    }
    let (w, h) = buildings.dims();
    let values: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w).map(move |x| {
                let p = Pixel::new(x, y);
                bs_list.iter().zip(params_list).fold(0.0, |acc, (&bs, params)| {
                    let d = p.distance(bs).max(D_MIN);
                    let pl = params.pl0 + params.theta_tilde * d.log10();
                    acc + pl * ratio_unchecked(buildings, p, bs)
                })
            })
        })
        .collect();
    Ok(GridMap::new(w, h, MapKind::Scalar, values)?)
}

/// The radio depth map: [`depth_field`] scaled so its maximum is exactly 1.
pub fn radio_depth_map(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params_list: &[LdplParams],
) -> Result<GridMap, DepthError> {
    let field = depth_field(buildings, bs_list, params_list)?;
    let normalized = max_normalize(&field)?;
    Ok(normalized.with_kind(MapKind::Depth)?)
}
