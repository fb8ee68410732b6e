//! Log-distance path loss: evaluation, least-squares fitting from sparse
//! samples, and dense path-loss surfaces.
//!
//! Distances are measured in pixels with the reference distance fixed at one
//! pixel, so the model is `PL(d) = pl0 + theta_tilde * log10(d)`. The shadowing
//! term of the full model is not part of fitting or evaluation; it only
//! appears in the synthetic scene generator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, GridMap, MapKind, Observation, Pixel, SparseObservationSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdplError {
    #[error("path loss is undefined at non-positive distance {0}")]
    NonPositiveDistance(f64),
    #[error("only {found} samples inside the fitting radius, need {needed}")]
    TooFewSamples { found: usize, needed: usize },
    #[error("all retained samples lie at the same distance; the regression is singular")]
    DegenerateGeometry,
    #[error("invalid fit configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("{0} base stations but {1} parameter sets")]
    CountMismatch(usize, usize),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Fitted path-loss parameters for one transmitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LdplParams {
    /// Path loss at the one-pixel reference distance, dB.
    pub pl0: f64,
    /// Combined slope `10·θ`, dB per decade of distance.
    pub theta_tilde: f64,
}

impl LdplParams {
    pub const fn new(pl0: f64, theta_tilde: f64) -> Self {
        LdplParams { pl0, theta_tilde }
    }

    /// A negative slope fits the data but means power grows with distance.
    pub fn is_physical(&self) -> bool {
        self.pl0.is_finite() && self.theta_tilde.is_finite() && self.theta_tilde >= 0.0
    }

    /// The parameters as they survive a trip through `f32` wire fields.
    pub fn to_f32_precision(self) -> Self {
        LdplParams { pl0: f64::from(self.pl0 as f32), theta_tilde: f64::from(self.theta_tilde as f32) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Only samples within this many pixels of the transmitter are used.
    pub radius: f64,
    /// Samples closer than this are dropped; also the clamp distance for
    /// evaluation at the transmitter pixel.
    pub d_min: f64,
    pub min_samples: usize,
}

impl FitConfig {
    /// Default configuration for a `width × height` grid: the radius is a
    /// quarter of the grid diagonal.
    pub fn for_dims(width: usize, height: usize) -> Self {
        FitConfig { radius: (width as f64).hypot(height as f64) / 4.0, d_min: 1.0, min_samples: 3 }
    }

    pub fn validate(&self) -> Result<(), LdplError> {
        if !(self.d_min > 0.0) {
            return Err(LdplError::InvalidConfig("d_min must be positive"));
        }
        if !(self.radius > self.d_min) {
            return Err(LdplError::InvalidConfig("radius must exceed d_min"));
        }
        if self.min_samples < 2 {
            return Err(LdplError::InvalidConfig("min_samples must be at least 2"));
        }
        Ok(())
    }
}

/// `pl0 + theta_tilde * log10(d)`.
pub fn eval_path_loss(params: LdplParams, d: f64) -> Result<f64, LdplError> {
    if !(d > 0.0) {
        return Err(LdplError::NonPositiveDistance(d));
    }
    Ok(params.pl0 + params.theta_tilde * d.log10())
}

/// Ordinary least squares on the regressor `log10(d)` using only samples with
/// `d_min <= d <= radius` from `bs`. The path loss of a sample is
/// `tx_power - psd`.
pub fn fit_ldpl(
    samples: &SparseObservationSet,
    bs: Pixel,
    tx_power: f64,
    config: &FitConfig,
) -> Result<LdplParams, LdplError> {
    fit_ldpl_samples(samples.samples(), bs, tx_power, config)
}

/// [`fit_ldpl`] over a plain slice of observations.
pub fn fit_ldpl_samples(
    samples: &[Observation],
    bs: Pixel,
    tx_power: f64,
    config: &FitConfig,
) -> Result<LdplParams, LdplError> {
    config.validate()?;
    let points: Vec<(f64, f64)> = samples
        .iter()
        .filter_map(|s| {
            let d = s.pixel().distance(bs);
            (d >= config.d_min && d <= config.radius).then(|| (d.log10(), tx_power - s.psd))
        })
        .collect();
    if points.len() < config.min_samples {
        return Err(LdplError::TooFewSamples { found: points.len(), needed: config.min_samples });
    }
    let first = points[0].0;
    if points.iter().all(|&(x, _)| x == first) {
        return Err(LdplError::DegenerateGeometry);
    }

    // Centered normal equations.
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in &points {
        let dx = x - mean_x;
        sxx += dx * dx;
        sxy += dx * (y - mean_y);
    }
    if !(sxx > 0.0) {
        return Err(LdplError::DegenerateGeometry);
    }
    let theta_tilde = sxy / sxx;
    Ok(LdplParams { pl0: mean_y - theta_tilde * mean_x, theta_tilde })
}

/// Splits samples by nearest base station (ties go to the lower index).
pub fn associate_samples(samples: &[Observation], bs_list: &[Pixel]) -> Vec<Vec<Observation>> {
    let mut groups = vec![Vec::new(); bs_list.len()];
    if bs_list.is_empty() {
        return groups;
    }
    for s in samples {
        let p = s.pixel();
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &b) in bs_list.iter().enumerate() {
            let d = p.distance(b);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        groups[best].push(*s);
    }
    groups
}

/// Fits every base station independently on the samples it is nearest to.
pub fn fit_per_bs(
    samples: &SparseObservationSet,
    bs_list: &[Pixel],
    tx_power: f64,
    config: &FitConfig,
) -> Result<Vec<LdplParams>, LdplError> {
    associate_samples(samples.samples(), bs_list)
        .iter()
        .zip(bs_list)
        .map(|(group, &bs)| fit_ldpl_samples(group, bs, tx_power, config))
        .collect()
}

/// Path loss from `bs` at every pixel, with distances clamped to `d_min`.
pub fn predict_freespace_map(
    params: LdplParams,
    bs: Pixel,
    dims: (usize, usize),
    d_min: f64,
) -> Result<GridMap, LdplError> {
    let (w, h) = dims;
    if bs.x >= w || bs.y >= h {
        return Err(GridError::OutOfBounds { x: bs.x, y: bs.y, width: w, height: h }.into());
    }
    if !(d_min > 0.0) {
        return Err(LdplError::NonPositiveDistance(d_min));
    }
    Ok(GridMap::from_fn(w, h, MapKind::Scalar, |x, y| {
        let d = Pixel::new(x, y).distance(bs).max(d_min);
        params.pl0 + params.theta_tilde * d.log10()
    })?)
}
