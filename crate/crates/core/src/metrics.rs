//! Reconstruction metrics, max normalization and the outage-map task.

use serde::{Deserialize, Serialize};

use crate::grid::{GridError, GridMap, MapKind};

/// Per-scene evaluation summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mse: f64,
    pub nmse: f64,
    pub outage_accuracy: Option<f64>,
}

fn ensure_comparable(a: &GridMap, b: &GridMap) -> Result<(), GridError> {
    a.ensure_same_dims(b)?;
    if a.kind() != b.kind() {
        return Err(GridError::KindMismatch { left: a.kind(), right: b.kind() });
    }
    Ok(())
}

/// Mean of squared pixel differences. An empty grid has MSE 0.
pub fn mse(a: &GridMap, b: &GridMap) -> Result<f64, GridError> {
    ensure_comparable(a, b)?;
    if a.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// `mse(estimate, reference) / mean(reference²)`.
pub fn nmse(estimate: &GridMap, reference: &GridMap) -> Result<f64, GridError> {
    let err = mse(estimate, reference)?;
    let power = reference.values().iter().map(|v| v * v).sum::<f64>() / reference.len().max(1) as f64;
    if power == 0.0 {
        return Err(GridError::ZeroReference);
    }
    Ok(err / power)
}

/// Scales a field so that its maximum becomes exactly 1.
///
/// Kinds already bounded in `[0, 1]` keep their kind. Unbounded kinds come
/// out as [`MapKind::Depth`] when every scaled value is non-negative and as
/// [`MapKind::Scalar`] otherwise.
pub fn max_normalize(g: &GridMap) -> Result<GridMap, GridError> {
    if g.values().iter().any(|v| !v.is_finite()) {
        return Err(GridError::DegenerateField);
    }
    let max = g.max_value();
    if !(max > 0.0) {
        return Err(GridError::DegenerateField);
    }
    let values: Vec<f64> = g.values().iter().map(|&v| v / max).collect();
    let kind = match g.kind() {
        MapKind::PowerDbm | MapKind::Scalar => {
            if values.iter().all(|&v| v >= 0.0) {
                MapKind::Depth
            } else {
                MapKind::Scalar
            }
        }
        k => k,
    };
    GridMap::new(g.width(), g.height(), kind, values)
}

/// Service threshold for outage detection, tagged with its unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageThreshold {
    Dbm(f64),
    Normalized(f64),
}

impl OutageThreshold {
    fn matches(&self, kind: MapKind) -> bool {
        matches!(
            (self, kind),
            (OutageThreshold::Dbm(_), MapKind::PowerDbm)
                | (OutageThreshold::Normalized(_), MapKind::NormalizedPower)
        )
    }

    fn value(&self) -> f64 {
        match *self {
            OutageThreshold::Dbm(v) | OutageThreshold::Normalized(v) => v,
        }
    }
}

/// Binary map with `1` wherever the power falls strictly below `threshold`.
pub fn outage_map(radiomap: &GridMap, threshold: OutageThreshold) -> Result<GridMap, GridError> {
    if !threshold.matches(radiomap.kind()) {
        let wanted = match threshold {
            OutageThreshold::Dbm(_) => MapKind::PowerDbm,
            OutageThreshold::Normalized(_) => MapKind::NormalizedPower,
        };
        return Err(GridError::KindMismatch { left: radiomap.kind(), right: wanted });
    }
    let t = threshold.value();
    let values = radiomap.values().iter().map(|&v| f64::from(u8::from(v < t))).collect();
    GridMap::new(radiomap.width(), radiomap.height(), MapKind::Binary, values)
}

/// Fraction of pixels on which two binary maps agree.
pub fn outage_agreement(predicted: &GridMap, truth: &GridMap) -> Result<f64, GridError> {
    ensure_comparable(predicted, truth)?;
    if predicted.kind() != MapKind::Binary {
        return Err(GridError::KindMismatch { left: predicted.kind(), right: MapKind::Binary });
    }
    if predicted.is_empty() {
        return Ok(1.0);
    }
    let same = predicted.values().iter().zip(truth.values()).filter(|(a, b)| a == b).count();
    Ok(same as f64 / predicted.len() as f64)
}
