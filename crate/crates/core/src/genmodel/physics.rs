use crate::depthmap::{los_ratio_map, DepthError, D_MIN};
use crate::grid::{GridMap, MapKind, Pixel};
use crate::ldpl::LdplParams;

/// Headroom above the largest predicted path loss, dB, so that every pixel
/// keeps a positive power margin.
const HEADROOM_DB: f64 = 1.0;

/// Learning-free estimate from the transmitted semantics alone:
/// `max_t (P_max − PL_t) · B_t`, scaled so the maximum is 1. `P_max` is the
/// largest predicted path loss plus 1 dB.
pub fn physics_baseline(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params_list: &[LdplParams],
) -> Result<GridMap, DepthError> {
    if bs_list.is_empty() {
        return Err(DepthError::NoTransmitters);
    }
    if bs_list.len() != params_list.len() {
        return Err(DepthError::CountMismatch { bs: bs_list.len(), params: params_list.len() });
    }
    let (w, h) = buildings.dims();
    let mut path_losses = Vec::with_capacity(bs_list.len());
    let mut ratios = Vec::with_capacity(bs_list.len());
    for (&bs, p) in bs_list.iter().zip(params_list) {
        ratios.push(los_ratio_map(buildings, bs)?);
        let pl: Vec<f64> = (0..w * h)
            .map(|i| {
                let d = Pixel::new(i % w, i / w).distance(bs).max(D_MIN);
                p.pl0 + p.theta_tilde * d.log10()
            })
            .collect();
        path_losses.push(pl);
    }
    let p_max = path_losses.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max) + HEADROOM_DB;
    let mut values = vec![0.0f64; w * h];
    for (pl, b) in path_losses.iter().zip(&ratios) {
        for ((v, l), r) in values.iter_mut().zip(pl).zip(b.values()) {
            *v = v.max((p_max - l) * r);
        }
    }
    let top = values.iter().copied().fold(0.0, f64::max);
    if top > 0.0 {
        values.iter_mut().for_each(|v| *v /= top);
    }
    Ok(GridMap::new(w, h, MapKind::NormalizedPower, values)?)
}
