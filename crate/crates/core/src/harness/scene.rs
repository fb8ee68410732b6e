//! Synthetic scenes: rectangular buildings, transmitters, LDPL propagation
//! with line-of-sight shadowing and log-normal noise.

use super::HarnessError;
use crate::depthmap::{los_ratio_map, D_MIN};
use crate::grid::{DynamicRange, GridMap, MapKind, Observation, Pixel, SparseObservationSet};
use crate::ldpl::LdplParams;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// How the per-transmitter powers at a pixel are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combine {
    /// Strongest transmitter wins.
    Max,
    /// Powers add in linear units.
    SumLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub n_buildings: usize,
    /// Inclusive side-length range of a building, pixels.
    pub building_size: (usize, usize),
    /// Building corners and sides are multiples of this many pixels.
    pub snap: usize,
    pub n_bs: usize,
    /// Range of path loss at one pixel, dB.
    pub pl0_range: (f64, f64),
    /// Range of the slope `10·θ`, dB per decade.
    pub theta_range: (f64, f64),
    /// Extra loss for a fully obstructed path, dB; scales with `1 − B_t`.
    pub shadow_penalty: f64,
    /// Standard deviation of the zero-mean Gaussian shadowing term, dB.
    pub noise_sigma: f64,
    /// Fraction of non-building pixels observed by the transmitter side.
    pub sample_ratio: f64,
    pub tx_power: f64,
    pub combine: Combine,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 64,
            height: 64,
            n_buildings: 6,
            building_size: (8, 24),
            snap: 8,
            n_bs: 1,
            pl0_range: (35.0, 45.0),
            theta_range: (20.0, 35.0),
            shadow_penalty: 15.0,
            noise_sigma: 1.0,
            sample_ratio: 0.1,
            tx_power: 0.0,
            combine: Combine::Max,
            seed: 0,
        }
    }
}

impl SceneConfig {
    /// The 256×256 configuration with proportionally larger buildings.
    pub fn full_scale() -> Self {
        SceneConfig {
            width: 256,
            height: 256,
            n_buildings: 12,
            building_size: (16, 64),
            ..SceneConfig::default()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SceneConfig { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m| Err(HarnessError::InvalidConfig(m));
        if self.width == 0 || self.height == 0 {
            return bad("dimensions must be positive");
        }
        if self.width > u16::MAX as usize || self.height > u16::MAX as usize {
            return bad("dimensions must fit in u16");
        }
        if self.n_bs == 0 {
            return bad("at least one transmitter is required");
        }
        if self.snap == 0 {
            return bad("snap must be at least 1");
        }
        let (lo, hi) = self.building_size;
        if lo == 0 || lo > hi {
            return bad("building size range is empty");
        }
        for (lo, hi) in [self.pl0_range, self.theta_range] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad("parameter range is empty");
            }
        }
        if !(self.shadow_penalty >= 0.0 && self.shadow_penalty.is_finite()) {
            return bad("shadow penalty must be finite and non-negative");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise sigma must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.sample_ratio) {
            return bad("sample ratio must lie in [0, 1]");
        }
        if !self.tx_power.is_finite() {
            return bad("transmit power must be finite");
        }
        Ok(())
    }
}

/// One synthetic (or loaded) scene. `true_params` is empty for scenes
/// loaded from disk, where the generating parameters are unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub buildings: GridMap,
    pub bs_list: Vec<Pixel>,
    pub true_params: Vec<LdplParams>,
    /// Normalized power, maximum exactly 1.
    pub truth: GridMap,
    pub dynamic_range: DynamicRange,
    pub observations: SparseObservationSet,
    pub tx_power: f64,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn snapped_side(rng: &mut ChaCha8Rng, (lo, hi): (usize, usize), snap: usize) -> usize {
    let s = rng.random_range(lo..=hi);
    (s / snap * snap).max(snap)
}

/// Seeded random building map.
pub fn place_buildings(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Result<GridMap, HarnessError> {
    let (w, h) = (cfg.width, cfg.height);
    let mut values = vec![0.0; w * h];
    for _ in 0..cfg.n_buildings {
        let bw = snapped_side(rng, cfg.building_size, cfg.snap);
        let bh = snapped_side(rng, cfg.building_size, cfg.snap);
        if bw > w || bh > h {
            return Err(HarnessError::PlacementFailure("building larger than the map"));
        }
        let x0 = rng.random_range(0..=(w - bw) / cfg.snap) * cfg.snap;
        let y0 = rng.random_range(0..=(h - bh) / cfg.snap) * cfg.snap;
        for y in y0..y0 + bh {
            values[y * w + x0..y * w + x0 + bw].fill(1.0);
        }
    }
    Ok(GridMap::new(w, h, MapKind::Binary, values)?)
}

/// Received power in dBm at every pixel, before building masking.
///
/// Per transmitter: `P_tx − PL_t(max(d, 1)) − shadow·(1 − B_t) + X`, with
/// `X ~ N(0, σ²)` drawn independently per pixel and transmitter from
/// `noise_seed`; transmitters are then combined per `cfg.combine`.
pub fn received_power_dbm(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params: &[LdplParams],
    cfg: &SceneConfig,
    noise_seed: u64,
) -> Result<GridMap, HarnessError> {
    if bs_list.is_empty() || bs_list.len() != params.len() {
        return Err(HarnessError::InvalidConfig("need one parameter set per transmitter"));
    }
    let (w, h) = buildings.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(3);
    let normal =
        Normal::new(0.0, cfg.noise_sigma).map_err(|_| HarnessError::InvalidConfig("bad noise sigma"))?;
    let mut per_bs = Vec::with_capacity(bs_list.len());
    for (&bs, p) in bs_list.iter().zip(params) {
        let ratios = los_ratio_map(buildings, bs)?;
        let field: Vec<f64> = (0..w * h)
            .map(|i| {
                let d = Pixel::new(i % w, i / w).distance(bs).max(D_MIN);
                let noise = if cfg.noise_sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                cfg.tx_power
                    - (p.pl0 + p.theta_tilde * d.log10())
                    - cfg.shadow_penalty * (1.0 - ratios.values()[i])
                    + noise
            })
            .collect();
        per_bs.push(field);
    }
    let values = (0..w * h)
        .map(|i| match cfg.combine {
            Combine::Max => per_bs.iter().map(|f| f[i]).fold(f64::NEG_INFINITY, f64::max),
            Combine::SumLinear => 10.0 * per_bs.iter().map(|f| 10f64.powf(f[i] / 10.0)).sum::<f64>().log10(),
        })
        .collect();
    Ok(GridMap::new(w, h, MapKind::PowerDbm, values)?)
}

/// Normalizes a dBm field over its non-building pixels. Building pixels
/// take the minimum. Returns the normalized map and the range used.
pub fn normalize_truth(
    power: &GridMap,
    buildings: &GridMap,
) -> Result<(GridMap, DynamicRange), HarnessError> {
    power.ensure_same_dims(buildings)?;
    let open = power.values().iter().zip(buildings.values()).filter(|(_, &b)| b == 0.0).map(|(&p, _)| p);
    let (lo, hi) = open.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p), hi.max(p)));
    let range = DynamicRange::new(lo, hi).ok_or(HarnessError::DegenerateScene)?;
    let values = power
        .values()
        .iter()
        .zip(buildings.values())
        .map(|(&p, &b)| if b == 0.0 { range.normalize(p) } else { 0.0 })
        .collect();
    Ok((GridMap::new(power.width(), power.height(), MapKind::NormalizedPower, values)?, range))
}

/// The oracle radio map: [`received_power_dbm`] followed by
/// [`normalize_truth`].
pub fn ground_truth_radiomap(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params: &[LdplParams],
    cfg: &SceneConfig,
    noise_seed: u64,
) -> Result<(GridMap, DynamicRange), HarnessError> {
    let power = received_power_dbm(buildings, bs_list, params, cfg, noise_seed)?;
    normalize_truth(&power, buildings)
}

/// `⌊ratio · free⌋` distinct non-building pixels drawn uniformly, with their
/// truth values converted back to dBm. Samples come out in row-major order.
pub fn sample_observations(
    truth: &GridMap,
    buildings: &GridMap,
    range: &DynamicRange,
    ratio: f64,
    seed: u64,
) -> Result<SparseObservationSet, HarnessError> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(HarnessError::InvalidConfig("sample ratio must lie in [0, 1]"));
    }
    truth.ensure_same_dims(buildings)?;
    let free: Vec<usize> = (0..buildings.len()).filter(|&i| buildings.values()[i] == 0.0).collect();
    let k = (ratio * free.len() as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(4);
    let mut picked: Vec<usize> = sample(&mut rng, free.len(), k).into_iter().map(|j| free[j]).collect();
    picked.sort_unstable();
    let w = truth.width();
    let samples = picked
        .into_iter()
        .map(|i| Observation { x: i % w, y: i / w, psd: range.to_dbm(truth.values()[i]) })
        .collect();
    Ok(SparseObservationSet::new(truth.width(), truth.height(), samples)?)
}

/// Builds a complete scene from `cfg.seed`.
pub fn generate_scene(cfg: &SceneConfig) -> Result<Scene, HarnessError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let buildings = place_buildings(cfg, &mut rng)?;
    let free: Vec<usize> = (0..buildings.len()).filter(|&i| buildings.values()[i] == 0.0).collect();
    if free.len() < cfg.n_bs {
        return Err(HarnessError::PlacementFailure("not enough open pixels for the transmitters"));
    }
    let mut picks: Vec<usize> = sample(&mut rng, free.len(), cfg.n_bs).into_iter().map(|j| free[j]).collect();
    picks.sort_unstable();
    let w = cfg.width;
    let bs_list: Vec<Pixel> = picks.into_iter().map(|i| Pixel::new(i % w, i / w)).collect();
    let true_params: Vec<LdplParams> = bs_list
        .iter()
        .map(|_| LdplParams::new(uniform(&mut rng, cfg.pl0_range), uniform(&mut rng, cfg.theta_range)))
        .collect();
    let (truth, dynamic_range) = ground_truth_radiomap(&buildings, &bs_list, &true_params, cfg, cfg.seed)?;
    let observations = sample_observations(&truth, &buildings, &dynamic_range, cfg.sample_ratio, cfg.seed)?;
    Ok(Scene { buildings, bs_list, true_params, truth, dynamic_range, observations, tx_power: cfg.tx_power })
}

/// Independent per-scene seeds derived from one corpus seed.
pub fn corpus_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(5);
    (0..n).map(|_| rng.random()).collect()
}

/// `n` scenes sharing `cfg` except for their seeds.
pub fn generate_corpus(cfg: &SceneConfig, n: usize, seed: u64) -> Result<Vec<Scene>, HarnessError> {
    corpus_seeds(seed, n).into_par_iter().map(|s| generate_scene(&cfg.with_seed(s))).collect()
}
