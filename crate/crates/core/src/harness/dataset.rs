//! On-disk scene directories.
//!
//! Layout, one subdirectory per scene, visited in lexicographic order:
//!
//! ```text
//! <root>/<scene>/buildings.pgm   binary, 255 = building
//! <root>/<scene>/radiomap.pgm    normalized power
//! <root>/<scene>/scene.json      {"bs": [[x, y], ...], optional "dynamic_range",
//!                                 "tx_power", "true_params", "observations"}
//! ```

use super::pgm::{load_map, save_map};
use super::scene::{sample_observations, Scene};
use super::HarnessError;
use crate::grid::{DynamicRange, GridMap, MapKind, Pixel, SparseObservationSet};
use crate::ldpl::LdplParams;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const BUILDINGS_FILE: &str = "buildings.pgm";
pub const RADIOMAP_FILE: &str = "radiomap.pgm";
pub const META_FILE: &str = "scene.json";

/// Range assumed for scenes whose metadata does not carry one, dBm.
pub const DEFAULT_DYNAMIC_RANGE: DynamicRange = DynamicRange { p_min: -120.0, p_max: -40.0 };

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub bs: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range: Option<DynamicRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub true_params: Vec<LdplParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observations: Option<SparseObservationSet>,
}

/// One scene as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub name: String,
    pub buildings: GridMap,
    pub truth: GridMap,
    pub meta: SceneMeta,
}

impl DatasetRecord {
    pub fn dims(&self) -> (usize, usize) {
        self.buildings.dims()
    }

    pub fn bs_list(&self) -> Vec<Pixel> {
        self.meta.bs.iter().map(|&(x, y)| Pixel::new(x, y)).collect()
    }

    /// A [`Scene`] view. Stored observations are used when present;
    /// otherwise `sample_ratio` of the open pixels are drawn from the truth
    /// with `seed`.
    pub fn to_scene(
        &self,
        default_range: DynamicRange,
        sample_ratio: f64,
        seed: u64,
    ) -> Result<Scene, HarnessError> {
        let range = self.meta.dynamic_range.unwrap_or(default_range);
        let observations = match &self.meta.observations {
            Some(o) => o.clone(),
            None => sample_observations(&self.truth, &self.buildings, &range, sample_ratio, seed)?,
        };
        Ok(Scene {
            buildings: self.buildings.clone(),
            bs_list: self.bs_list(),
            true_params: self.meta.true_params.clone(),
            truth: self.truth.clone(),
            dynamic_range: range,
            observations,
            tx_power: self.meta.tx_power.unwrap_or(0.0),
        })
    }
}

/// Reads one scene directory.
pub fn load_record(dir: &Path) -> Result<DatasetRecord, HarnessError> {
    let file = |name: &str| -> Result<PathBuf, HarnessError> {
        let p = dir.join(name);
        if p.is_file() {
            Ok(p)
        } else {
            Err(HarnessError::MissingFile(p))
        }
    };
    let buildings = load_map(file(BUILDINGS_FILE)?, MapKind::Binary)?;
    let truth = load_map(file(RADIOMAP_FILE)?, MapKind::NormalizedPower)?;
    let meta_path = file(META_FILE)?;
    let text = std::fs::read_to_string(&meta_path).map_err(|e| HarnessError::io(&meta_path, e))?;
    let meta: SceneMeta = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Json { path: meta_path.clone(), message: e.to_string() })?;
    let name = dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if buildings.dims() != truth.dims() {
        return Err(HarnessError::InconsistentDims {
            scene: name,
            detail: format!("buildings {:?} vs radiomap {:?}", buildings.dims(), truth.dims()),
        });
    }
    let (w, h) = buildings.dims();
    if let Some(&(x, y)) = meta.bs.iter().find(|&&(x, y)| x >= w || y >= h) {
        return Err(HarnessError::InconsistentDims {
            scene: name,
            detail: format!("transmitter ({x}, {y}) outside {w}x{h}"),
        });
    }
    if meta.observations.as_ref().is_some_and(|o| o.dims() != (w, h)) {
        return Err(HarnessError::InconsistentDims {
            scene: name,
            detail: "observation grid differs from the maps".into(),
        });
    }
    Ok(DatasetRecord { name, buildings, truth, meta })
}

/// Reads every scene subdirectory of `root`. Plain files are ignored.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, HarnessError> {
    let root = root.as_ref();
    let entries = std::fs::read_dir(root).map_err(|e| HarnessError::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(|d| load_record(d)).collect()
}

/// Writes a scene in the layout [`load_dataset_dir`] reads.
pub fn save_scene(dir: impl AsRef<Path>, scene: &Scene) -> Result<(), HarnessError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    save_map(dir.join(BUILDINGS_FILE), &scene.buildings)?;
    save_map(dir.join(RADIOMAP_FILE), &scene.truth)?;
    let meta = SceneMeta {
        bs: scene.bs_list.iter().map(|p| (p.x, p.y)).collect(),
        dynamic_range: Some(scene.dynamic_range),
        tx_power: Some(scene.tx_power),
        true_params: scene.true_params.clone(),
        observations: Some(scene.observations.clone()),
    };
    let path = dir.join(META_FILE);
    let text = serde_json::to_string_pretty(&meta).expect("scene metadata serializes");
    std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))
}

/// Relative sizes of the train/validation/test parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitProportions {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl Default for SplitProportions {
    fn default() -> Self {
        SplitProportions { train: 400, val: 100, test: 100 }
    }
}

impl SplitProportions {
    /// Part sizes for `n` items: train and validation round down, test
    /// takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let total = self.train + self.val + self.test;
        if total == 0 {
            return (0, 0, n);
        }
        let train = n * self.train / total;
        let val = n * self.val / total;
        (train, val, n - train - val)
    }
}

/// Consecutive train/validation/test parts, order preserved.
pub fn split<T: Clone>(items: &[T], proportions: SplitProportions) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (a, b, _) = proportions.counts(items.len());
    (items[..a].to_vec(), items[a..a + b].to_vec(), items[a + b..].to_vec())
}
