//! Semantic transmission of radio maps.
//!
//! A transmitter that holds sparse received-power samples and a building
//! map fits per-station log-distance path-loss parameters ([`ldpl`]),
//! compresses the building segmentation ([`semcomp`]) and serializes both
//! into a compact bit stream ([`payload`]). The receiver rebuilds a radio
//! depth map from the decoded semantics ([`depthmap`]) and feeds it to a
//! conditional generator ([`genmodel`]) that outputs the dense map.
//! [`fedtrain`] trains that generator across simulated clients, and
//! [`harness`] generates synthetic scenes and runs the whole chain.
//!
//! ```
//! use radiosem::harness::{generate_scene, run_pipeline, PipelineConfig, SceneConfig, FEATURE_CHANNELS};
//! use radiosem::genmodel::init_models;
//!
//! let scene = generate_scene(&SceneConfig::default().with_seed(3)).unwrap();
//! let (generator, _) = init_models(FEATURE_CHANNELS, 0);
//! let out = run_pipeline(&scene, &PipelineConfig::default(), None, &generator).unwrap();
//! assert!(out.bandwidth * 1000.0 < out.raw_bits as f64);
//! ```

pub mod depthmap;
pub mod fedtrain;
pub mod genmodel;
pub mod grid;
pub mod harness;
pub mod ldpl;
pub mod metrics;
pub mod payload;
pub mod semcomp;
