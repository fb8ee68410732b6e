//! Transmitter → channel → receiver, end to end.

use super::scene::{generate_corpus, Scene, SceneConfig};
use super::HarnessError;
use crate::depthmap::{radio_depth_map, DepthError};
use crate::genmodel::{generator_forward, FeatureStack, GenError, ModelParams, Sample};
use crate::grid::{GridError, GridMap, MapKind, Pixel};
use crate::ldpl::{fit_per_bs, FitConfig, LdplError, LdplParams};
use crate::metrics::{mse, nmse, outage_agreement, outage_map, MetricReport, OutageThreshold};
use crate::payload::{
    apply_channel, deserialize, measure_bandwidth, raw_baseline_bits, serialize, ChannelConfig, PayloadError,
    Scheme, SemanticPayload,
};
use crate::semcomp::{
    encode_map, jpeg_decode_binary, jpeg_decode_tolerant, jpeg_encode_binary, jpeg_header, patchify,
    train_codebook, vq_decode, Codebook, SemCompError, VqEncoding,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A failure, tagged with the pipeline stage it happened in.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("config stage: {0}")]
    Config(&'static str),
    #[error("fit stage: {0}")]
    Fit(LdplError),
    #[error("compress stage: {0}")]
    Compress(SemCompError),
    #[error("serialize stage: {0}")]
    Serialize(PayloadError),
    #[error("deserialize stage: {0}")]
    Deserialize(PayloadError),
    #[error("decode stage: {0}")]
    Decode(SemCompError),
    #[error("feature stage: {0}")]
    Features(DepthError),
    #[error("generate stage: {0}")]
    Generate(GenError),
    #[error("metrics stage: {0}")]
    Metrics(GridError),
}

impl PipelineError {
    pub fn stage(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "config",
            PipelineError::Fit(_) => "fit",
            PipelineError::Compress(_) => "compress",
            PipelineError::Serialize(_) => "serialize",
            PipelineError::Deserialize(_) => "deserialize",
            PipelineError::Decode(_) => "decode",
            PipelineError::Features(_) => "features",
            PipelineError::Generate(_) => "generate",
            PipelineError::Metrics(_) => "metrics",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub scheme: Scheme,
    pub jpeg_quality: u8,
    pub channel: ChannelConfig,
    /// Outage threshold on normalized power.
    pub outage_threshold: f64,
    /// Side length the generator runs at.
    pub work_resolution: usize,
    /// LDPL fitting radius in pixels; `None` uses a quarter of the diagonal.
    pub fit_radius: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            scheme: Scheme::Jpeg,
            jpeg_quality: 50,
            channel: ChannelConfig::noiseless(),
            outage_threshold: 0.3,
            work_resolution: 64,
            fit_radius: None,
        }
    }
}

impl PipelineConfig {
    pub fn fit_config(&self, width: usize, height: usize) -> FitConfig {
        let mut f = FitConfig::for_dims(width, height);
        if let Some(r) = self.fit_radius {
            f.radius = r;
        }
        f
    }
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub reconstruction: GridMap,
    pub report: MetricReport,
    /// Kilobits of the serialized payload.
    pub bandwidth: f64,
    pub raw_bits: u64,
    pub sent: SemanticPayload,
    pub received: SemanticPayload,
    pub decoded_buildings: GridMap,
    pub features: FeatureStack,
}

/// Fitted LDPL parameters for every transmitter of a scene, at `f32` wire
/// precision.
pub fn fit_scene(scene: &Scene, cfg: &PipelineConfig) -> Result<Vec<LdplParams>, PipelineError> {
    let (w, h) = scene.buildings.dims();
    let params = fit_per_bs(&scene.observations, &scene.bs_list, scene.tx_power, &cfg.fit_config(w, h))
        .map_err(PipelineError::Fit)?;
    Ok(params.into_iter().map(LdplParams::to_f32_precision).collect())
}

fn need_codebook(codebook: Option<&Codebook>) -> Result<&Codebook, PipelineError> {
    codebook.ok_or(PipelineError::Config("the VQ scheme needs a codebook"))
}

/// Compresses the building map with the configured scheme.
pub fn compress_buildings(
    buildings: &GridMap,
    cfg: &PipelineConfig,
    codebook: Option<&Codebook>,
) -> Result<Vec<u8>, PipelineError> {
    match cfg.scheme {
        Scheme::Jpeg => jpeg_encode_binary(buildings, cfg.jpeg_quality).map_err(PipelineError::Compress),
        Scheme::Vq => {
            let cb = need_codebook(codebook)?;
            let enc = encode_map(buildings, cb).map_err(PipelineError::Compress)?;
            Ok(enc.pack(cb.len()))
        }
    }
}

/// Inverse of [`compress_buildings`] for a `width × height` map.
pub fn decompress_buildings(
    scheme: Scheme,
    blob: &[u8],
    width: usize,
    height: usize,
    codebook: Option<&Codebook>,
) -> Result<GridMap, PipelineError> {
    match scheme {
        Scheme::Jpeg => {
            let (_, w, h) = jpeg_header(blob).map_err(PipelineError::Decode)?;
            if (w, h) != (width, height) {
                return Err(PipelineError::Decode(SemCompError::CorruptStream(
                    "segmentation size differs from the payload header",
                )));
            }
            jpeg_decode_binary(blob).map_err(PipelineError::Decode)
        }
        Scheme::Vq => {
            let cb = need_codebook(codebook)?;
            let patch = cb.patch_size().ok_or(PipelineError::Decode(SemCompError::InvalidCodebook(
                "codeword length is not a square",
            )))?;
            let enc =
                VqEncoding::unpack(blob, width, height, patch, cb.len()).map_err(PipelineError::Decode)?;
            vq_decode(&enc, cb).map_err(PipelineError::Decode)
        }
    }
}

/// Transmitter side: fit, compress, serialize.
pub fn transmit(
    scene: &Scene,
    cfg: &PipelineConfig,
    codebook: Option<&Codebook>,
) -> Result<(SemanticPayload, Vec<u8>), PipelineError> {
    let params = fit_scene(scene, cfg)?;
    let blob = compress_buildings(&scene.buildings, cfg, codebook)?;
    let (w, h) = scene.buildings.dims();
    let payload = SemanticPayload::new(cfg.scheme, w, h, scene.bs_list.clone(), params, blob)
        .map_err(PipelineError::Serialize)?;
    let bytes = serialize(&payload).map_err(PipelineError::Serialize)?;
    Ok((payload, bytes))
}

fn work_factor(width: usize, height: usize, work: usize) -> Result<usize, PipelineError> {
    if work == 0 || width != height || width % work != 0 {
        return Err(PipelineError::Config("map must be square and a multiple of the work resolution"));
    }
    Ok(width / work)
}

/// Generator input at the work resolution. The depth map is computed at
/// full resolution, then block-averaged.
pub fn receiver_features(
    buildings: &GridMap,
    bs_list: &[Pixel],
    params: &[LdplParams],
    work_resolution: usize,
) -> Result<FeatureStack, PipelineError> {
    let (w, h) = buildings.dims();
    let f = work_factor(w, h, work_resolution)?;
    let depth = match radio_depth_map(buildings, bs_list, params) {
        // nothing visible from any station, e.g. a damaged all-building map
        Err(DepthError::Grid(GridError::DegenerateField)) => GridMap::zeros(w, h, MapKind::Depth),
        other => other.map_err(PipelineError::Features)?,
    };
    let grid = |e: GridError| PipelineError::Features(DepthError::Grid(e));
    let m_d = depth.downsample(f).map_err(grid)?;
    let m_u = buildings.downsample(f).map_err(grid)?;
    let mut tx: Vec<Pixel> = bs_list.iter().map(|p| Pixel::new(p.x / f, p.y / f)).collect();
    tx.sort_unstable();
    tx.dedup();
    let m_t = GridMap::one_hot(work_resolution, work_resolution, &tx).map_err(grid)?;
    FeatureStack::new(m_u, m_t, m_d, side_info(params)).map_err(PipelineError::Generate)
}

/// Constant side channels: the received LDPL parameters averaged over base
/// stations, scaled by 1/100 so they sit near the unit range.
pub fn side_info(params: &[LdplParams]) -> Vec<f64> {
    if params.is_empty() {
        return vec![0.0, 0.0];
    }
    let n = params.len() as f64;
    let pl0 = params.iter().map(|p| p.pl0).sum::<f64>() / n;
    let theta = params.iter().map(|p| p.theta_tilde).sum::<f64>() / n;
    vec![pl0 / 100.0, theta / 100.0]
}

/// Channel count of [`receiver_features`] output.
pub const FEATURE_CHANNELS: usize = 5;

/// The truth at the work resolution.
pub fn truth_at(scene: &Scene, work_resolution: usize) -> Result<GridMap, PipelineError> {
    let (w, h) = scene.truth.dims();
    let f = work_factor(w, h, work_resolution)?;
    scene.truth.downsample(f).map_err(PipelineError::Metrics)
}

/// Training example built the way the receiver would see the scene, but
/// from the uncompressed building map.
pub fn scene_sample(scene: &Scene, cfg: &PipelineConfig) -> Result<Sample, PipelineError> {
    let params = fit_scene(scene, cfg)?;
    Ok(Sample {
        features: receiver_features(&scene.buildings, &scene.bs_list, &params, cfg.work_resolution)?,
        target: truth_at(scene, cfg.work_resolution)?,
    })
}

/// Scores a reconstruction against the truth.
pub fn evaluate(
    reconstruction: &GridMap,
    truth: &GridMap,
    outage_threshold: f64,
) -> Result<MetricReport, GridError> {
    let t = OutageThreshold::Normalized(outage_threshold);
    Ok(MetricReport {
        mse: mse(reconstruction, truth)?,
        nmse: nmse(reconstruction, truth)?,
        outage_accuracy: Some(outage_agreement(&outage_map(reconstruction, t)?, &outage_map(truth, t)?)?),
    })
}

/// Full inference path for one scene.
pub fn run_pipeline(
    scene: &Scene,
    cfg: &PipelineConfig,
    codebook: Option<&Codebook>,
    generator: &ModelParams,
) -> Result<PipelineOutput, PipelineError> {
    let (sent, bytes) = transmit(scene, cfg, codebook)?;
    let noisy = apply_channel(&bytes, &cfg.channel);
    let received = deserialize(&noisy).map_err(PipelineError::Deserialize)?;
    let decoded_buildings = match received.scheme {
        // the receiver knows the size from the payload header and the quality
        // from its config, so flipped stream-header bits do not matter
        Scheme::Jpeg => {
            jpeg_decode_tolerant(&received.blob, received.width, received.height, cfg.jpeg_quality)
                .map_err(PipelineError::Decode)?
        }
        Scheme::Vq => {
            decompress_buildings(received.scheme, &received.blob, received.width, received.height, codebook)?
        }
    };
    let features =
        receiver_features(&decoded_buildings, &received.bs_list, &received.ldpl_list, cfg.work_resolution)?;
    let reconstruction = generator_forward(generator, &features).map_err(PipelineError::Generate)?;
    let truth = truth_at(scene, cfg.work_resolution)?;
    let report = evaluate(&reconstruction, &truth, cfg.outage_threshold).map_err(PipelineError::Metrics)?;
    Ok(PipelineOutput {
        reconstruction,
        report,
        bandwidth: measure_bandwidth(&bytes),
        raw_bits: raw_baseline_bits(&scene.buildings, &scene.observations),
        sent,
        received,
        decoded_buildings,
        features,
    })
}

/// Codebook trained on building patches from scenes without grid snapping,
/// so that edge patterns are varied enough to fill `n` codewords.
pub fn train_scene_codebook(
    cfg: &SceneConfig,
    n_scenes: usize,
    patch: usize,
    n: usize,
    iters: usize,
    seed: u64,
) -> Result<Codebook, HarnessError> {
    let unsnapped = SceneConfig { snap: 1, sample_ratio: 0.0, noise_sigma: 0.0, ..cfg.clone() };
    let scenes = generate_corpus(&unsnapped, n_scenes, seed)?;
    let mut latents = Vec::new();
    for s in &scenes {
        latents.extend(patchify(&s.buildings, patch)?.vectors);
    }
    Ok(train_codebook(&latents, n, iters, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{init_models, Layout};

    fn scene(seed: u64) -> Scene {
        super::super::scene::generate_scene(&SceneConfig::default().with_seed(seed)).unwrap()
    }

    #[test]
    fn lossless_channel_delivers_exact_params_and_buildings() {
        let s = scene(1);
        let g = init_models(FEATURE_CHANNELS, 0).0;
        for q in [50, 95] {
            let cfg = PipelineConfig { jpeg_quality: q, ..PipelineConfig::default() };
            let out = run_pipeline(&s, &cfg, None, &g).unwrap();
            assert_eq!(out.received, out.sent);
            assert_eq!(out.received.ldpl_list, fit_scene(&s, &cfg).unwrap());
            if q == 95 {
                assert_eq!(out.decoded_buildings, s.buildings);
            }
            assert!(out.bandwidth * 1000.0 < out.raw_bits as f64);
            assert!(out.report.mse.is_finite());
        }
    }

    #[test]
    fn pipeline_is_deterministic() {
        let s = scene(2);
        let g = ModelParams::init_seeded(Layout::generator(3), 3, 0);
        let cfg = PipelineConfig {
            channel: ChannelConfig { ber: 0.01, seed: 4, protect_header: true },
            scheme: Scheme::Jpeg,
            jpeg_quality: 95,
            ..PipelineConfig::default()
        };
        let a = run_pipeline(&s, &cfg, None, &g);
        assert_eq!(a, run_pipeline(&s, &cfg, None, &g));
    }

    #[test]
    fn errors_name_their_stage() {
        let mut s = scene(3);
        let g = init_models(FEATURE_CHANNELS, 0).0;
        s.observations = crate::grid::SparseObservationSet::empty(64, 64);
        let err = run_pipeline(&s, &PipelineConfig::default(), None, &g).unwrap_err();
        assert_eq!(err.stage(), "fit");
        assert!(err.to_string().starts_with("fit stage"));

        let cfg = PipelineConfig { scheme: Scheme::Vq, ..PipelineConfig::default() };
        assert_eq!(run_pipeline(&scene(3), &cfg, None, &g).unwrap_err().stage(), "config");

        let cfg = PipelineConfig {
            channel: ChannelConfig { ber: 0.3, seed: 1, protect_header: false },
            ..PipelineConfig::default()
        };
        let err = run_pipeline(&scene(3), &cfg, None, &g).unwrap_err();
        assert!(["deserialize", "decode"].contains(&err.stage()), "{err}");
    }

    #[test]
    fn jpeg_survives_a_noisy_channel_with_protected_header() {
        let g = init_models(FEATURE_CHANNELS, 0).0;
        for seed in 0..20 {
            let cfg = PipelineConfig {
                channel: ChannelConfig { ber: 0.05, seed, protect_header: true },
                ..PipelineConfig::default()
            };
            let out = run_pipeline(&scene(seed), &cfg, None, &g).unwrap();
            assert_eq!(out.received.ldpl_list, out.sent.ldpl_list);
        }
    }

    #[test]
    fn fully_obstructed_map_gives_zero_depth() {
        let all = GridMap::filled(64, 64, MapKind::Binary, 1.0).unwrap();
        let f = receiver_features(&all, &[Pixel::new(3, 3)], &[LdplParams::new(40.0, 20.0)], 32).unwrap();
        assert!(f.depth().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn features_downsample_large_scenes() {
        let cfg = SceneConfig { width: 128, height: 128, ..SceneConfig::default() };
        let s = super::super::scene::generate_scene(&cfg).unwrap();
        let sample = scene_sample(&s, &PipelineConfig::default()).unwrap();
        assert_eq!(sample.features.dims(), (64, 64));
        assert_eq!(sample.target.dims(), (64, 64));
        assert_eq!(sample.features.transmitters().count_ones(), 1);
        assert_eq!(sample.target.kind(), MapKind::NormalizedPower);
    }

    #[test]
    fn perfect_reconstruction_scores_perfectly() {
        let s = scene(4);
        let r = evaluate(&s.truth, &s.truth, 0.3).unwrap();
        assert_eq!(r.mse, 0.0);
        assert_eq!(r.outage_accuracy, Some(1.0));
    }
}
