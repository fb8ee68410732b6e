mod config;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::Config;
use radiosem::depthmap::radio_depth_map;
use radiosem::fedtrain::{fed_train, AggregationScope, ClientState, FedConfig};
use radiosem::genmodel::{dataset_mse, physics_baseline, train, write_history_csv, ModelParams, Sample};
use radiosem::grid::{GridMap, MapKind};
use radiosem::harness::{
    compress_buildings, decompress_buildings, evaluate, fit_scene, generate_corpus, load_dataset_dir,
    load_map, load_record, run_pipeline, save_map, save_scene, scene_sample, train_scene_codebook, truth_at,
    Scene, SceneConfig, DEFAULT_DYNAMIC_RANGE,
};
use radiosem::metrics::{outage_map, OutageThreshold};
use radiosem::payload::Scheme;
use radiosem::semcomp::Codebook;
use serde::Serialize;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "radiosem", version, about = "Semantic radio-map transmission simulator")]
struct Cli {
    /// JSON or TOML config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic scenes into a dataset directory.
    Synth(SynthArgs),
    /// Fit LDPL parameters for one scene and print them as JSON.
    Fit(FitArgs),
    /// Write the radio depth map of one scene as PGM.
    Depthmap(DepthmapArgs),
    /// Compress a building map.
    Encode(EncodeArgs),
    /// Decompress a building map.
    Decode(DecodeArgs),
    /// Train a VQ codebook on synthetic building maps.
    Codebook(CodebookArgs),
    /// Run the full pipeline on one scene.
    Transmit(TransmitArgs),
    /// Train the reconstructor on a dataset directory.
    Train(TrainArgs),
    /// Federated training over clients built from dataset shards.
    Fedtrain(FedArgs),
    /// Score a model over a dataset; writes metrics CSV and PGM figures.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    Jpeg,
    Vq,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Scheme {
        match s {
            SchemeArg::Jpeg => Scheme::Jpeg,
            SchemeArg::Vq => Scheme::Vq,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// 256×256 scenes with more and larger buildings.
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    buildings: Option<usize>,
    #[arg(long)]
    bs: Option<usize>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DepthmapArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CodecArgs {
    #[arg(long, value_enum)]
    scheme: Option<SchemeArg>,
    #[arg(long)]
    quality: Option<u8>,
    /// Required for the VQ scheme.
    #[arg(long)]
    codebook: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Binary building map (PGM).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Map width; VQ streams do not record it.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[command(flatten)]
    codec: CodecArgs,
}

#[derive(Args)]
struct CodebookArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    patch: Option<usize>,
    #[arg(long)]
    scenes: Option<usize>,
    #[arg(long)]
    full_scale: bool,
}

#[derive(Args)]
struct ChannelArgs {
    #[arg(long)]
    ber: Option<f64>,
    /// Keep header, transmitter records and blob length error-free.
    #[arg(long)]
    protect_header: bool,
}

#[derive(Args)]
struct TransmitArgs {
    #[arg(long)]
    scene: PathBuf,
    /// Generator parameters; without one the physics baseline reconstructs.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    payload_out: Option<PathBuf>,
    #[arg(long)]
    map_out: Option<PathBuf>,
    #[command(flatten)]
    codec: CodecArgs,
    #[command(flatten)]
    channel: ChannelArgs,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Plain MSE regression without the discriminator.
    #[arg(long)]
    no_adversarial: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory for parameters and loss history.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct FedArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    clients_per_round: Option<usize>,
    /// Average only the generator; clients keep their discriminators.
    #[arg(long)]
    generator_only: bool,
    #[command(flatten)]
    train: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    codec: CodecArgs,
    #[command(flatten)]
    channel: ChannelArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p).context("config stage")?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    match cli.command {
        Command::Synth(a) => synth(cfg, a),
        Command::Fit(a) => fit(cfg, a),
        Command::Depthmap(a) => depthmap(cfg, a),
        Command::Encode(a) => encode(cfg, a),
        Command::Decode(a) => decode(cfg, a),
        Command::Codebook(a) => codebook(cfg, a),
        Command::Transmit(a) => transmit(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Fedtrain(a) => fedtrain(cfg, a),
        Command::Eval(a) => eval(cfg, a),
    }
}

fn apply_codec(cfg: &mut Config, a: &CodecArgs) -> Result<Option<Codebook>> {
    if let Some(s) = a.scheme {
        cfg.pipeline.scheme = s.into();
    }
    if let Some(q) = a.quality {
        cfg.pipeline.jpeg_quality = q;
    }
    let cb = match &a.codebook {
        Some(p) => {
            let bytes = std::fs::read(p).with_context(|| format!("load stage: reading {}", p.display()))?;
            Some(
                Codebook::from_bytes(&bytes)
                    .with_context(|| format!("load stage: codebook {}", p.display()))?,
            )
        }
        None => None,
    };
    if cfg.pipeline.scheme == Scheme::Vq && cb.is_none() {
        bail!("config stage: the vq scheme needs --codebook");
    }
    Ok(cb)
}

fn apply_channel(cfg: &mut Config, a: &ChannelArgs) {
    if let Some(ber) = a.ber {
        cfg.pipeline.channel.ber = ber;
    }
    if a.protect_header {
        cfg.pipeline.channel.protect_header = true;
    }
}

fn apply_train(cfg: &mut Config, a: &TrainOverrides) {
    let t = &mut cfg.train;
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.lr = a.lr.unwrap_or(t.lr);
    t.batch = a.batch.unwrap_or(t.batch);
    t.alpha = a.alpha.unwrap_or(t.alpha);
    if a.no_adversarial {
        t.adversarial = false;
    }
    t.work_resolution = cfg.pipeline.work_resolution;
}

fn load_scene(cfg: &Config, dir: &Path) -> Result<Scene> {
    let rec = load_record(dir).context("load stage")?;
    rec.to_scene(DEFAULT_DYNAMIC_RANGE, cfg.data.sample_ratio, cfg.scene.seed).context("load stage")
}

fn load_scenes(cfg: &Config, dir: &Path) -> Result<Vec<(String, Scene)>> {
    let records = load_dataset_dir(dir).context("load stage")?;
    if records.is_empty() {
        bail!("load stage: no scene directories in {}", dir.display());
    }
    records
        .iter()
        .map(|r| {
            let s = r
                .to_scene(DEFAULT_DYNAMIC_RANGE, cfg.data.sample_ratio, cfg.scene.seed)
                .with_context(|| format!("load stage: scene {}", r.name))?;
            Ok((r.name.clone(), s))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path).with_context(|| format!("load stage: reading {}", path.display()))?;
    ModelParams::from_bytes(&bytes).with_context(|| format!("load stage: model {}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("write stage: {}", parent.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("write stage: {}", path.display()))
}

fn synth(mut cfg: Config, a: SynthArgs) -> Result<()> {
    if a.full_scale {
        cfg.scene = SceneConfig { seed: cfg.scene.seed, ..SceneConfig::full_scale() };
    }
    if let Some(s) = a.size {
        cfg.scene.width = s;
        cfg.scene.height = s;
    }
    cfg.scene.n_buildings = a.buildings.unwrap_or(cfg.scene.n_buildings);
    cfg.scene.n_bs = a.bs.unwrap_or(cfg.scene.n_bs);
    let scenes = generate_corpus(&cfg.scene, a.count, cfg.scene.seed).context("synth stage")?;
    for (i, s) in scenes.iter().enumerate() {
        save_scene(a.out.join(format!("scene_{i:04}")), s).context("write stage")?;
    }
    println!("wrote {} scenes to {}", scenes.len(), a.out.display());
    Ok(())
}

#[derive(Serialize)]
struct FitRecord {
    bs: (usize, usize),
    pl0: f64,
    theta_tilde: f64,
}

fn fit(cfg: Config, a: FitArgs) -> Result<()> {
    let scene = load_scene(&cfg, &a.scene)?;
    let params = fit_scene(&scene, &cfg.pipeline)?;
    let records: Vec<FitRecord> = scene
        .bs_list
        .iter()
        .zip(&params)
        .map(|(b, p)| FitRecord { bs: (b.x, b.y), pl0: p.pl0, theta_tilde: p.theta_tilde })
        .collect();
    let text = serde_json::to_string_pretty(&records)?;
    match a.out {
        Some(p) => write_file(&p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn depthmap(cfg: Config, a: DepthmapArgs) -> Result<()> {
    let scene = load_scene(&cfg, &a.scene)?;
    let params = fit_scene(&scene, &cfg.pipeline)?;
    let m = radio_depth_map(&scene.buildings, &scene.bs_list, &params).context("features stage")?;
    save_map(&a.out, &m).context("write stage")
}

fn encode(mut cfg: Config, a: EncodeArgs) -> Result<()> {
    let cb = apply_codec(&mut cfg, &a.codec)?;
    let map = load_map(&a.input, MapKind::Binary).context("load stage")?;
    let blob = compress_buildings(&map, &cfg.pipeline, cb.as_ref())?;
    write_file(&a.out, &blob)?;
    println!("{} bits", 8 * blob.len());
    Ok(())
}

fn decode(mut cfg: Config, a: DecodeArgs) -> Result<()> {
    let cb = apply_codec(&mut cfg, &a.codec)?;
    let blob =
        std::fs::read(&a.input).with_context(|| format!("load stage: reading {}", a.input.display()))?;
    let (w, h) = match (cfg.pipeline.scheme, a.width, a.height) {
        (_, Some(w), Some(h)) => (w, h),
        (Scheme::Jpeg, _, _) => {
            let (_, w, h) = radiosem::semcomp::jpeg_header(&blob).context("decode stage")?;
            (w, h)
        }
        (Scheme::Vq, _, _) => bail!("config stage: VQ decoding needs --width and --height"),
    };
    let map = decompress_buildings(cfg.pipeline.scheme, &blob, w, h, cb.as_ref())?;
    save_map(&a.out, &map).context("write stage")
}

fn codebook(mut cfg: Config, a: CodebookArgs) -> Result<()> {
    let c = &mut cfg.codebook;
    c.size = a.size.unwrap_or(c.size);
    c.patch = a.patch.unwrap_or(c.patch);
    c.scenes = a.scenes.unwrap_or(c.scenes);
    let scene_cfg = if a.full_scale { SceneConfig::full_scale() } else { cfg.scene.clone() };
    let c = &cfg.codebook;
    let cb = train_scene_codebook(&scene_cfg, c.scenes, c.patch, c.size, c.iters, c.seed)
        .context("codebook stage")?;
    write_file(&a.out, &cb.to_bytes().context("write stage")?)?;
    println!("{} codewords of dimension {}", cb.len(), cb.dim());
    Ok(())
}

/// Physics-only reconstruction at the work resolution.
fn physics_at(
    buildings: &GridMap,
    scene: &Scene,
    params: &[radiosem::ldpl::LdplParams],
    work: usize,
) -> Result<GridMap> {
    let full = physics_baseline(buildings, &scene.bs_list, params).context("generate stage")?;
    let f = full.width() / work;
    full.downsample(f.max(1)).context("generate stage")
}

fn transmit(mut cfg: Config, a: TransmitArgs) -> Result<()> {
    let cb = apply_codec(&mut cfg, &a.codec)?;
    apply_channel(&mut cfg, &a.channel);
    let scene = load_scene(&cfg, &a.scene)?;
    let (reconstruction, bandwidth, raw_bits, report, sent) = match &a.model {
        Some(m) => {
            let g = load_model(m)?;
            let out = run_pipeline(&scene, &cfg.pipeline, cb.as_ref(), &g)?;
            (out.reconstruction, out.bandwidth, out.raw_bits, out.report, out.sent)
        }
        None => {
            // same chain, physics baseline in place of the generator
            let g = radiosem::genmodel::init_models(radiosem::harness::FEATURE_CHANNELS, 0).0;
            let out = run_pipeline(&scene, &cfg.pipeline, cb.as_ref(), &g)?;
            let y = physics_at(
                &out.decoded_buildings,
                &scene,
                &out.received.ldpl_list,
                cfg.pipeline.work_resolution,
            )?;
            let truth = truth_at(&scene, cfg.pipeline.work_resolution)?;
            let report = evaluate(&y, &truth, cfg.pipeline.outage_threshold).context("metrics stage")?;
            (y, out.bandwidth, out.raw_bits, report, out.sent)
        }
    };
    if let Some(p) = &a.payload_out {
        let bytes = radiosem::payload::serialize(&sent).context("serialize stage")?;
        write_file(p, &bytes)?;
    }
    if let Some(p) = &a.map_out {
        save_map(p, &reconstruction).context("write stage")?;
    }
    println!("bandwidth_kbit {bandwidth:.3}");
    println!("raw_kbit {:.3}", raw_bits as f64 / 1000.0);
    println!("mse {:.6}", report.mse);
    println!("nmse {:.6}", report.nmse);
    println!("outage_agreement {:.6}", report.outage_accuracy.unwrap_or(f64::NAN));
    Ok(())
}

fn samples(cfg: &Config, scenes: &[(String, Scene)]) -> Result<Vec<Sample>> {
    scenes
        .iter()
        .map(|(name, s)| scene_sample(s, &cfg.pipeline).with_context(|| format!("scene {name}")))
        .collect()
}

fn split_test(cfg: &Config, n: usize) -> Result<usize> {
    let f = cfg.data.test_fraction;
    if !(0.0..1.0).contains(&f) {
        bail!("config stage: test_fraction must lie in [0, 1)");
    }
    let test = (n as f64 * f).round() as usize;
    if test >= n {
        bail!("config stage: no scenes left for training");
    }
    Ok(n - test)
}

fn save_models(out: &Path, g: &ModelParams, d: &ModelParams) -> Result<()> {
    write_file(&out.join("generator.rsmp"), &g.to_bytes())?;
    write_file(&out.join("discriminator.rsmp"), &d.to_bytes())
}

fn train_cmd(mut cfg: Config, a: TrainArgs) -> Result<()> {
    apply_train(&mut cfg, &a.train);
    let scenes = load_scenes(&cfg, &a.data)?;
    let data = samples(&cfg, &scenes)?;
    let cut = split_test(&cfg, data.len())?;
    let (train_set, test_set) = data.split_at(cut);
    let out = train(train_set, &cfg.train).context("train stage")?;
    save_models(&a.out, &out.generator, &out.discriminator)?;
    let mut csv = Vec::new();
    write_history_csv(&out.history, &mut csv)?;
    write_file(&a.out.join("history.csv"), &csv)?;
    println!("train_mse {:.6}", dataset_mse(&out.generator, train_set)?);
    if !test_set.is_empty() {
        println!("test_mse {:.6}", dataset_mse(&out.generator, test_set)?);
    }
    Ok(())
}

fn fedtrain(mut cfg: Config, a: FedArgs) -> Result<()> {
    apply_train(&mut cfg, &a.train);
    let f = &mut cfg.fed;
    f.clients = a.clients.unwrap_or(f.clients);
    f.rounds = a.rounds.unwrap_or(f.rounds);
    f.local_epochs = a.local_epochs.unwrap_or(f.local_epochs);
    f.clients_per_round = a.clients_per_round.or(f.clients_per_round);
    if a.generator_only {
        f.scope = AggregationScope::GeneratorOnly;
    }
    let scenes = load_scenes(&cfg, &a.data)?;
    let data = samples(&cfg, &scenes)?;
    let cut = split_test(&cfg, data.len())?;
    let (train_set, test_set) = data.split_at(cut);
    if cfg.fed.clients == 0 || cfg.fed.clients > train_set.len() {
        bail!("config stage: {} clients for {} training scenes", cfg.fed.clients, train_set.len());
    }
    // contiguous shards, sizes differing by at most one
    let n = cfg.fed.clients;
    let pool: Vec<ClientState> = (0..n)
        .map(|i| {
            let lo = i * train_set.len() / n;
            let hi = (i + 1) * train_set.len() / n;
            ClientState::new(i, train_set[lo..hi].to_vec())
        })
        .collect::<Result<_, _>>()
        .context("fedtrain stage")?;
    let fed_cfg = FedConfig {
        rounds: cfg.fed.rounds,
        local_epochs: cfg.fed.local_epochs,
        clients_per_round: cfg.fed.clients_per_round,
        seed: cfg.train.seed,
        train: cfg.train.clone(),
        scope: cfg.fed.scope,
    };
    let out = fed_train(&pool, test_set, &fed_cfg).context("fedtrain stage")?;
    save_models(&a.out, &out.generator, &out.discriminator)?;
    // one row per round and selected client
    let mut csv = String::from("round,global_mse,global_nmse,client,l_d,l_g,l_mse\n");
    for h in &out.history {
        for (id, l) in h.selected.iter().zip(&h.local) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                h.round, h.test_mse, h.test_nmse, id, l.l_d, l.l_g, l.l_mse
            ));
        }
    }
    write_file(&a.out.join("rounds.csv"), csv.as_bytes())?;
    if let Some(last) = out.history.last() {
        println!("test_mse {:.6}", last.test_mse);
    }
    Ok(())
}

fn eval(mut cfg: Config, a: EvalArgs) -> Result<()> {
    let cb = apply_codec(&mut cfg, &a.codec)?;
    apply_channel(&mut cfg, &a.channel);
    let scenes = load_scenes(&cfg, &a.data)?;
    let g = match &a.model {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let fallback = radiosem::genmodel::init_models(radiosem::harness::FEATURE_CHANNELS, 0).0;
    std::fs::create_dir_all(&a.out).with_context(|| format!("write stage: {}", a.out.display()))?;
    let mut csv = Vec::new();
    writeln!(csv, "scene,bandwidth_kbit,mse,nmse,outage_agreement,physics_mse,physics_outage_agreement")?;
    let work = cfg.pipeline.work_resolution;
    let t = OutageThreshold::Normalized(cfg.pipeline.outage_threshold);
    let (mut sum_model, mut sum_phys) = (0.0, 0.0);
    for (name, scene) in &scenes {
        let out = run_pipeline(scene, &cfg.pipeline, cb.as_ref(), g.as_ref().unwrap_or(&fallback))
            .with_context(|| format!("scene {name}"))?;
        let truth = truth_at(scene, work)?;
        let phys = physics_at(&out.decoded_buildings, scene, &out.received.ldpl_list, work)?;
        let phys_report = evaluate(&phys, &truth, cfg.pipeline.outage_threshold).context("metrics stage")?;
        let report = if g.is_some() { out.report } else { phys_report };
        let recon = if g.is_some() { &out.reconstruction } else { &phys };
        writeln!(
            csv,
            "{name},{:.3},{},{},{},{},{}",
            out.bandwidth,
            report.mse,
            report.nmse,
            report.outage_accuracy.unwrap_or(f64::NAN),
            phys_report.mse,
            phys_report.outage_accuracy.unwrap_or(f64::NAN)
        )?;
        sum_model += report.mse;
        sum_phys += phys_report.mse;
        let dir = a.out.join(name);
        std::fs::create_dir_all(&dir).with_context(|| format!("write stage: {}", dir.display()))?;
        save_map(dir.join("reconstruction.pgm"), recon).context("write stage")?;
        save_map(dir.join("truth.pgm"), &truth).context("write stage")?;
        save_map(dir.join("outage_pred.pgm"), &outage_map(recon, t)?).context("write stage")?;
        save_map(dir.join("outage_truth.pgm"), &outage_map(&truth, t)?).context("write stage")?;
    }
    write_file(&a.out.join("metrics.csv"), &csv)?;
    let n = scenes.len() as f64;
    println!("mean_mse {:.6}", sum_model / n);
    println!("mean_physics_mse {:.6}", sum_phys / n);
    Ok(())
}
