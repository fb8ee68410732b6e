use super::net::{backward, forward, Layout, ModelParams, NetRole, Trace};
use super::tensor::Tensor;
use super::{
    adam_step, adversarial_term, clamped_log_grad, discriminator_loss, AdamState, FeatureStack, GenError,
};
use crate::grid::GridMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::io::Write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the adversarial term in the generator objective.
    pub alpha: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Side length the feature maps must have.
    pub work_resolution: usize,
    /// `false` skips the discriminator entirely (plain MSE regression).
    pub adversarial: bool,
    /// Presents each sample under a random rotation or reflection.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.01,
            lr: 1e-4,
            batch: 32,
            epochs: 10,
            seed: 0,
            work_resolution: 64,
            adversarial: true,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(GenError::InvalidConfig("alpha must be finite and non-negative"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(GenError::InvalidConfig("learning rate must be positive"));
        }
        if self.batch == 0 {
            return Err(GenError::InvalidConfig("batch size must be at least 1"));
        }
        if self.work_resolution == 0 || self.work_resolution % 4 != 0 {
            return Err(GenError::InvalidConfig("work resolution must be a positive multiple of 4"));
        }
        Ok(())
    }
}

/// One training example: features and the true normalized radio map.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: FeatureStack,
    pub target: GridMap,
}

impl Sample {
    pub fn symmetry(&self, t: u8) -> Sample {
        Sample { features: self.features.symmetry(t), target: self.target.symmetry(t) }
    }
}

/// Per-epoch sample means. `l_g` is the adversarial term `log(1 − D(G(F)))`
/// before weighting; `l_d` and `l_g` are zero when training without the
/// discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLosses {
    pub epoch: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub history: Vec<EpochLosses>,
}

pub(crate) struct GradOut {
    pub grad: Vec<f64>,
    pub mse: f64,
    pub adv: f64,
}

pub(crate) struct DiscGrad {
    pub grad: Vec<f64>,
    pub loss: f64,
}

/// Freshly initialized generator and discriminator for features with
/// `feature_channels` channels. The two draw from separate streams.
pub fn init_models(feature_channels: usize, seed: u64) -> (ModelParams, ModelParams) {
    (
        ModelParams::init_seeded(Layout::generator(feature_channels), seed, 0),
        ModelParams::init_seeded(Layout::discriminator(feature_channels + 1), seed, 1),
    )
}

fn scalar(v: f64) -> Tensor {
    Tensor::new(vec![1], vec![v]).expect("one element")
}

#[cfg(test)]
pub(crate) fn discriminator_gradient(
    d: &ModelParams,
    f: &FeatureStack,
    y_real: &GridMap,
    y_fake: &GridMap,
) -> Result<DiscGrad, GenError> {
    discriminator_gradient_raw(d, f, y_real.values(), y_fake.values())
}

fn discriminator_gradient_raw(
    d: &ModelParams,
    f: &FeatureStack,
    real: &[f64],
    fake: &[f64],
) -> Result<DiscGrad, GenError> {
    let mut grad = vec![0.0; d.len()];
    let t_real = forward(d, f.with_candidate(real)?)?;
    let t_fake = forward(d, f.with_candidate(fake)?)?;
    let (p_real, p_fake) = (t_real.output().data()[0], t_fake.output().data()[0]);
    backward(d, &t_real, scalar(-clamped_log_grad(p_real)), &mut grad)?;
    backward(d, &t_fake, scalar(clamped_log_grad(1.0 - p_fake)), &mut grad)?;
    Ok(DiscGrad { grad, loss: discriminator_loss(p_real, p_fake) })
}

#[cfg(test)]
pub(crate) fn generator_gradient(
    g: &ModelParams,
    d: &ModelParams,
    f: &FeatureStack,
    y: &GridMap,
    alpha: f64,
) -> Result<GradOut, GenError> {
    let trace = forward(g, f.to_tensor())?;
    generator_gradient_from(g, d, f, y.values(), &trace, alpha, true)
}

/// Gradient of `alpha·log(1 − D(ŷ)) + mse(ŷ, y)` given a cached generator
/// pass. With `alpha = 0` the discriminator contributes nothing and is not
/// differentiated.
fn generator_gradient_from(
    g: &ModelParams,
    d: &ModelParams,
    f: &FeatureStack,
    y: &[f64],
    trace: &Trace,
    alpha: f64,
    adversarial: bool,
) -> Result<GradOut, GenError> {
    let out = trace.output();
    let y_hat = out.data();
    if y_hat.len() != y.len() {
        return Err(GenError::ShapeMismatch {
            expected: format!("{} target pixels", y_hat.len()),
            actual: format!("{}", y.len()),
        });
    }
    let n = y.len() as f64;
    let mse = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
    let mut d_out: Vec<f64> = y_hat.iter().zip(y).map(|(a, b)| 2.0 * (a - b) / n).collect();

    let mut adv = 0.0;
    if adversarial {
        let t_d = forward(d, f.with_candidate(y_hat)?)?;
        let p = t_d.output().data()[0];
        adv = adversarial_term(p);
        if alpha != 0.0 {
            // d/dp log(1 − p) = −1/(1 − p)
            let seed = -alpha * clamped_log_grad(1.0 - p);
            let mut unused = vec![0.0; d.len()];
            let d_in = backward(d, &t_d, scalar(seed), &mut unused)?;
            for (o, gi) in d_out.iter_mut().zip(&d_in.data()[..y.len()]) {
                *o += gi;
            }
        }
    }
    let mut grad = vec![0.0; g.len()];
    backward(g, trace, Tensor::new(out.shape().to_vec(), d_out)?, &mut grad)?;
    Ok(GradOut { grad, mse, adv })
}

fn validate_dataset(dataset: &[Sample], cfg: &TrainConfig) -> Result<usize, GenError> {
    let first = dataset.first().ok_or(GenError::EmptyDataset)?;
    let channels = first.features.channels();
    for s in dataset {
        let (w, h) = s.features.dims();
        if w != cfg.work_resolution || h != cfg.work_resolution || s.target.dims() != (w, h) {
            return Err(GenError::ShapeMismatch {
                expected: format!("{0}x{0} features and targets", cfg.work_resolution),
                actual: format!("{w}x{h} features, {:?} target", s.target.dims()),
            });
        }
        if s.features.channels() != channels {
            return Err(GenError::ShapeMismatch {
                expected: format!("{channels} feature channels in every sample"),
                actual: format!("{}", s.features.channels()),
            });
        }
    }
    Ok(channels)
}

fn check_layout(p: &ModelParams, want: Layout) -> Result<(), GenError> {
    if *p.layout() != want {
        return Err(GenError::LayoutMismatch(match want.role {
            NetRole::Generator => "generator layout does not fit the feature channels",
            NetRole::Discriminator => "discriminator layout does not fit the feature channels",
        }));
    }
    Ok(())
}

/// Trains from a fresh seeded initialization.
pub fn train(dataset: &[Sample], cfg: &TrainConfig) -> Result<TrainOutcome, GenError> {
    cfg.validate()?;
    let channels = validate_dataset(dataset, cfg)?;
    let (g, d) = init_models(channels, cfg.seed);
    train_from(g, d, dataset, cfg)
}

/// Continues training from given parameters with fresh optimizer state.
///
/// Each batch takes one discriminator step on `L_D`, then one generator
/// step on `alpha·L_G + L_MSE` against the updated discriminator. Batch
/// order is shuffled per epoch from `cfg.seed`. Per-sample gradients may be
/// computed in parallel; they are summed in batch order, so results are
/// bitwise reproducible.
pub fn train_from(
    mut g: ModelParams,
    mut d: ModelParams,
    dataset: &[Sample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, GenError> {
    cfg.validate()?;
    let channels = validate_dataset(dataset, cfg)?;
    check_layout(&g, Layout::generator(channels))?;
    check_layout(&d, Layout::discriminator(channels + 1))?;

    let mut opt_g = AdamState::new(g.len());
    let mut opt_d = AdamState::new(d.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_g, mut sum_mse) = (0.0, 0.0, 0.0);
        for idx in order.chunks(cfg.batch) {
            let scale = 1.0 / idx.len() as f64;
            let batch: Vec<Cow<Sample>> = idx
                .iter()
                .map(|&i| match cfg.augment {
                    true => Cow::Owned(dataset[i].symmetry(rng.random_range(0..8))),
                    false => Cow::Borrowed(&dataset[i]),
                })
                .collect();
            let traces: Vec<Trace> =
                batch.par_iter().map(|s| forward(&g, s.features.to_tensor())).collect::<Result<_, _>>()?;

            if cfg.adversarial {
                let parts: Vec<DiscGrad> = batch
                    .par_iter()
                    .zip(&traces)
                    .map(|(s, t)| {
                        discriminator_gradient_raw(&d, &s.features, s.target.values(), t.output().data())
                    })
                    .collect::<Result<_, _>>()?;
                let mut grad = vec![0.0; d.len()];
                for p in &parts {
                    sum_d += p.loss;
                    for (a, b) in grad.iter_mut().zip(&p.grad) {
                        *a += b;
                    }
                }
                grad.iter_mut().for_each(|v| *v *= scale);
                adam_step(d.values_mut(), &grad, &mut opt_d, cfg.lr)?;
            }

            let parts: Vec<GradOut> = batch
                .par_iter()
                .zip(&traces)
                .map(|(s, t)| {
                    generator_gradient_from(
                        &g,
                        &d,
                        &s.features,
                        s.target.values(),
                        t,
                        cfg.alpha,
                        cfg.adversarial,
                    )
                })
                .collect::<Result<_, _>>()?;
            let mut grad = vec![0.0; g.len()];
            for p in &parts {
                sum_g += p.adv;
                sum_mse += p.mse;
                for (a, b) in grad.iter_mut().zip(&p.grad) {
                    *a += b;
                }
            }
            grad.iter_mut().for_each(|v| *v *= scale);
            adam_step(g.values_mut(), &grad, &mut opt_g, cfg.lr)?;
        }
        let n = dataset.len() as f64;
        history.push(EpochLosses { epoch, l_d: sum_d / n, l_g: sum_g / n, l_mse: sum_mse / n });
    }
    Ok(TrainOutcome { generator: g, discriminator: d, history })
}

/// Mean per-sample MSE of the generator over a dataset.
pub fn dataset_mse(g: &ModelParams, dataset: &[Sample]) -> Result<f64, GenError> {
    if dataset.is_empty() {
        return Err(GenError::EmptyDataset);
    }
    let per: Vec<f64> = dataset
        .par_iter()
        .map(|s| {
            let y = super::generator_forward(g, &s.features)?;
            Ok(crate::metrics::mse(&y, &s.target)?)
        })
        .collect::<Result<_, GenError>>()?;
    Ok(per.iter().sum::<f64>() / per.len() as f64)
}

/// Writes `epoch,L_D,L_G,L_MSE` rows with a header line.
pub fn write_history_csv<W: Write>(history: &[EpochLosses], mut w: W) -> std::io::Result<()> {
    writeln!(w, "epoch,L_D,L_G,L_MSE")?;
    for h in history {
        writeln!(w, "{},{},{},{}", h.epoch, h.l_d, h.l_g, h.l_mse)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::tests::random_features;
    use crate::grid::MapKind;

    /// Targets that depend on the features so there is something to learn.
    fn toy_dataset(n: usize, size: usize, seed: u64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let features = random_features(&mut rng, size, 0);
                let target = GridMap::from_fn(size, size, MapKind::NormalizedPower, |x, y| {
                    let u = features.buildings().get(x, y);
                    0.8 * features.depth().get(x, y) * (1.0 - u) + 0.1
                })
                .unwrap();
                Sample { features, target }
            })
            .collect()
    }

    fn cfg(epochs: usize) -> TrainConfig {
        TrainConfig { lr: 1e-3, batch: 4, epochs, seed: 11, work_resolution: 8, ..TrainConfig::default() }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = toy_dataset(3, 8, 1);
        let out = train(&data, &cfg(0)).unwrap();
        let (g, d) = init_models(3, 11);
        assert_eq!(out.generator, g);
        assert_eq!(out.discriminator, d);
        assert!(out.history.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let data = toy_dataset(6, 8, 2);
        let a = train(&data, &cfg(3)).unwrap();
        let b = train(&data, &cfg(3)).unwrap();
        assert_eq!(a, b);
        let c = train(&data, &TrainConfig { seed: 12, ..cfg(3) }).unwrap();
        assert_ne!(a.generator, c.generator);
    }

    #[test]
    fn alpha_zero_matches_gan_free_training() {
        let data = toy_dataset(6, 8, 3);
        let with_d = train(&data, &TrainConfig { alpha: 0.0, ..cfg(4) }).unwrap();
        let without = train(&data, &TrainConfig { alpha: 0.0, adversarial: false, ..cfg(4) }).unwrap();
        assert_eq!(with_d.generator, without.generator);
        for (a, b) in with_d.history.iter().zip(&without.history) {
            assert!((a.l_mse - b.l_mse).abs() <= 1e-12);
        }
        assert!(with_d.history.iter().all(|h| h.l_d > 0.0));
        assert!(without.history.iter().all(|h| h.l_d == 0.0 && h.l_g == 0.0));
    }

    #[test]
    fn mse_falls_on_a_learnable_task() {
        let data = toy_dataset(8, 8, 4);
        let before = dataset_mse(&init_models(3, 11).0, &data).unwrap();
        let out = train(&data, &cfg(40)).unwrap();
        let after = dataset_mse(&out.generator, &data).unwrap();
        assert!(after <= 0.7 * before, "{before} -> {after}");
    }

    #[test]
    fn rejects_bad_inputs() {
        assert_eq!(train(&[], &cfg(1)), Err(GenError::EmptyDataset));
        let data = toy_dataset(2, 8, 5);
        assert!(matches!(
            train(&data, &TrainConfig { work_resolution: 16, ..cfg(1) }),
            Err(GenError::ShapeMismatch { .. })
        ));
        assert!(train(&data, &TrainConfig { lr: 0.0, ..cfg(1) }).is_err());
        assert!(train(&data, &TrainConfig { batch: 0, ..cfg(1) }).is_err());
        let (g, _) = init_models(4, 0);
        let (_, d) = init_models(3, 0);
        assert!(matches!(train_from(g, d, &data, &cfg(1)), Err(GenError::LayoutMismatch(_))));
    }

    #[test]
    fn history_csv_format() {
        let h = [EpochLosses { epoch: 0, l_d: 1.5, l_g: -0.5, l_mse: 0.25 }];
        let mut buf = Vec::new();
        write_history_csv(&h, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,L_D,L_G,L_MSE\n0,1.5,-0.5,0.25\n");
    }
}
