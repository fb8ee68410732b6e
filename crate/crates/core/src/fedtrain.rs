//! Federated training across simulated clients.
//!
//! Each round samples clients, broadcasts the global generator and
//! discriminator, runs local epochs on every selected shard and replaces
//! the global parameters with the dataset-size-weighted mean of the local
//! results. The only value that crosses client boundaries is
//! [`ModelParams`].

use crate::genmodel::{init_models, train_from, EpochLosses, GenError, ModelParams, Sample, TrainConfig};
use crate::metrics::{mse, nmse};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FedError {
    #[error("cannot sample {k} clients from a pool of {pool}")]
    KTooLarge { k: usize, pool: usize },
    #[error("no updates to aggregate")]
    EmptyUpdateSet,
    #[error("parameter layouts differ: {0}")]
    LayoutMismatch(&'static str),
    #[error("invalid federated config: {0}")]
    InvalidConfig(&'static str),
    #[error("client {0} has no samples")]
    EmptyClient(usize),
    #[error("client id {0} appears twice")]
    DuplicateClient(usize),
    #[error(transparent)]
    Train(#[from] GenError),
}

/// One participant: an id and its private shard.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientState {
    pub id: usize,
    pub dataset: Vec<Sample>,
}

impl ClientState {
    pub fn new(id: usize, dataset: Vec<Sample>) -> Result<Self, FedError> {
        if dataset.is_empty() {
            return Err(FedError::EmptyClient(id));
        }
        Ok(ClientState { id, dataset })
    }

    pub fn dataset_size(&self) -> usize {
        self.dataset.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FedConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    /// Clients per round; `None` takes the whole pool.
    pub clients_per_round: Option<usize>,
    pub seed: u64,
    /// Local optimizer settings. Its `epochs` and `seed` are overridden per
    /// round.
    pub train: TrainConfig,
    pub scope: AggregationScope,
}

/// Which networks are averaged across clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScope {
    #[default]
    Both,
    /// Each client keeps its own discriminator between rounds.
    GeneratorOnly,
}

impl Default for FedConfig {
    fn default() -> Self {
        FedConfig {
            rounds: 10,
            local_epochs: 2,
            clients_per_round: None,
            seed: 0,
            train: TrainConfig::default(),
            scope: AggregationScope::Both,
        }
    }
}

impl FedConfig {
    pub fn validate(&self, pool: usize) -> Result<usize, FedError> {
        if self.rounds == 0 {
            return Err(FedError::InvalidConfig("rounds must be at least 1"));
        }
        self.train.validate()?;
        let k = self.clients_per_round.unwrap_or(pool);
        if k == 0 {
            return Err(FedError::InvalidConfig("at least one client per round"));
        }
        if k > pool {
            return Err(FedError::KTooLarge { k, pool });
        }
        Ok(k)
    }
}

/// Global-test metrics after one round's aggregation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub selected: Vec<usize>,
    pub test_mse: f64,
    pub test_nmse: f64,
    /// Last local epoch of each selected client, in `selected` order.
    pub local: Vec<EpochLosses>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FedOutcome {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub history: Vec<RoundMetrics>,
}

/// Ids of the clients taking part in `round`, ascending.
///
/// Uniform without replacement, seeded by `(seed, round)`.
pub fn sample_clients(
    pool: &[ClientState],
    k: usize,
    round: usize,
    seed: u64,
) -> Result<Vec<usize>, FedError> {
    if k > pool.len() {
        return Err(FedError::KTooLarge { k, pool: pool.len() });
    }
    let mut ids: Vec<usize> = if k == pool.len() {
        pool.iter().map(|c| c.id).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(round as u64);
        rand::seq::index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i].id).collect()
    };
    ids.sort_unstable();
    Ok(ids)
}

/// Training seed for one client in one round.
pub fn local_seed(seed: u64, round: usize, client: usize) -> u64 {
    // splitmix64 finalizer over the packed triple
    let mut z = seed
        ^ (round as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (client as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Result of one client's local epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate {
    pub generator: ModelParams,
    pub discriminator: ModelParams,
    pub history: Vec<EpochLosses>,
}

/// Runs `epochs` of local training from copies of the global parameters.
pub fn local_update(
    client: &ClientState,
    global: (&ModelParams, &ModelParams),
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<LocalUpdate, FedError> {
    if epochs == 0 {
        return Ok(LocalUpdate {
            generator: global.0.clone(),
            discriminator: global.1.clone(),
            history: Vec::new(),
        });
    }
    let local = TrainConfig { epochs, ..cfg.clone() };
    let out =
        train_from(global.0.clone(), global.1.clone(), &client.dataset, &local).map_err(|e| match e {
            GenError::LayoutMismatch(m) => FedError::LayoutMismatch(m),
            other => FedError::Train(other),
        })?;
    Ok(LocalUpdate { generator: out.generator, discriminator: out.discriminator, history: out.history })
}

/// Coordinatewise mean weighted by dataset size, summed in the given order.
pub fn aggregate(updates: &[(&ModelParams, usize)]) -> Result<ModelParams, FedError> {
    let (first, _) = updates.first().ok_or(FedError::EmptyUpdateSet)?;
    if updates.iter().any(|(p, _)| p.layout() != first.layout()) {
        return Err(FedError::LayoutMismatch("updates disagree on layout"));
    }
    let total: usize = updates.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(FedError::InvalidConfig("total dataset size is zero"));
    }
    if updates.len() == 1 {
        return Ok((*first).clone());
    }
    let mut out = vec![0.0; first.len()];
    for (p, n) in updates {
        let w = *n as f64 / total as f64;
        for (o, v) in out.iter_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    Ok(ModelParams::new(first.layout().clone(), out)?)
}

fn test_metrics(g: &ModelParams, test: &[Sample]) -> Result<(f64, f64), GenError> {
    if test.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let per: Vec<(f64, f64)> = test
        .par_iter()
        .map(|s| {
            let y = crate::genmodel::generator_forward(g, &s.features)?;
            Ok((mse(&y, &s.target)?, nmse(&y, &s.target).unwrap_or(f64::NAN)))
        })
        .collect::<Result<_, GenError>>()?;
    let n = per.len() as f64;
    Ok((per.iter().map(|p| p.0).sum::<f64>() / n, per.iter().map(|p| p.1).sum::<f64>() / n))
}

fn check_pool(pool: &[ClientState]) -> Result<usize, FedError> {
    let mut ids = Vec::with_capacity(pool.len());
    for c in pool {
        if c.dataset.is_empty() {
            return Err(FedError::EmptyClient(c.id));
        }
        if ids.contains(&c.id) {
            return Err(FedError::DuplicateClient(c.id));
        }
        ids.push(c.id);
    }
    let channels =
        pool.first().ok_or(FedError::InvalidConfig("empty client pool"))?.dataset[0].features.channels();
    Ok(channels)
}

/// Federated training from a fresh initialization seeded by `cfg.seed`.
///
/// `test` is a global held-out set used only for the per-round metrics;
/// it may be empty, in which case the metrics are NaN.
pub fn fed_train(pool: &[ClientState], test: &[Sample], cfg: &FedConfig) -> Result<FedOutcome, FedError> {
    let channels = check_pool(pool)?;
    let (g, d) = init_models(channels, cfg.seed);
    fed_train_from(g, d, pool, test, cfg)
}

pub fn fed_train_from(
    mut g: ModelParams,
    mut d: ModelParams,
    pool: &[ClientState],
    test: &[Sample],
    cfg: &FedConfig,
) -> Result<FedOutcome, FedError> {
    check_pool(pool)?;
    let k = cfg.validate(pool.len())?;
    // private discriminators, used only with GeneratorOnly
    let mut own_d: Vec<ModelParams> = vec![d.clone(); pool.len()];
    let mut history = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        let selected = sample_clients(pool, k, round, cfg.seed)?;
        let mut updates = Vec::with_capacity(selected.len());
        for &id in &selected {
            let slot = pool.iter().position(|c| c.id == id).expect("sampled from pool");
            let local_cfg = TrainConfig { seed: local_seed(cfg.seed, round, id), ..cfg.train.clone() };
            let start_d = match cfg.scope {
                AggregationScope::Both => &d,
                AggregationScope::GeneratorOnly => &own_d[slot],
            };
            let u = local_update(&pool[slot], (&g, start_d), cfg.local_epochs, &local_cfg)?;
            updates.push((slot, u));
        }
        let sizes: Vec<usize> = updates.iter().map(|(slot, _)| pool[*slot].dataset_size()).collect();
        g = aggregate(&updates.iter().zip(&sizes).map(|((_, u), &n)| (&u.generator, n)).collect::<Vec<_>>())?;
        match cfg.scope {
            AggregationScope::Both => {
                d = aggregate(
                    &updates.iter().zip(&sizes).map(|((_, u), &n)| (&u.discriminator, n)).collect::<Vec<_>>(),
                )?;
            }
            AggregationScope::GeneratorOnly => {
                for (slot, u) in &updates {
                    own_d[*slot] = u.discriminator.clone();
                }
            }
        }
        let (test_mse, test_nmse) = test_metrics(&g, test)?;
        history.push(RoundMetrics {
            round,
            selected,
            test_mse,
            test_nmse,
            local: updates.iter().filter_map(|(_, u)| u.history.last().copied()).collect(),
        });
    }
    if cfg.scope == AggregationScope::GeneratorOnly {
        // report the size-weighted mean; clients keep their own
        let weighted: Vec<(&ModelParams, usize)> =
            own_d.iter().zip(pool).map(|(p, c)| (p, c.dataset_size())).collect();
        d = aggregate(&weighted)?;
    }
    Ok(FedOutcome { generator: g, discriminator: d, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{FeatureStack, Layout};
    use crate::grid::{GridMap, MapKind, Pixel};
    use proptest::prelude::*;
    use rand::Rng;

    fn params(values: Vec<f64>) -> ModelParams {
        // any layout works for aggregation; pad a real one
        let layout = Layout::discriminator(1);
        let mut v = values;
        v.resize(layout.param_count(), 0.0);
        ModelParams::new(layout, v).unwrap()
    }

    fn head(p: &ModelParams, n: usize) -> Vec<f64> {
        p.values()[..n].to_vec()
    }

    fn shard(n: usize, size: usize, seed: u64, bias: f64) -> Vec<Sample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let m_u = GridMap::from_fn(size, size, MapKind::Binary, |_, _| {
                    f64::from(u8::from(rng.random_bool(0.3)))
                })
                .unwrap();
                let m_t = GridMap::one_hot(size, size, &[Pixel::new(size / 2, size / 3)]).unwrap();
                let m_d =
                    GridMap::from_fn(size, size, MapKind::Depth, |_, _| rng.random_range(0.0..1.0)).unwrap();
                let target = GridMap::from_fn(size, size, MapKind::NormalizedPower, |x, y| {
                    0.8 * m_d.get(x, y) * (1.0 - m_u.get(x, y)) + bias
                })
                .unwrap();
                Sample { features: FeatureStack::new(m_u, m_t, m_d, Vec::new()).unwrap(), target }
            })
            .collect()
    }

    fn train_cfg() -> TrainConfig {
        TrainConfig { lr: 1e-3, batch: 4, work_resolution: 8, ..TrainConfig::default() }
    }

    #[test]
    fn weighted_means_by_hand() {
        let a = params(vec![1.0, 2.0]);
        let b = params(vec![3.0, 4.0]);
        assert_eq!(head(&aggregate(&[(&a, 5), (&b, 5)]).unwrap(), 2), vec![2.0, 3.0]);
        let z = params(vec![0.0, 0.0]);
        let f = params(vec![4.0, 4.0]);
        assert_eq!(head(&aggregate(&[(&z, 1), (&f, 3)]).unwrap(), 2), vec![3.0, 3.0]);
        assert_eq!(aggregate(&[(&a, 7)]).unwrap(), a);
        let c = params(vec![0.5, -1.0]);
        // 2/7·1 + 1/7·3 + 4/7·0.5 = 7/7; 2/7·2 + 1/7·4 + 4/7·(−1) = 4/7
        let m = aggregate(&[(&a, 2), (&b, 1), (&c, 4)]).unwrap();
        assert!((m.values()[0] - 1.0).abs() < 1e-15);
        assert!((m.values()[1] - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn aggregate_errors() {
        assert_eq!(aggregate(&[]), Err(FedError::EmptyUpdateSet));
        let a = params(vec![1.0]);
        let other = ModelParams::zeros(Layout::generator(3));
        assert!(matches!(aggregate(&[(&a, 1), (&other, 1)]), Err(FedError::LayoutMismatch(_))));
        assert!(matches!(aggregate(&[(&a, 0)]), Err(FedError::InvalidConfig(_))));
    }

    proptest! {
        #[test]
        fn aggregate_is_idempotent_and_scale_free(
            v in proptest::collection::vec(-10.0f64..10.0, 4),
            w in proptest::collection::vec(-10.0f64..10.0, 4),
            s1 in 1usize..50, s2 in 1usize..50, scale in 1usize..20,
        ) {
            let a = params(v.clone());
            let same = aggregate(&[(&a, s1), (&a, s2)]).unwrap();
            for (x, y) in head(&same, 4).iter().zip(&v) {
                prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
            }
            let b = params(w);
            let m1 = aggregate(&[(&a, s1), (&b, s2)]).unwrap();
            let m2 = aggregate(&[(&a, s1 * scale), (&b, s2 * scale)]).unwrap();
            let m3 = aggregate(&[(&b, s2), (&a, s1)]).unwrap();
            for i in 0..4 {
                prop_assert!((m1.values()[i] - m2.values()[i]).abs() < 1e-12);
                prop_assert!((m1.values()[i] - m3.values()[i]).abs() < 1e-12);
                let lo = a.values()[i].min(b.values()[i]) - 1e-12;
                let hi = a.values()[i].max(b.values()[i]) + 1e-12;
                prop_assert!(m1.values()[i] >= lo && m1.values()[i] <= hi);
            }
        }
    }

    fn pool(n: usize) -> Vec<ClientState> {
        (0..n).map(|i| ClientState::new(i, shard(1, 4, i as u64, 0.0)).unwrap()).collect()
    }

    #[test]
    fn full_pool_in_id_order() {
        let mut p = pool(4);
        p.reverse();
        assert_eq!(sample_clients(&p, 4, 3, 9).unwrap(), vec![0, 1, 2, 3]);
        assert_eq!(sample_clients(&p, 5, 0, 9), Err(FedError::KTooLarge { k: 5, pool: 4 }));
        let a = sample_clients(&p, 2, 17, 5).unwrap();
        assert_eq!(a, sample_clients(&p, 2, 17, 5).unwrap());
        assert_eq!(a.len(), 2);
        assert!(a[0] < a[1]);
    }

    #[test]
    fn client_selection_is_uniform() {
        let p = pool(4);
        let rounds = 10_000;
        let mut counts = [0usize; 4];
        for r in 0..rounds {
            for id in sample_clients(&p, 2, r, 42).unwrap() {
                counts[id] += 1;
            }
        }
        // each client is picked with probability 1/2 per round
        let sd = (rounds as f64 * 0.25).sqrt();
        for c in counts {
            assert!((c as f64 - 5000.0).abs() <= 3.0 * sd, "{counts:?}");
        }
    }

    #[test]
    fn local_seeds_differ() {
        let mut seen = std::collections::HashSet::new();
        for r in 0..20 {
            for c in 0..20 {
                assert!(seen.insert(local_seed(3, r, c)));
            }
        }
    }

    #[test]
    fn zero_local_epochs_return_the_global_copy() {
        let c = ClientState::new(0, shard(4, 8, 1, 0.1)).unwrap();
        let (g, d) = init_models(3, 2);
        let u = local_update(&c, (&g, &d), 0, &train_cfg()).unwrap();
        assert_eq!((&u.generator, &u.discriminator), (&g, &d));
        assert!(u.history.is_empty());
        let out = fed_train_from(
            g.clone(),
            d.clone(),
            &[c],
            &[],
            &FedConfig { rounds: 1, local_epochs: 0, train: train_cfg(), ..FedConfig::default() },
        )
        .unwrap();
        assert_eq!(out.generator, g);
        assert_eq!(out.discriminator, d);
    }

    #[test]
    fn identical_clients_agree() {
        let data = shard(4, 8, 1, 0.1);
        let (g, d) = init_models(3, 2);
        let cfg = TrainConfig { seed: 5, ..train_cfg() };
        let a = local_update(&ClientState::new(0, data.clone()).unwrap(), (&g, &d), 2, &cfg).unwrap();
        let b = local_update(&ClientState::new(1, data).unwrap(), (&g, &d), 2, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.generator, g);
        assert_eq!(a.history.len(), 2);
    }

    #[test]
    fn local_training_reduces_mse() {
        let c = ClientState::new(0, shard(8, 8, 4, 0.1)).unwrap();
        let (g, d) = init_models(3, 2);
        let before = crate::genmodel::dataset_mse(&g, &c.dataset).unwrap();
        let u = local_update(&c, (&g, &d), 2, &train_cfg()).unwrap();
        assert!(crate::genmodel::dataset_mse(&u.generator, &c.dataset).unwrap() < before);
    }

    #[test]
    fn single_client_matches_centralized_training() {
        let data = shard(6, 8, 7, 0.2);
        let cfg =
            FedConfig { rounds: 1, local_epochs: 3, seed: 11, train: train_cfg(), ..FedConfig::default() };
        let fed = fed_train(&[ClientState::new(4, data.clone()).unwrap()], &data, &cfg).unwrap();
        // fed_train initializes from cfg.seed and trains with the local seed
        let (g0, d0) = init_models(3, 11);
        let central_same_init =
            train_from(g0, d0, &data, &TrainConfig { epochs: 3, seed: local_seed(11, 0, 4), ..train_cfg() })
                .unwrap();
        assert_eq!(fed.generator, central_same_init.generator);
        assert_eq!(fed.discriminator, central_same_init.discriminator);
        assert_eq!(fed.history.len(), 1);
        let mse = crate::genmodel::dataset_mse(&fed.generator, &data).unwrap();
        assert_eq!(fed.history[0].test_mse.to_bits(), mse.to_bits());
    }

    #[test]
    fn deterministic_and_validated() {
        let p: Vec<ClientState> = (0..3)
            .map(|i| ClientState::new(i, shard(2 + i, 8, 20 + i as u64, 0.05 * i as f64)).unwrap())
            .collect();
        let cfg = FedConfig {
            rounds: 2,
            local_epochs: 1,
            clients_per_round: Some(2),
            seed: 3,
            train: train_cfg(),
            scope: AggregationScope::Both,
        };
        let a = fed_train(&p, &p[0].dataset, &cfg).unwrap();
        let b = fed_train(&p, &p[0].dataset, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a
            .history
            .iter()
            .all(|h| h.selected.len() == 2 && h.local.len() == 2 && h.test_mse.is_finite()));
        let bad = FedConfig { clients_per_round: Some(4), ..cfg.clone() };
        assert_eq!(fed_train(&p, &[], &bad), Err(FedError::KTooLarge { k: 4, pool: 3 }));
        assert!(matches!(
            fed_train(&p, &[], &FedConfig { rounds: 0, ..cfg.clone() }),
            Err(FedError::InvalidConfig(_))
        ));
        let dup = vec![p[0].clone(), p[0].clone()];
        assert_eq!(fed_train(&dup, &[], &cfg), Err(FedError::DuplicateClient(0)));
        assert_eq!(ClientState::new(9, Vec::new()), Err(FedError::EmptyClient(9)));
        assert!(fed_train(&[], &[], &cfg).is_err());
    }

    #[test]
    fn generator_only_keeps_discriminators_private() {
        let p: Vec<ClientState> = (0..2)
            .map(|i| ClientState::new(i, shard(3, 8, 40 + i as u64, 0.1 * i as f64)).unwrap())
            .collect();
        let base = FedConfig {
            rounds: 2,
            local_epochs: 1,
            clients_per_round: None,
            seed: 8,
            train: train_cfg(),
            scope: AggregationScope::GeneratorOnly,
        };
        let only_g = fed_train(&p, &[], &base).unwrap();
        let both = fed_train(&p, &[], &FedConfig { scope: AggregationScope::Both, ..base.clone() }).unwrap();
        // round 0 starts every client from the same discriminator either way
        assert_ne!(only_g.generator, both.generator);
        let one_round = FedConfig { rounds: 1, ..base };
        let a = fed_train(&p, &[], &one_round).unwrap();
        let b = fed_train(&p, &[], &FedConfig { scope: AggregationScope::Both, ..one_round }).unwrap();
        // with every client sampled, one round is the same under both scopes
        assert_eq!((a.generator, a.discriminator), (b.generator, b.discriminator));
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let c = ClientState::new(0, shard(2, 8, 1, 0.0)).unwrap();
        let (g, d) = init_models(4, 0);
        assert!(matches!(local_update(&c, (&g, &d), 1, &train_cfg()), Err(FedError::LayoutMismatch(_))));
    }
}
