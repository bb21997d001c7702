use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::examples::{assemble_batch, Examples, CLASS_POSITIVE};
use super::history::{EpochRecord, TrainHistory};
use super::loss::ClassWeights;
use super::normalize::{moments, Normalization, NormalizationMode};
use super::{Result, TrainError};
use crate::network::{Checkpoint, Network, NetworkError};
use crate::tensor::{ops, Mode, Tape, Tensor, TensorError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub seed: u64,
    pub normalization: NormalizationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 15,
            batch_size: 20,
            learning_rate: 1e-4,
            adam: AdamConfig::default(),
            seed: 0,
            normalization: NormalizationMode::PerImage,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(TrainError::InvalidConfig("epochs and batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(TrainError::InvalidConfig("adam betas must lie in [0,1) and eps be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the least-validation-loss epoch.
    pub best: Checkpoint,
    pub history: TrainHistory,
    /// Normalization the network was trained with; evaluation must reuse it.
    pub normalization: Normalization,
    /// Parameters after the last epoch.
    pub last: Network<f32>,
}

/// Mini-batch Adam on the weighted loss. Each epoch reshuffles the training
/// examples with a generator seeded by `(seed, epoch)`; the final short batch
/// is kept. `on_epoch` sees every finished epoch. A non-finite value aborts
/// with its 1-based epoch and batch (batch 0 for validation).
pub fn train(
    mut network: Network<f32>,
    train_set: &dyn Examples,
    val_set: &dyn Examples,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let normalization = match cfg.normalization {
        NormalizationMode::PerImage => Normalization::PerImage,
        NormalizationMode::Dataset => dataset_normalization(train_set)?,
    };
    let channels = network.config().input_channels;
    let class_w = weights.per_class().map(|w| w as f32);

    let mut adam = {
        let values: Vec<&Tensor<f32>> = network.params().iter().filter(|p| p.trainable).map(|p| &p.value).collect();
        AdamState::new(values)
    };
    let mut history = TrainHistory::default();
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0f64;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let non_finite = || TrainError::NonFinite { epoch, batch: b + 1 };
            let (x, targets) = assemble_batch(train_set, chunk, &normalization, channels)?;
            let step = || -> Result<_> {
                let mut tape = Tape::<f32>::new();
                let out = network.forward_graph(&mut tape, x, Mode::Train)?;
                let loss = tape.weighted_cross_entropy(out.probs, &targets, &class_w)?;
                let value = tape.value(loss).data()[0];
                let g = tape.backward(loss)?;
                let grads: Vec<Tensor<f32>> = out
                    .params
                    .iter()
                    .map(|(_, v)| g.get(*v).cloned().unwrap_or_else(|| tape.value(*v).zeros_like()))
                    .collect();
                Ok((value, grads, out.running))
            };
            let (loss, grads, running) = step().map_err(|e| if is_non_finite(&e) { non_finite() } else { e })?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(non_finite());
            }
            let grad_refs: Vec<&Tensor<f32>> = grads.iter().collect();
            adam_step(&mut network.trainable_values_mut(), &grad_refs, &mut adam, cfg.learning_rate, &cfg.adam)?;
            network.apply_running_stats(running)?;
            loss_sum += loss as f64 * chunk.len() as f64;
        }

        let val_loss = evaluate_loss(&network, val_set, &normalization, cfg.batch_size, &class_w).map_err(|e| {
            if is_non_finite(&e) {
                TrainError::NonFinite { epoch, batch: 0 }
            } else {
                e
            }
        })?;
        let record = EpochRecord { epoch, train_loss: loss_sum / train_set.len() as f64, val_loss };
        history.epochs.push(record);
        on_epoch(&record);
        if best.as_ref().is_none_or(|b| val_loss < b.val_loss) {
            best = Some(Checkpoint {
                network: network.clone(),
                epoch,
                val_loss,
                seed: cfg.seed,
                meta: vec![(Normalization::HEADER_KEY.into(), normalization.to_header())],
            });
        }
    }

    Ok(TrainOutcome { best: best.expect("at least one epoch"), history, normalization, last: network })
}

fn is_non_finite(e: &TrainError) -> bool {
    matches!(
        e,
        TrainError::Tensor(TensorError::NonFinite { .. })
            | TrainError::Network(NetworkError::Tensor(TensorError::NonFinite { .. }))
    )
}

fn dataset_normalization(set: &dyn Examples) -> Result<Normalization> {
    let mut pixels = Vec::new();
    for i in 0..set.len() {
        pixels.extend_from_slice(set.image(i)?.data());
    }
    let (mean, std, _) = moments(pixels.into_iter());
    Ok(Normalization::Dataset { mean, std })
}

/// Example-weighted mean of the weighted loss in eval mode.
fn evaluate_loss(
    network: &Network<f32>,
    set: &dyn Examples,
    normalization: &Normalization,
    batch_size: usize,
    class_w: &[f32; 2],
) -> Result<f64> {
    let channels = network.config().input_channels;
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut total = 0.0f64;
    for chunk in indices.chunks(batch_size) {
        let (x, targets) = assemble_batch(set, chunk, normalization, channels)?;
        let probs = network.forward(x, Mode::Eval)?.probs;
        let loss = ops::weighted_cross_entropy(&probs, &targets, class_w)?;
        total += loss as f64 * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Positive-class probabilities in eval mode, one per example in order.
pub fn predict(
    network: &Network<f32>,
    set: &dyn Examples,
    normalization: &Normalization,
    batch_size: usize,
) -> Result<Vec<f64>> {
    let channels = network.config().input_channels;
    let classes = network.config().num_classes;
    let indices: Vec<usize> = (0..set.len()).collect();
    let mut scores = Vec::with_capacity(set.len());
    for chunk in indices.chunks(batch_size.max(1)) {
        let (x, _) = assemble_batch(set, chunk, normalization, channels)?;
        let probs = network.forward(x, Mode::Eval)?.probs;
        scores.extend(probs.data().chunks(classes).map(|row| row[CLASS_POSITIVE] as f64));
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::preset_config;
    use crate::training::{class_weights, InMemory};
    use rand::Rng;

    /// Bright-centre positives against dim negatives; trivially separable.
    fn toy(n: usize, seed: u64, side: usize) -> InMemory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut set = InMemory::default();
        for i in 0..n {
            let positive = i % 4 == 0;
            let data = (0..side * side)
                .map(|p| {
                    let (x, y) = ((p % side) as f32, (p / side) as f32);
                    let c = side as f32 / 2.0;
                    let blob = positive && (x - c).powi(2) + (y - c).powi(2) < 16.0;
                    0.3 + rng.random_range(0.0..0.1) + if blob { 0.5 } else { 0.0 }
                })
                .collect();
            set.images.push(Tensor::new([1, side, side], data).unwrap());
            set.labels.push(positive);
        }
        set
    }

    fn small_config() -> crate::network::DenseNetConfig {
        let mut c = preset_config("tiny").unwrap();
        c.input_size = 16;
        c
    }

    #[test]
    fn training_is_deterministic_and_tracks_best() {
        let (tr, va) = (toy(24, 1, 16), toy(8, 2, 16));
        let cfg = TrainConfig { epochs: 3, batch_size: 5, learning_rate: 1e-2, seed: 4, ..TrainConfig::default() };
        let (p, n) = tr.counts();
        let w = class_weights(p, n).unwrap();
        let run = || {
            let net = Network::build(&small_config(), 4).unwrap();
            let mut seen = Vec::new();
            let out = train(net, &tr, &va, &cfg, &w, &mut |r| seen.push(*r)).unwrap();
            assert_eq!(seen, out.history.epochs);
            out
        };
        let (a, b) = (run(), run());
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.to_bytes(), b.best.to_bytes());
        assert_eq!(a.history.epochs.len(), 3);
        assert_eq!(Some(a.best.epoch), a.history.best_epoch());
        assert_eq!(a.best.val_loss, a.history.epochs[a.best.epoch - 1].val_loss);
        assert_ne!(a.last.params(), Network::<f32>::build(&small_config(), 4).unwrap().params());
    }

    #[test]
    fn loss_goes_down_on_separable_data() {
        let (tr, va) = (toy(40, 3, 16), toy(16, 5, 16));
        let cfg = TrainConfig { epochs: 6, batch_size: 8, learning_rate: 1e-2, seed: 1, ..TrainConfig::default() };
        let (p, n) = tr.counts();
        let out = train(
            Network::build(&small_config(), 1).unwrap(),
            &tr,
            &va,
            &cfg,
            &class_weights(p, n).unwrap(),
            &mut |_| {},
        )
        .unwrap();
        let first = out.history.epochs.first().unwrap().train_loss;
        let last = out.history.epochs.last().unwrap().train_loss;
        assert!(last < first, "{first} -> {last}");
        let scores = predict(&out.best.network, &va, &out.normalization, 7).unwrap();
        assert_eq!(scores.len(), 16);
        assert!(scores.iter().all(|s| (0.0..=1.0).contains(s)));
    }

    #[test]
    fn empty_split_and_bad_config_rejected() {
        let net = Network::build(&small_config(), 0).unwrap();
        let w = class_weights(1, 1).unwrap();
        let empty = InMemory::default();
        let tr = toy(4, 0, 16);
        assert!(matches!(
            train(net.clone(), &tr, &empty, &TrainConfig::default(), &w, &mut |_| {}),
            Err(TrainError::EmptySplit("validation"))
        ));
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(matches!(train(net, &tr, &tr, &bad, &w, &mut |_| {}), Err(TrainError::InvalidConfig(_))));
    }

    #[test]
    fn diverging_run_reports_epoch_and_batch() {
        let (tr, va) = (toy(10, 1, 16), toy(4, 2, 16));
        let cfg = TrainConfig { epochs: 2, batch_size: 5, learning_rate: 1e30, ..TrainConfig::default() };
        let w = class_weights(3, 7).unwrap();
        match train(Network::build(&small_config(), 0).unwrap(), &tr, &va, &cfg, &w, &mut |_| {}) {
            Err(TrainError::NonFinite { epoch, batch }) => assert!(epoch >= 1 && batch <= 2),
            other => panic!("expected a non-finite error, got {:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn dataset_mode_records_training_moments() {
        let (tr, va) = (toy(8, 1, 16), toy(4, 2, 16));
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 4,
            normalization: NormalizationMode::Dataset,
            ..TrainConfig::default()
        };
        let out = train(
            Network::build(&small_config(), 0).unwrap(),
            &tr,
            &va,
            &cfg,
            &class_weights(2, 6).unwrap(),
            &mut |_| {},
        )
        .unwrap();
        let Normalization::Dataset { mean, std } = out.normalization else { panic!("dataset mode") };
        let (m, s, _) = moments(tr.images.iter().flat_map(|t| t.data().iter().copied()));
        assert_eq!((mean, std), (m, s));
    }
}
