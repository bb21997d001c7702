//! DenseNet topology with a global-average-pooling head.
//!
//! Stem: 7×7/2 conv → BN → ReLU → 3×3/2 max pool. Each dense layer is
//! BN → ReLU → 1×1 conv (bottleneck) → BN → ReLU → 3×3 conv (growth rate),
//! and its output is concatenated onto the block's feature stack. Transitions
//! compress channels with a 1×1 conv and halve resolution with a 2×2 average
//! pool. The head is BN → ReLU → global average pool → linear → softmax.
//!
//! Class order of the output is `(positive, negative)`.

mod checkpoint;
mod config;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use thiserror::Error;

use crate::tensor::{BnConfig, Eval, Graph, Mode, PoolKind, Real, RunningStats, Tensor, TensorError};

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, read_parameter_table, save_checkpoint, Checkpoint, NameMap,
    FORMAT_VERSION, MAGIC,
};
pub use config::{preset_config, DenseNetConfig, ParamCounts, PRESETS};

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown preset {0:?} (expected one of: densenet121-paper, tiny)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input batch {got:?} does not match network input {expected}")]
    InputShape { got: Vec<usize>, expected: String },
    #[error("parameter {name:?}: {detail}")]
    ParamMismatch { name: String, detail: String },
    #[error("checkpoint format: {0}")]
    Format(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u16, expected: u16 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NetworkError> = std::result::Result<T, E>;

/// A named parameter array. Batch-norm running statistics are non-trainable.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub trainable: bool,
}

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Zero-mean normal with variance 2/fan-in.
    He {
        fan_in: usize,
    },
    /// Uniform on ±1/√fan-in.
    Uniform {
        fan_in: usize,
    },
    Const(f64),
}

#[derive(Clone, Debug)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    init: Init,
}

#[derive(Clone, Copy, Debug)]
struct BnIds {
    gamma: usize,
    beta: usize,
    mean: usize,
    var: usize,
}

#[derive(Clone, Copy, Debug)]
struct DenseLayerIds {
    norm1: usize,
    conv1: usize,
    norm2: usize,
    conv2: usize,
}

#[derive(Clone, Copy, Debug)]
struct TransitionIds {
    norm: usize,
    conv: usize,
}

/// Indices into the parameter list, plus the batch-norm order used for
/// running-statistics updates.
#[derive(Clone, Debug)]
struct Layout {
    conv0: usize,
    norm0: usize,
    blocks: Vec<Vec<DenseLayerIds>>,
    transitions: Vec<TransitionIds>,
    norm_final: usize,
    fc_weight: usize,
    fc_bias: usize,
    norms: Vec<BnIds>,
}

struct Planner {
    specs: Vec<ParamSpec>,
    norms: Vec<BnIds>,
}

impl Planner {
    fn push(&mut self, name: String, shape: Vec<usize>, trainable: bool, init: Init) -> usize {
        self.specs.push(ParamSpec { name, shape, trainable, init });
        self.specs.len() - 1
    }

    fn conv(&mut self, prefix: &str, out_c: usize, in_c: usize, k: usize) -> usize {
        let fan_in = in_c * k * k;
        self.push(format!("{prefix}.weight"), vec![out_c, in_c, k, k], true, Init::He { fan_in })
    }

    fn norm(&mut self, prefix: &str, c: usize) -> usize {
        let ids = BnIds {
            gamma: self.push(format!("{prefix}.weight"), vec![c], true, Init::Const(1.0)),
            beta: self.push(format!("{prefix}.bias"), vec![c], true, Init::Const(0.0)),
            mean: self.push(format!("{prefix}.running_mean"), vec![c], false, Init::Const(0.0)),
            var: self.push(format!("{prefix}.running_var"), vec![c], false, Init::Const(1.0)),
        };
        self.norms.push(ids);
        self.norms.len() - 1
    }
}

fn plan(config: &DenseNetConfig) -> (Layout, Vec<ParamSpec>) {
    let mut p = Planner { specs: Vec::new(), norms: Vec::new() };
    let k = config.growth_rate;
    let bottleneck = config.bottleneck_factor * k;

    let conv0 = p.conv("features.conv0", config.init_features, config.input_channels, 7);
    let norm0 = p.norm("features.norm0", config.init_features);
    let mut channels = config.init_features;
    let mut blocks = Vec::new();
    let mut transitions = Vec::new();
    for (b, &layers) in config.block_layers.iter().enumerate() {
        let mut block = Vec::with_capacity(layers);
        for l in 0..layers {
            let prefix = format!("features.denseblock{}.denselayer{}", b + 1, l + 1);
            let in_c = channels + l * k;
            block.push(DenseLayerIds {
                norm1: p.norm(&format!("{prefix}.norm1"), in_c),
                conv1: p.conv(&format!("{prefix}.conv1"), bottleneck, in_c, 1),
                norm2: p.norm(&format!("{prefix}.norm2"), bottleneck),
                conv2: p.conv(&format!("{prefix}.conv2"), k, bottleneck, 3),
            });
        }
        blocks.push(block);
        channels += layers * k;
        if b + 1 < config.block_layers.len() {
            let prefix = format!("features.transition{}", b + 1);
            let out_c = config.transition_channels(channels);
            transitions.push(TransitionIds {
                norm: p.norm(&format!("{prefix}.norm"), channels),
                conv: p.conv(&format!("{prefix}.conv"), out_c, channels, 1),
            });
            channels = out_c;
        }
    }
    let norm_final = p.norm(&format!("features.norm{}", config.block_layers.len() + 1), channels);
    let fc_weight = p.push(
        "classifier.weight".into(),
        vec![channels, config.num_classes],
        true,
        Init::Uniform { fan_in: channels },
    );
    let fc_bias = p.push("classifier.bias".into(), vec![config.num_classes], true, Init::Const(0.0));
    let layout = Layout { conv0, norm0, blocks, transitions, norm_final, fc_weight, fc_bias, norms: p.norms };
    (layout, p.specs)
}

/// Output of a forward pass on any [`Graph`].
pub struct ForwardOutput<V, F> {
    /// `N×num_classes` class probabilities.
    pub probs: V,
    /// Running statistics after the pass, one entry per batch-norm layer.
    pub running: Vec<RunningStats<F>>,
    /// Handles of the trainable parameters, paired with their index in
    /// [`Network::params`].
    pub params: Vec<(usize, V)>,
    /// Output shape after each stage (stem, blocks, transitions, features).
    pub trace: Vec<(String, Vec<usize>)>,
}

/// Eval-graph forward result.
#[derive(Clone, Debug)]
pub struct Forward<F> {
    pub probs: Tensor<F>,
    pub running: Vec<RunningStats<F>>,
    pub trace: Vec<(String, Vec<usize>)>,
}

#[derive(Clone, Debug)]
pub struct Network<F = f32> {
    config: DenseNetConfig,
    params: Vec<Param<F>>,
    index: HashMap<String, usize>,
    layout: Layout,
}

/// Builds a network from `config` with seeded random initialization.
pub fn build_network<F: Real>(config: &DenseNetConfig, seed: u64) -> Result<Network<F>> {
    Network::build(config, seed)
}

impl<F: Real> Network<F> {
    pub fn build(config: &DenseNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = specs
            .into_iter()
            .map(|spec| {
                let n: usize = spec.shape.iter().product();
                let data: Vec<F> = match spec.init {
                    Init::He { fan_in } => {
                        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                        (0..n).map(|_| F::from_f64(dist.sample(&mut rng))).collect()
                    }
                    Init::Uniform { fan_in } => {
                        let bound = 1.0 / (fan_in as f64).sqrt();
                        let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                        (0..n).map(|_| F::from_f64(dist.sample(&mut rng))).collect()
                    }
                    Init::Const(v) => vec![F::from_f64(v); n],
                };
                Param { value: Tensor::from_parts(spec.shape, data), name: spec.name, trainable: spec.trainable }
            })
            .collect();
        Ok(Self::assemble(config.clone(), layout, params))
    }

    /// Builds from explicit parameter arrays, which must match the config's
    /// plan name by name and shape by shape.
    pub fn from_params(config: &DenseNetConfig, values: Vec<(String, Tensor<F>)>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = plan(config);
        check_table(&specs, values.iter().map(|(n, t)| (n.as_str(), t.shape())))?;
        let params = specs
            .into_iter()
            .zip(values)
            .map(|(spec, (name, value))| Param { name, value, trainable: spec.trainable })
            .collect();
        Ok(Self::assemble(config.clone(), layout, params))
    }

    fn assemble(config: DenseNetConfig, layout: Layout, params: Vec<Param<F>>) -> Self {
        let index = params.iter().enumerate().map(|(i, p)| (p.name.clone(), i)).collect();
        Network { config, params, index, layout }
    }

    pub fn config(&self) -> &DenseNetConfig {
        &self.config
    }

    pub fn params(&self) -> &[Param<F>] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Param<F>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    /// Replaces one parameter's values; the shape must not change.
    pub fn set_param(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let i = *self.index.get(name).ok_or_else(|| NetworkError::ParamMismatch {
            name: name.to_string(),
            detail: "no such parameter".into(),
        })?;
        let slot = &mut self.params[i].value;
        if slot.shape() != value.shape() {
            return Err(NetworkError::ParamMismatch {
                name: name.to_string(),
                detail: format!("shape {:?}, expected {:?}", value.shape(), slot.shape()),
            });
        }
        *slot = value;
        Ok(())
    }

    /// Mutable values of the trainable parameters, in parameter order.
    pub(crate) fn trainable_values_mut(&mut self) -> Vec<&mut Tensor<F>> {
        self.params.iter_mut().filter(|p| p.trainable).map(|p| &mut p.value).collect()
    }

    /// `(trainable, non-trainable)` scalar counts of the built parameters.
    pub fn count_parameters(&self) -> ParamCounts {
        let mut counts = ParamCounts::default();
        for p in &self.params {
            if p.trainable {
                counts.trainable += p.value.len();
            } else {
                counts.non_trainable += p.value.len();
            }
        }
        counts
    }

    /// Copies the network into another precision.
    pub fn cast<G: Real>(&self) -> Network<G> {
        Network {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|p| Param { name: p.name.clone(), value: p.value.cast(), trainable: p.trainable })
                .collect(),
            index: self.index.clone(),
            layout: self.layout.clone(),
        }
    }

    fn running_stats(&self, ids: &BnIds) -> RunningStats<F> {
        RunningStats {
            mean: self.params[ids.mean].value.data().to_vec(),
            var: self.params[ids.var].value.data().to_vec(),
        }
    }

    /// Writes back running statistics returned by a train-mode forward pass.
    pub fn apply_running_stats(&mut self, running: Vec<RunningStats<F>>) -> Result<()> {
        if running.len() != self.layout.norms.len() {
            return Err(NetworkError::InvalidConfig(format!(
                "{} running-stat entries for {} batch-norm layers",
                running.len(),
                self.layout.norms.len()
            )));
        }
        for (ids, stats) in self.layout.norms.clone().iter().zip(running) {
            let c = self.params[ids.mean].value.len();
            if stats.mean.len() != c || stats.var.len() != c {
                return Err(NetworkError::ParamMismatch {
                    name: self.params[ids.mean].name.clone(),
                    detail: format!("{} running values for {c} channels", stats.mean.len()),
                });
            }
            self.params[ids.mean].value.data_mut().copy_from_slice(&stats.mean);
            self.params[ids.var].value.data_mut().copy_from_slice(&stats.var);
        }
        Ok(())
    }

    fn check_input(&self, batch: &Tensor<F>) -> Result<()> {
        let c = &self.config;
        match *batch.shape() {
            [_, ch, h, w] if ch == c.input_channels && h == c.input_size && w == c.input_size => Ok(()),
            _ => Err(NetworkError::InputShape {
                got: batch.shape().to_vec(),
                expected: format!("N×{}×{}×{}", c.input_channels, c.input_size, c.input_size),
            }),
        }
    }

    /// Runs the network on `graph`. `batch` is `N×C×S×S`.
    pub fn forward_graph<'a, G: Graph<'a, F>>(
        &'a self,
        graph: &mut G,
        batch: Tensor<F>,
        mode: Mode,
    ) -> Result<ForwardOutput<G::Value, F>> {
        self.check_input(&batch)?;
        let bn_cfg = BnConfig { eps: self.config.bn_eps, momentum: self.config.bn_momentum };
        let lay = &self.layout;

        let mut handles: Vec<Option<G::Value>> = (0..self.params.len()).map(|_| None).collect();
        let mut order = Vec::new();
        for (i, p) in self.params.iter().enumerate() {
            if p.trainable {
                handles[i] = Some(graph.param(&p.value));
                order.push(i);
            }
        }
        let h = |i: usize| handles[i].as_ref().expect("trainable parameter handle");
        let mut running = vec![None; lay.norms.len()];
        let mut trace = Vec::new();

        // BN → ReLU
        let mut norm_relu = |g: &mut G, x: &G::Value, which: usize| -> Result<G::Value> {
            let ids = lay.norms[which];
            let (y, stats) = g.batch_norm(x, h(ids.gamma), h(ids.beta), &self.running_stats(&ids), mode, bn_cfg)?;
            running[which] = Some(stats);
            Ok(g.relu(&y))
        };

        let x = graph.input(batch);
        let y = graph.conv2d(&x, h(lay.conv0), 2, 3)?;
        let y = norm_relu(graph, &y, lay.norm0)?;
        let mut stack = graph.pool(&y, PoolKind::Max, (3, 3), 2, 1)?;
        trace.push(("stem".to_string(), graph.value(&stack).shape().to_vec()));

        for (b, block) in lay.blocks.iter().enumerate() {
            for layer in block {
                let y = norm_relu(graph, &stack, layer.norm1)?;
                let y = graph.conv2d(&y, h(layer.conv1), 1, 0)?;
                let y = norm_relu(graph, &y, layer.norm2)?;
                let y = graph.conv2d(&y, h(layer.conv2), 1, 1)?;
                stack = graph.concat_channels(&[&stack, &y])?;
            }
            trace.push((format!("denseblock{}", b + 1), graph.value(&stack).shape().to_vec()));
            if let Some(t) = lay.transitions.get(b) {
                let y = norm_relu(graph, &stack, t.norm)?;
                let y = graph.conv2d(&y, h(t.conv), 1, 0)?;
                stack = graph.pool(&y, PoolKind::Avg, (2, 2), 2, 0)?;
                trace.push((format!("transition{}", b + 1), graph.value(&stack).shape().to_vec()));
            }
        }

        let features = norm_relu(graph, &stack, lay.norm_final)?;
        trace.push(("features".to_string(), graph.value(&features).shape().to_vec()));
        let pooled = graph.global_avg_pool(&features)?;
        let logits = graph.linear(&pooled, h(lay.fc_weight), h(lay.fc_bias))?;
        let probs = graph.softmax(&logits)?;

        let running = running.into_iter().map(|s| s.expect("every batch norm ran")).collect();
        let params = order.into_iter().map(|i| (i, handles[i].take().expect("handle"))).collect();
        Ok(ForwardOutput { probs, running, params, trace })
    }

    /// Forward pass without recording gradients.
    pub fn forward(&self, batch: Tensor<F>, mode: Mode) -> Result<Forward<F>> {
        let mut eval = Eval;
        let out = self.forward_graph(&mut eval, batch, mode)?;
        Ok(Forward { probs: out.probs.into_owned(), running: out.running, trace: out.trace })
    }
}

fn check_table<'n>(specs: &[ParamSpec], table: impl ExactSizeIterator<Item = (&'n str, &'n [usize])>) -> Result<()> {
    let found = table.len();
    for (i, (name, shape)) in table.enumerate() {
        let Some(spec) = specs.get(i) else {
            return Err(NetworkError::ParamMismatch {
                name: name.to_string(),
                detail: format!("unexpected extra parameter (config defines {})", specs.len()),
            });
        };
        if spec.name != name {
            return Err(NetworkError::ParamMismatch {
                name: spec.name.clone(),
                detail: format!("expected at position {i}, found {name:?}"),
            });
        }
        if spec.shape != shape {
            return Err(NetworkError::ParamMismatch {
                name: spec.name.clone(),
                detail: format!("shape {shape:?}, config implies {:?}", spec.shape),
            });
        }
    }
    if found < specs.len() {
        return Err(NetworkError::ParamMismatch { name: specs[found].name.clone(), detail: "missing".into() });
    }
    Ok(())
}
