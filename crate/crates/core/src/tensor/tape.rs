//! Reverse-mode differentiation over a linear record of operations.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for its gradient. Nodes are only ever appended, so the record is
//! always in topological order and [`Tape::backward`] is a single reverse
//! sweep.

use super::ops::{self, BnConfig, Mode, PoolKind, PoolSpec, RunningStats};
use super::{Real, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf { param: bool },
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize },
    BatchNorm { input: Var, gamma: Var, beta: Var, mean: Vec<F>, inv_std: Vec<F>, batch_stats: bool },
    Relu { input: Var },
    MaxPool { input: Var, argmax: Vec<usize> },
    AvgPool { input: Var, spec: PoolSpec },
    GlobalAvgPool { input: Var },
    Concat { inputs: Vec<Var> },
    Linear { input: Var, weight: Var, bias: Var },
    Softmax { input: Var },
    WeightedCrossEntropy { probs: Var, targets: Vec<usize>, weights: Vec<F> },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    /// Whether any parameter lies upstream of this node.
    needs_grad: bool,
}

/// Recorded computation graph.
pub struct Tape<F = f64> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: true }, true)
    }

    /// A leaf that receives no gradient (inputs, labels).
    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: false }, false)
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(input), self.value(kernel), bias.map(|b| self.value(b)), stride, padding)?;
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let needs = self.needs(&deps);
        Ok(self.push(out, Op::Conv2d { input, kernel, bias, stride, padding }, needs))
    }

    /// Batch norm; also returns the running statistics after this call.
    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats<F>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(Var, RunningStats<F>)> {
        let fwd = ops::batch_norm_forward(self.value(input), self.value(gamma), self.value(beta), running, mode, cfg)?;
        let needs = self.needs(&[input, gamma, beta]);
        let op = Op::BatchNorm {
            input,
            gamma,
            beta,
            mean: fwd.mean,
            inv_std: fwd.inv_std,
            batch_stats: mode == Mode::Train,
        };
        Ok((self.push(fwd.output, op, needs), fwd.stats))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = ops::relu(self.value(input));
        let needs = self.needs(&[input]);
        self.push(out, Op::Relu { input }, needs)
    }

    pub fn pool(
        &mut self,
        input: Var,
        kind: PoolKind,
        window: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let spec = PoolSpec { kind, window, stride, padding };
        let needs = self.needs(&[input]);
        match kind {
            PoolKind::Max => {
                let (out, argmax) = ops::max_pool(self.value(input), &spec)?;
                Ok(self.push(out, Op::MaxPool { input, argmax }, needs))
            }
            PoolKind::Avg => {
                let out = ops::pool(self.value(input), kind, window, stride, padding)?;
                Ok(self.push(out, Op::AvgPool { input, spec }, needs))
            }
        }
    }

    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        let out = ops::global_avg_pool(self.value(input))?;
        let needs = self.needs(&[input]);
        Ok(self.push(out, Op::GlobalAvgPool { input }, needs))
    }

    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<F>> = inputs.iter().map(|&v| self.value(v)).collect();
        let out = ops::concat_channels(&values)?;
        let needs = self.needs(inputs);
        Ok(self.push(out, Op::Concat { inputs: inputs.to_vec() }, needs))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear(self.value(input), self.value(weight), self.value(bias))?;
        let needs = self.needs(&[input, weight, bias]);
        Ok(self.push(out, Op::Linear { input, weight, bias }, needs))
    }

    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let out = ops::softmax(self.value(input))?;
        let needs = self.needs(&[input]);
        Ok(self.push(out, Op::Softmax { input }, needs))
    }

    /// Scalar batch-mean weighted cross-entropy of a probability matrix.
    pub fn weighted_cross_entropy(&mut self, probs: Var, targets: &[usize], weights: &[F]) -> Result<Var> {
        let loss = ops::weighted_cross_entropy(self.value(probs), targets, weights)?;
        let needs = self.needs(&[probs]);
        let op = Op::WeightedCrossEntropy { probs, targets: targets.to_vec(), weights: weights.to_vec() };
        Ok(self.push(Tensor::scalar(loss), op, needs))
    }

    /// Gradients of a scalar node with respect to every parameter leaf.
    ///
    /// Parameters with no path to `loss` receive a zero gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients<F>> {
        let loss_len = self.value(loss).len();
        if loss_len != 1 {
            return Err(TensorError::NotScalar { len: loss_len });
        }
        let mut grads: Vec<Option<Tensor<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::from_parts(self.value(loss).shape().to_vec(), vec![F::one()]));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf { .. }) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            let mut acc = |v: Var, g: Tensor<F>| {
                if !self.nodes[v.0].needs_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            };
            match &node.op {
                Op::Leaf { .. } => unreachable!(),
                &Op::Conv2d { input, kernel, bias, stride, padding } => {
                    let want_input = self.nodes[input.0].needs_grad;
                    let (dx, dk) =
                        ops::conv2d_backward(self.value(input), self.value(kernel), &gy, stride, padding, want_input)?;
                    if let Some(dx) = dx {
                        acc(input, dx);
                    }
                    acc(kernel, dk);
                    if let Some(b) = bias {
                        acc(b, ops::channel_sums(&gy)?);
                    }
                }
                Op::BatchNorm { input, gamma, beta, mean, inv_std, batch_stats } => {
                    let (dx, dg, db) = ops::batch_norm_backward(
                        self.value(*input),
                        self.value(*gamma),
                        mean,
                        inv_std,
                        &gy,
                        *batch_stats,
                    )?;
                    acc(*input, dx);
                    acc(*gamma, dg);
                    acc(*beta, db);
                }
                &Op::Relu { input } => acc(input, ops::relu_backward(self.value(input), &gy)),
                Op::MaxPool { input, argmax } => {
                    acc(*input, ops::max_pool_backward(self.value(*input).shape(), argmax, &gy))
                }
                Op::AvgPool { input, spec } => {
                    acc(*input, ops::avg_pool_backward(self.value(*input).shape(), spec, &gy)?)
                }
                &Op::GlobalAvgPool { input } => {
                    acc(input, ops::global_avg_pool_backward(self.value(input).shape(), &gy))
                }
                Op::Concat { inputs } => {
                    let mut start = 0;
                    for &v in inputs {
                        let c = self.value(v).shape()[1];
                        acc(v, ops::slice_channels(&gy, start, c)?);
                        start += c;
                    }
                }
                &Op::Linear { input, weight, bias } => {
                    let (dx, dw, db) = ops::linear_backward(self.value(input), self.value(weight), &gy)?;
                    acc(input, dx);
                    acc(weight, dw);
                    acc(bias, db);
                }
                &Op::Softmax { input } => acc(input, ops::softmax_backward(&node.value, &gy)),
                Op::WeightedCrossEntropy { probs, targets, weights } => {
                    let d = ops::weighted_cross_entropy_backward(self.value(*probs), targets, weights, gy.data()[0]);
                    acc(*probs, d);
                }
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { param: true }))
            .map(|(i, n)| {
                let g = grads[i].take().unwrap_or_else(|| n.value.zeros_like());
                (Var(i), g)
            })
            .collect();
        Ok(Gradients { params })
    }
}

/// Parameter gradients produced by [`Tape::backward`], in recording order.
#[derive(Debug, Clone)]
pub struct Gradients<F> {
    params: Vec<(Var, Tensor<F>)>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Tensor<F>> {
        self.params.binary_search_by_key(&v, |(var, _)| *var).ok().map(|i| &self.params[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Var, &Tensor<F>)> {
        self.params.iter().map(|(v, g)| (*v, g))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }
}
