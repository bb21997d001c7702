//! One network definition, two execution strategies.
//!
//! [`Eval`] runs operations directly on tensors and drops intermediates as
//! soon as they go out of scope. [`Tape`] records them for differentiation.

use std::borrow::Cow;

use super::ops::{self, BnConfig, Mode, PoolKind, RunningStats};
use super::{Real, Result, Tape, Tensor, Var};

pub trait Graph<'a, F: Real> {
    type Value;

    /// Introduces a trainable parameter owned by the caller.
    fn param(&mut self, value: &'a Tensor<F>) -> Self::Value;
    /// Introduces a non-differentiable input.
    fn input(&mut self, value: Tensor<F>) -> Self::Value;
    fn value<'v>(&'v self, v: &'v Self::Value) -> &'v Tensor<F>;

    fn conv2d(&mut self, x: &Self::Value, kernel: &Self::Value, stride: usize, padding: usize) -> Result<Self::Value>;
    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        running: &RunningStats<F>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(Self::Value, RunningStats<F>)>;
    fn relu(&mut self, x: &Self::Value) -> Self::Value;
    fn pool(
        &mut self,
        x: &Self::Value,
        kind: PoolKind,
        window: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value>;
    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value>;
    fn linear(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value>;
}

/// Direct evaluation without recording.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl<'a, F: Real> Graph<'a, F> for Eval {
    type Value = Cow<'a, Tensor<F>>;

    fn param(&mut self, value: &'a Tensor<F>) -> Self::Value {
        Cow::Borrowed(value)
    }

    fn input(&mut self, value: Tensor<F>) -> Self::Value {
        Cow::Owned(value)
    }

    fn value<'v>(&'v self, v: &'v Self::Value) -> &'v Tensor<F> {
        v
    }

    fn conv2d(&mut self, x: &Self::Value, kernel: &Self::Value, stride: usize, padding: usize) -> Result<Self::Value> {
        ops::conv2d(x, kernel, None, stride, padding).map(Cow::Owned)
    }

    fn batch_norm(
        &mut self,
        x: &Self::Value,
        gamma: &Self::Value,
        beta: &Self::Value,
        running: &RunningStats<F>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(Self::Value, RunningStats<F>)> {
        ops::batch_norm(x, gamma, beta, running, mode, cfg).map(|(y, s)| (Cow::Owned(y), s))
    }

    fn relu(&mut self, x: &Self::Value) -> Self::Value {
        Cow::Owned(ops::relu(x))
    }

    fn pool(
        &mut self,
        x: &Self::Value,
        kind: PoolKind,
        window: (usize, usize),
        stride: usize,
        padding: usize,
    ) -> Result<Self::Value> {
        ops::pool(x, kind, window, stride, padding).map(Cow::Owned)
    }

    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::global_avg_pool(x).map(Cow::Owned)
    }

    fn concat_channels(&mut self, xs: &[&Self::Value]) -> Result<Self::Value> {
        let refs: Vec<&Tensor<F>> = xs.iter().map(|v| v.as_ref()).collect();
        ops::concat_channels(&refs).map(Cow::Owned)
    }

    fn linear(&mut self, x: &Self::Value, weight: &Self::Value, bias: &Self::Value) -> Result<Self::Value> {
        ops::linear(x, weight, bias).map(Cow::Owned)
    }

    fn softmax(&mut self, x: &Self::Value) -> Result<Self::Value> {
        ops::softmax(x).map(Cow::Owned)
    }
}

impl<'a, F: Real> Graph<'a, F> for Tape<F> {
    type Value = Var;

    fn param(&mut self, value: &'a Tensor<F>) -> Var {
        Tape::param(self, value.clone())
    }

    fn input(&mut self, value: Tensor<F>) -> Var {
        self.constant(value)
    }

    fn value<'v>(&'v self, v: &'v Var) -> &'v Tensor<F> {
        Tape::value(self, *v)
    }

    fn conv2d(&mut self, x: &Var, kernel: &Var, stride: usize, padding: usize) -> Result<Var> {
        Tape::conv2d(self, *x, *kernel, None, stride, padding)
    }

    fn batch_norm(
        &mut self,
        x: &Var,
        gamma: &Var,
        beta: &Var,
        running: &RunningStats<F>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<(Var, RunningStats<F>)> {
        Tape::batch_norm(self, *x, *gamma, *beta, running, mode, cfg)
    }

    fn relu(&mut self, x: &Var) -> Var {
        Tape::relu(self, *x)
    }

    fn pool(&mut self, x: &Var, kind: PoolKind, window: (usize, usize), stride: usize, padding: usize) -> Result<Var> {
        Tape::pool(self, *x, kind, window, stride, padding)
    }

    fn global_avg_pool(&mut self, x: &Var) -> Result<Var> {
        Tape::global_avg_pool(self, *x)
    }

    fn concat_channels(&mut self, xs: &[&Var]) -> Result<Var> {
        let vars: Vec<Var> = xs.iter().map(|v| **v).collect();
        Tape::concat_channels(self, &vars)
    }

    fn linear(&mut self, x: &Var, weight: &Var, bias: &Var) -> Result<Var> {
        Tape::linear(self, *x, *weight, *bias)
    }

    fn softmax(&mut self, x: &Var) -> Result<Var> {
        Tape::softmax(self, *x)
    }
}
