//! Pure tensor kernels: forward operations and their gradient counterparts.
//!
//! Everything here is a function of its arguments. Reductions run in a fixed
//! order so results are bitwise reproducible for a given input.

use super::{gemm, Real, Result, Tensor, TensorError};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_CLAMP: f64 = 1e-7;

/// Output extent of a sliding window, `⌊(len + 2·pad − k)/stride⌋ + 1`.
pub fn window_extent(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || k == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

fn out_extents(
    op: &'static str,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(TensorError::InvalidArgument { op, detail: "stride must be positive".into() });
    }
    match (window_extent(h, kh, stride, pad), window_extent(w, kw, stride, pad)) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(TensorError::EmptyOutput {
            op,
            detail: format!("input {h}×{w}, window {kh}×{kw}, stride {stride}, padding {pad}"),
        }),
    }
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Expands one sample (`C×H×W`) into a `(C·kH·kW) × (OH·OW)` patch matrix.
fn im2col<F: Real>(x: &[F], g: &ConvGeom, cols: &mut [F]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        let src = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        *v = if ix < 0 || ix >= g.w as isize { F::zero() } else { src_row[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Scatter-adds a patch matrix back onto one `C×H×W` sample.
fn col2im<F: Real>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let plane = g.oh * g.ow;
    for ci in 0..g.c {
        let dst = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (ci * g.kh + ki) * g.kw + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_geometry<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize, ConvGeom)> {
    const OP: &str = "conv2d";
    let (n, c, h, w) = input.dims4(OP)?;
    let (oc, ic, kh, kw) = kernel.dims4(OP)?;
    if ic != c {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("input has {c} channels, kernel expects {ic}"),
        });
    }
    let (oh, ow) = out_extents(OP, h, w, kh, kw, stride, padding)?;
    Ok((n, oc, ConvGeom { c, h, w, kh, kw, stride, pad: padding, oh, ow }))
}

/// 2-D cross-correlation of an `N×C×H×W` input with an `OC×C×kH×kW` kernel.
pub fn conv2d<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let (n, oc, g) = conv_geometry(input, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != oc {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                detail: format!("bias has {} values for {oc} output channels", b.len()),
            });
        }
    }
    let plane = g.oh * g.ow;
    let k = g.patch_len();
    let in_len = g.c * g.h * g.w;
    let mut out = vec![F::zero(); n * oc * plane];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![F::zero(); k * plane] };
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let patches: &[F] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        let y = &mut out[s * oc * plane..(s + 1) * oc * plane];
        gemm(oc, k, plane, kernel.data(), false, patches, false, F::zero(), y);
        if let Some(b) = bias {
            for (o, chunk) in y.chunks_mut(plane).enumerate() {
                let bo = b.data()[o];
                chunk.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    Tensor::from_parts(vec![n, oc, g.oh, g.ow], out).ensure_finite("conv2d")
}

/// Gradients of `conv2d` with respect to its input (when requested) and kernel.
pub(crate) fn conv2d_backward<F: Real>(
    input: &Tensor<F>,
    kernel: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
    want_input: bool,
) -> Result<(Option<Tensor<F>>, Tensor<F>)> {
    let (n, oc, g) = conv_geometry(input, kernel, stride, padding)?;
    let plane = g.oh * g.ow;
    let k = g.patch_len();
    let in_len = g.c * g.h * g.w;
    let mut dk = kernel.zeros_like();
    let mut dx = want_input.then(|| input.zeros_like());
    let mut cols = vec![F::zero(); k * plane];
    let mut dcols = if want_input { vec![F::zero(); k * plane] } else { Vec::new() };
    for s in 0..n {
        let x = &input.data()[s * in_len..(s + 1) * in_len];
        let gy = &grad_out.data()[s * oc * plane..(s + 1) * oc * plane];
        let patches: &[F] = if g.is_pointwise() {
            x
        } else {
            im2col(x, &g, &mut cols);
            &cols
        };
        gemm(oc, plane, k, gy, false, patches, true, F::one(), dk.data_mut());
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * in_len..(s + 1) * in_len];
            if g.is_pointwise() {
                gemm(k, oc, plane, kernel.data(), true, gy, false, F::one(), dxs);
            } else {
                gemm(k, oc, plane, kernel.data(), true, gy, false, F::zero(), &mut dcols);
                col2im(&dcols, &g, dxs);
            }
        }
    }
    Ok((dx, dk))
}

/// Sum of `grad_out` over batch and spatial positions, per channel.
pub(crate) fn channel_sums<F: Real>(grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = grad_out.dims4("conv2d bias")?;
    let plane = h * w;
    let mut sums = vec![F::zero(); c];
    for s in 0..n {
        for (ci, sum) in sums.iter_mut().enumerate() {
            let base = (s * c + ci) * plane;
            for &v in &grad_out.data()[base..base + plane] {
                *sum += v;
            }
        }
    }
    Ok(Tensor::from_parts(vec![c], sums))
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Batch-norm constants. Running statistics update as
/// `new = momentum·old + (1 − momentum)·batch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub eps: f64,
    pub momentum: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        BnConfig { eps: 1e-5, momentum: 0.9 }
    }
}

/// Per-channel running mean and (biased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<F> {
    pub mean: Vec<F>,
    pub var: Vec<F>,
}

impl<F: Real> RunningStats<F> {
    pub fn identity(channels: usize) -> Self {
        RunningStats { mean: vec![F::zero(); channels], var: vec![F::one(); channels] }
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub(crate) struct BnForward<F> {
    pub output: Tensor<F>,
    pub stats: RunningStats<F>,
    /// Centre used for normalization (batch or running mean).
    pub mean: Vec<F>,
    /// `1/√(var + eps)` used for normalization.
    pub inv_std: Vec<F>,
}

/// Normalizes each channel of an `N×C×H×W` tensor, then scales by `gamma`
/// and shifts by `beta`. Returns the output and the running statistics after
/// this call (updated in train mode, unchanged in eval mode).
pub fn batch_norm<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: &RunningStats<F>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<(Tensor<F>, RunningStats<F>)> {
    let fwd = batch_norm_forward(input, gamma, beta, running, mode, cfg)?;
    Ok((fwd.output, fwd.stats))
}

pub(crate) fn batch_norm_forward<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running: &RunningStats<F>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<BnForward<F>> {
    const OP: &str = "batch_norm";
    let (n, c, h, w) = input.dims4(OP)?;
    if cfg.eps.is_nan() || cfg.eps <= 0.0 {
        return Err(TensorError::InvalidArgument { op: OP, detail: format!("eps = {}", cfg.eps) });
    }
    if gamma.len() != c || beta.len() != c || running.mean.len() != c || running.var.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!(
                "{c} channels, gamma {}, beta {}, running stats {}/{}",
                gamma.len(),
                beta.len(),
                running.mean.len(),
                running.var.len()
            ),
        });
    }
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();

    let (mean, var, stats) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for ci in 0..c {
                let mut sum = 0.0;
                for s in 0..n {
                    let base = (s * c + ci) * plane;
                    sum += x[base..base + plane].iter().map(|v| v.as_f64()).sum::<f64>();
                }
                let mu = sum / count;
                let mut sq = 0.0;
                for s in 0..n {
                    let base = (s * c + ci) * plane;
                    sq += x[base..base + plane]
                        .iter()
                        .map(|v| {
                            let d = v.as_f64() - mu;
                            d * d
                        })
                        .sum::<f64>();
                }
                mean[ci] = mu;
                var[ci] = sq / count;
            }
            let m = cfg.momentum;
            let stats = RunningStats {
                mean: (0..c).map(|ci| F::from_f64(m * running.mean[ci].as_f64() + (1.0 - m) * mean[ci])).collect(),
                var: (0..c).map(|ci| F::from_f64(m * running.var[ci].as_f64() + (1.0 - m) * var[ci])).collect(),
            };
            (mean, var, stats)
        }
        Mode::Eval => (
            running.mean.iter().map(|v| v.as_f64()).collect(),
            running.var.iter().map(|v| v.as_f64()).collect(),
            running.clone(),
        ),
    };

    let inv_std: Vec<F> = var.iter().map(|&v| F::from_f64(1.0 / (v + cfg.eps).sqrt())).collect();
    let mean: Vec<F> = mean.into_iter().map(F::from_f64).collect();
    let mut out = vec![F::zero(); x.len()];
    for s in 0..n {
        for ci in 0..c {
            let base = (s * c + ci) * plane;
            let (mu, is, ga, be) = (mean[ci], inv_std[ci], gamma.data()[ci], beta.data()[ci]);
            for (o, &v) in out[base..base + plane].iter_mut().zip(&x[base..base + plane]) {
                *o = (v - mu) * is * ga + be;
            }
        }
    }
    let output = Tensor::from_parts(input.shape().to_vec(), out).ensure_finite(OP)?;
    Ok(BnForward { output, stats, mean, inv_std })
}

/// Gradients of batch norm: `(d input, d gamma, d beta)`.
///
/// With `batch_stats` the normalization statistics are themselves functions
/// of the input (train mode); otherwise they are constants (eval mode).
pub(crate) fn batch_norm_backward<F: Real>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    mean: &[F],
    inv_std: &[F],
    grad_out: &Tensor<F>,
    batch_stats: bool,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, c, h, w) = input.dims4("batch_norm backward")?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let x = input.data();
    let gy = grad_out.data();
    let mut dx = vec![F::zero(); x.len()];
    let mut dgamma = vec![F::zero(); c];
    let mut dbeta = vec![F::zero(); c];
    for ci in 0..c {
        let (mu, is) = (mean[ci].as_f64(), inv_std[ci].as_f64());
        let mut sum_dy = 0.0f64;
        let mut sum_dy_xhat = 0.0f64;
        for s in 0..n {
            let base = (s * c + ci) * plane;
            for i in base..base + plane {
                let g = gy[i].as_f64();
                sum_dy += g;
                sum_dy_xhat += g * (x[i].as_f64() - mu) * is;
            }
        }
        dgamma[ci] = F::from_f64(sum_dy_xhat);
        dbeta[ci] = F::from_f64(sum_dy);
        let ga = gamma.data()[ci].as_f64();
        for s in 0..n {
            let base = (s * c + ci) * plane;
            for i in base..base + plane {
                let g = gy[i].as_f64();
                let v = if batch_stats {
                    let xhat = (x[i].as_f64() - mu) * is;
                    ga * is * (g - sum_dy / count - xhat * sum_dy_xhat / count)
                } else {
                    ga * is * g
                };
                dx[i] = F::from_f64(v);
            }
        }
    }
    Ok((
        Tensor::from_parts(input.shape().to_vec(), dx),
        Tensor::from_parts(vec![c], dgamma),
        Tensor::from_parts(vec![c], dbeta),
    ))
}

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

/// Elementwise `max(0, x)`.
pub fn relu<F: Real>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|v| if v > F::zero() { v } else { F::zero() })
}

/// The subgradient at exactly zero is taken as zero.
pub(crate) fn relu_backward<F: Real>(input: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let data =
        input.data().iter().zip(grad_out.data()).map(|(&x, &g)| if x > F::zero() { g } else { F::zero() }).collect();
    Tensor::from_parts(input.shape().to_vec(), data)
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolSpec {
    pub kind: PoolKind,
    pub window: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl PoolSpec {
    fn geometry(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.window;
        if self.padding >= kh || self.padding >= kw {
            return Err(TensorError::InvalidArgument {
                op: "pool",
                detail: format!("padding {} must be smaller than the window", self.padding),
            });
        }
        out_extents("pool", h, w, kh, kw, self.stride, self.padding)
    }

    /// Clipped `[start, end)` input range covered by output index `o` along one axis.
    fn span(&self, o: usize, k: usize, len: usize) -> (usize, usize) {
        let start = (o * self.stride) as isize - self.padding as isize;
        let end = (start + k as isize).min(len as isize);
        (start.max(0) as usize, end as usize)
    }
}

/// Max or mean over sliding windows. Padded positions never win a max and are
/// excluded from a mean.
pub fn pool<F: Real>(
    input: &Tensor<F>,
    kind: PoolKind,
    window: (usize, usize),
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let spec = PoolSpec { kind, window, stride, padding };
    match kind {
        PoolKind::Max => max_pool(input, &spec).map(|(t, _)| t),
        PoolKind::Avg => avg_pool(input, &spec),
    }
}

/// Max pool that also returns, per output, the flat input index of the maximum.
pub(crate) fn max_pool<F: Real>(input: &Tensor<F>, spec: &PoolSpec) -> Result<(Tensor<F>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4("pool")?;
    let (oh, ow) = spec.geometry(h, w)?;
    let (kh, kw) = spec.window;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            let (y0, y1) = spec.span(oy, kh, h);
            for ox in 0..ow {
                let (x0, x1) = spec.span(ox, kw, w);
                let mut best = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = base + iy * w + ix;
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, oh, ow], out), arg))
}

fn avg_pool<F: Real>(input: &Tensor<F>, spec: &PoolSpec) -> Result<Tensor<F>> {
    let (n, c, h, w) = input.dims4("pool")?;
    let (oh, ow) = spec.geometry(h, w)?;
    let (kh, kw) = spec.window;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            let (y0, y1) = spec.span(oy, kh, h);
            for ox in 0..ow {
                let (x0, x1) = spec.span(ox, kw, w);
                let mut sum = F::zero();
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        sum += x[base + iy * w + ix];
                    }
                }
                out.push(sum / F::from_f64(((y1 - y0) * (x1 - x0)) as f64));
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, c, oh, ow], out))
}

pub(crate) fn max_pool_backward<F: Real>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let mut dx = vec![F::zero(); input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        dx[i] += g;
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

pub(crate) fn avg_pool_backward<F: Real>(
    input_shape: &[usize],
    spec: &PoolSpec,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => unreachable!("pool input is always NCHW"),
    };
    let (oh, ow) = spec.geometry(h, w)?;
    let (kh, kw) = spec.window;
    let gy = grad_out.data();
    let mut dx = vec![F::zero(); n * c * h * w];
    for nc in 0..n * c {
        let base = nc * h * w;
        for oy in 0..oh {
            let (y0, y1) = spec.span(oy, kh, h);
            for ox in 0..ow {
                let (x0, x1) = spec.span(ox, kw, w);
                let share = gy[(nc * oh + oy) * ow + ox] / F::from_f64(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        dx[base + iy * w + ix] += share;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), dx))
}

/// Collapses each `H×W` feature map to its mean: `N×C×H×W → N×C`.
pub fn global_avg_pool<F: Real>(input: &Tensor<F>) -> Result<Tensor<F>> {
    let (n, c, h, w) = input.dims4("global_avg_pool")?;
    let plane = h * w;
    let denom = F::from_f64(plane as f64);
    let out = input.data().chunks(plane).map(|ch| ch.iter().copied().sum::<F>() / denom).collect();
    Ok(Tensor::from_parts(vec![n, c], out))
}

pub(crate) fn global_avg_pool_backward<F: Real>(input_shape: &[usize], grad_out: &Tensor<F>) -> Tensor<F> {
    let plane: usize = input_shape[2..].iter().product();
    let denom = F::from_f64(plane as f64);
    let mut dx = Vec::with_capacity(grad_out.len() * plane);
    for &g in grad_out.data() {
        dx.extend(std::iter::repeat_n(g / denom, plane));
    }
    Tensor::from_parts(input_shape.to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Channel concatenation
// ---------------------------------------------------------------------------

/// Stacks NCHW tensors along the channel axis, preserving argument order.
pub fn concat_channels<F: Real>(inputs: &[&Tensor<F>]) -> Result<Tensor<F>> {
    const OP: &str = "concat_channels";
    let first = inputs.first().ok_or_else(|| TensorError::InvalidArgument { op: OP, detail: "no inputs".into() })?;
    let (n, _, h, w) = first.dims4(OP)?;
    let mut total_c = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4(OP)?;
        if (tn, th, tw) != (n, h, w) {
            return Err(TensorError::ShapeMismatch {
                op: OP,
                detail: format!("{:?} vs {:?}", first.shape(), t.shape()),
            });
        }
        total_c += tc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for s in 0..n {
        for t in inputs {
            let block = t.shape()[1] * plane;
            out.extend_from_slice(&t.data()[s * block..(s + 1) * block]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total_c, h, w], out))
}

/// Channels `start..start + count` of an NCHW tensor.
pub fn slice_channels<F: Real>(input: &Tensor<F>, start: usize, count: usize) -> Result<Tensor<F>> {
    let (n, c, h, w) = input.dims4("slice_channels")?;
    if count == 0 || start + count > c {
        return Err(TensorError::InvalidArgument {
            op: "slice_channels",
            detail: format!("channels {start}..{} of {c}", start + count),
        });
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * count * plane);
    for s in 0..n {
        let base = (s * c + start) * plane;
        out.extend_from_slice(&input.data()[base..base + count * plane]);
    }
    Ok(Tensor::from_parts(vec![n, count, h, w], out))
}

// ---------------------------------------------------------------------------
// Dense head
// ---------------------------------------------------------------------------

/// Affine map `x·W + b` of an `N×F` input with an `F×K` weight.
pub fn linear<F: Real>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    const OP: &str = "linear";
    let (n, f) = input.dims2(OP)?;
    let (wf, k) = weight.dims2(OP)?;
    if wf != f || bias.len() != k {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("input {:?}, weight {:?}, bias {:?}", input.shape(), weight.shape(), bias.shape()),
        });
    }
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(bias.data());
    }
    gemm(n, f, k, input.data(), false, weight.data(), false, F::one(), &mut out);
    Tensor::from_parts(vec![n, k], out).ensure_finite(OP)
}

/// `(d input, d weight, d bias)` of [`linear`].
pub(crate) fn linear_backward<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let (n, f) = input.dims2("linear backward")?;
    let (_, k) = weight.dims2("linear backward")?;
    let mut dx = vec![F::zero(); n * f];
    gemm(n, k, f, grad_out.data(), false, weight.data(), true, F::zero(), &mut dx);
    let mut dw = vec![F::zero(); f * k];
    gemm(f, n, k, input.data(), true, grad_out.data(), false, F::zero(), &mut dw);
    let mut db = vec![F::zero(); k];
    for row in grad_out.data().chunks(k) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((Tensor::from_parts(vec![n, f], dx), Tensor::from_parts(vec![f, k], dw), Tensor::from_parts(vec![k], db)))
}

/// Row-wise softmax with max subtraction.
pub fn softmax<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    const OP: &str = "softmax";
    let (_, c) = logits.dims2(OP)?;
    if c < 2 {
        return Err(TensorError::InvalidArgument { op: OP, detail: format!("{c} classes") });
    }
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let start = out.len();
        out.extend(row.iter().map(|&v| (v - max).exp()));
        let sum: F = out[start..].iter().copied().sum();
        out[start..].iter_mut().for_each(|v| *v = *v / sum);
    }
    Tensor::from_parts(logits.shape().to_vec(), out).ensure_finite(OP)
}

pub(crate) fn softmax_backward<F: Real>(probs: &Tensor<F>, grad_out: &Tensor<F>) -> Tensor<F> {
    let c = probs.shape()[1];
    let mut dx = Vec::with_capacity(probs.len());
    for (p, g) in probs.data().chunks(c).zip(grad_out.data().chunks(c)) {
        let dot: F = p.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(p.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_parts(probs.shape().to_vec(), dx)
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

fn check_targets<F: Real>(probs: &Tensor<F>, targets: &[usize], weights: &[F]) -> Result<(usize, usize)> {
    const OP: &str = "weighted_cross_entropy";
    let (n, c) = probs.dims2(OP)?;
    if targets.len() != n || weights.len() != c {
        return Err(TensorError::ShapeMismatch {
            op: OP,
            detail: format!("{n}×{c} probabilities, {} targets, {} weights", targets.len(), weights.len()),
        });
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(TensorError::InvalidArgument { op: OP, detail: format!("target class {t} of {c}") });
    }
    Ok((n, c))
}

fn clamp_prob<F: Real>(p: F) -> F {
    let lo = F::from_f64(PROB_CLAMP);
    let hi = F::one() - lo;
    p.max(lo).min(hi)
}

/// Batch mean of `−w_t·ln p_t` where `t` is each row's true class.
pub fn weighted_cross_entropy<F: Real>(probs: &Tensor<F>, targets: &[usize], weights: &[F]) -> Result<F> {
    let (n, c) = check_targets(probs, targets, weights)?;
    let mut total = F::zero();
    for (row, &t) in probs.data().chunks(c).zip(targets) {
        total += -weights[t] * clamp_prob(row[t]).ln();
    }
    let loss = total / F::from_f64(n as f64);
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(TensorError::NonFinite { op: "weighted_cross_entropy" })
    }
}

/// Gradient of [`weighted_cross_entropy`] with respect to the probabilities.
/// Zero where the clamp is active.
pub(crate) fn weighted_cross_entropy_backward<F: Real>(
    probs: &Tensor<F>,
    targets: &[usize],
    weights: &[F],
    grad_loss: F,
) -> Tensor<F> {
    let c = probs.shape()[1];
    let n = F::from_f64(targets.len() as f64);
    let mut d = vec![F::zero(); probs.len()];
    for (i, &t) in targets.iter().enumerate() {
        let p = probs.data()[i * c + t];
        if clamp_prob(p) == p {
            d[i * c + t] = -grad_loss * weights[t] / (n * p);
        }
    }
    Tensor::from_parts(probs.shape().to_vec(), d)
}
