//! A small reverse-mode convolutional network.
//!
//! Activations are kept in NHWC order so that the patch-expanded (im2col)
//! input of a convolution is a plain `(batch * positions) x (k * k * c_in)`
//! matrix. The same matrix is what K-FAC consumes as the layer's activations.

mod gradcheck;
mod loss;
mod params;

pub use gradcheck::{finite_diff_gradient, finite_diff_gradient_fn};
pub use loss::{loss_and_grad, softmax_rows};
pub use params::{Gradients, NetworkParams, ParamBlock};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Tensor};

/// One layer of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Square-kernel convolution with "same" padding (`kernel` must be odd).
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool { size: usize, stride: usize },
    Dense { inputs: usize, outputs: usize },
    Relu,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        LayerSpec::Conv {
            in_channels,
            out_channels,
            kernel,
            stride: 1,
        }
    }

    pub fn pool2() -> Self {
        LayerSpec::MaxPool { size: 2, stride: 2 }
    }

    pub fn dense(inputs: usize, outputs: usize) -> Self {
        LayerSpec::Dense { inputs, outputs }
    }

    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv { .. } | LayerSpec::Dense { .. })
    }
}

/// Shape of the activation flowing between layers (per example).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActShape {
    Spatial { height: usize, width: usize, channels: usize },
    Flat(usize),
}

impl ActShape {
    pub fn len(&self) -> usize {
        match *self {
            ActShape::Spatial {
                height,
                width,
                channels,
            } => height * width * channels,
            ActShape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A validated stack of layers; the flattened output of the last layer is the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: ActShape,
    layers: Vec<LayerSpec>,
    /// `shapes[i]` is the input shape of layer `i`; the last entry is the output.
    shapes: Vec<ActShape>,
}

impl Network {
    pub fn new(input: ActShape, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Dimension {
                layer: 0,
                message: "empty input shape".into(),
            });
        }
        let mut shapes = vec![input];
        let mut cur = input;
        for (i, layer) in layers.iter().enumerate() {
            cur = next_shape(i, cur, layer)?;
            shapes.push(cur);
        }
        Ok(Self {
            input,
            layers,
            shapes,
        })
    }

    /// conv(32)+pool, conv(64)+pool, dense(1024), dense(classes), 5x5 kernels.
    pub fn reference(side: usize, classes: usize) -> Result<Self> {
        Self::reference_scaled(side, classes, [32, 64, 1024], 5)
    }

    /// The reference topology with custom widths `[conv1, conv2, hidden]`.
    pub fn reference_scaled(
        side: usize,
        classes: usize,
        widths: [usize; 3],
        kernel: usize,
    ) -> Result<Self> {
        let [c1, c2, hidden] = widths;
        let pooled = side / 2 / 2;
        Self::new(
            ActShape::Spatial {
                height: side,
                width: side,
                channels: 1,
            },
            vec![
                LayerSpec::conv(1, c1, kernel),
                LayerSpec::Relu,
                LayerSpec::pool2(),
                LayerSpec::conv(c1, c2, kernel),
                LayerSpec::Relu,
                LayerSpec::pool2(),
                LayerSpec::dense(pooled * pooled * c2, hidden),
                LayerSpec::Relu,
                LayerSpec::dense(hidden, classes),
            ],
        )
    }

    pub fn input_shape(&self) -> ActShape {
        self.input
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map_or(0, ActShape::len)
    }

    /// `(outputs, fan_in)` of each parameterized layer, in order.
    pub fn block_dims(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match *l {
                LayerSpec::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some((out_channels, kernel * kernel * in_channels)),
                LayerSpec::Dense { inputs, outputs } => Some((outputs, inputs)),
                _ => None,
            })
            .collect()
    }

    /// Total parameter count `p`.
    pub fn param_count(&self) -> usize {
        self.block_dims().iter().map(|&(o, f)| o * f + o).sum()
    }

    pub fn zero_params(&self) -> NetworkParams {
        NetworkParams::zeros(&self.block_dims())
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> NetworkParams {
        let mut params = self.zero_params();
        let fans = self.layers.iter().filter_map(|l| match *l {
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => Some((kernel * kernel * in_channels, kernel * kernel * out_channels)),
            LayerSpec::Dense { inputs, outputs } => Some((inputs, outputs)),
            _ => None,
        });
        for (block, (fan_in, fan_out)) in params.blocks_mut().iter_mut().zip(fans) {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            for w in block.weight.iter_mut() {
                *w = dist.sample(rng);
            }
        }
        params
    }

    fn check_params(&self, params: &NetworkParams) -> Result<()> {
        let dims = self.block_dims();
        if params.blocks().len() != dims.len() {
            return Err(Error::Dimension {
                layer: 0,
                message: format!(
                    "expected {} parameter blocks, got {}",
                    dims.len(),
                    params.blocks().len()
                ),
            });
        }
        for (i, (b, &(o, f))) in params.blocks().iter().zip(&dims).enumerate() {
            if b.outputs != o || b.fan_in != f {
                return Err(Error::Dimension {
                    layer: self.param_layer_index(i),
                    message: format!(
                        "parameter block is {}x{}, layer needs {o}x{f}",
                        b.outputs, b.fan_in
                    ),
                });
            }
        }
        Ok(())
    }

    fn param_layer_index(&self, block: usize) -> usize {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.is_parameterized())
            .nth(block)
            .map_or(0, |(i, _)| i)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        if batch.shape().len() < 2 || batch.row_len() != self.input.len() {
            return Err(Error::Dimension {
                layer: 0,
                message: format!(
                    "batch shape {:?} does not match input {:?}",
                    batch.shape(),
                    self.input
                ),
            });
        }
        Ok(())
    }

    /// Forward pass. Returns `(batch, classes)` logits and the activation cache.
    pub fn forward(&self, params: &NetworkParams, batch: &Tensor) -> Result<(Tensor, ActivationCache)> {
        let mut cache = ActivationCache::default();
        let logits = self.forward_with(params, batch, &mut cache)?;
        Ok((logits, cache))
    }

    /// Forward pass that reuses the buffers of a cache from an earlier call.
    pub fn forward_with(
        &self,
        params: &NetworkParams,
        batch: &Tensor,
        cache: &mut ActivationCache,
    ) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let n = batch.rows();
        cache.batch = n;
        cache.layers.resize_with(self.layers.len(), LayerCache::default);
        let mut blocks = params.blocks().iter();
        for (i, &layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.layers.split_at_mut(i);
            let lc = &mut rest[0];
            let x: &[f64] = match done.last() {
                Some(prev) => &prev.out,
                None => batch.data(),
            };
            lc.layer = Some(layer);
            lc.has_grads = false;
            let shape = self.shapes[i];
            match layer {
                LayerSpec::Conv { kernel, stride, .. } => {
                    let block = blocks.next().expect("checked block count");
                    let geom = ConvGeom::new(shape, kernel, stride);
                    im2col_into(x, n, &geom, &mut lc.inputs);
                    lc.rows = n * geom.positions();
                    affine_into(&lc.inputs, lc.rows, block, &mut lc.out);
                }
                LayerSpec::Dense { .. } => {
                    let block = blocks.next().expect("checked block count");
                    lc.inputs.clear();
                    lc.inputs.extend_from_slice(x);
                    lc.rows = n;
                    affine_into(&lc.inputs, n, block, &mut lc.out);
                }
                LayerSpec::Relu => {
                    lc.out.clear();
                    lc.out.extend(x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }));
                    lc.mask.clear();
                    lc.mask.extend(x.iter().map(|&v| v > 0.0));
                }
                LayerSpec::MaxPool { size, stride } => {
                    let out_shape = self.shapes[i + 1];
                    maxpool_forward_into(x, n, shape, out_shape, size, stride, &mut lc.out, &mut lc.argmax);
                }
            }
        }
        let out = match cache.layers.last() {
            Some(l) => l.out.clone(),
            None => batch.data().to_vec(),
        };
        let logits = Tensor::new(vec![n, self.classes()], out)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                step: 0,
                what: "logits".into(),
            });
        }
        Ok(logits)
    }

    /// Backward pass for the mini-batch mean loss whose logit gradient is `dlogits`.
    ///
    /// Fills the per-example pre-activation gradients `g_i` in `cache`.
    pub fn backward(
        &self,
        params: &NetworkParams,
        cache: &mut ActivationCache,
        dlogits: &Tensor,
    ) -> Result<Gradients> {
        self.backward_impl(params, cache, dlogits, false)
            .map(|(g, _)| g)
    }

    /// Like [`Network::backward`], also returning the gradient with respect to the input batch.
    pub fn backward_with_input(
        &self,
        params: &NetworkParams,
        cache: &mut ActivationCache,
        dlogits: &Tensor,
    ) -> Result<(Gradients, Tensor)> {
        let (g, dx) = self.backward_impl(params, cache, dlogits, true)?;
        let dx = dx.expect("input gradient requested");
        let n = cache.batch;
        Ok((g, Tensor::new(vec![n, self.input.len()], dx)?))
    }

    fn backward_impl(
        &self,
        params: &NetworkParams,
        cache: &mut ActivationCache,
        dlogits: &Tensor,
        want_input: bool,
    ) -> Result<(Gradients, Option<Vec<f64>>)> {
        self.check_params(params)?;
        if cache.layers.len() != self.layers.len() {
            return Err(Error::StaleCache(format!(
                "cache has {} layers, network has {}",
                cache.layers.len(),
                self.layers.len()
            )));
        }
        if let Some(i) = (0..self.layers.len()).find(|&i| cache.layers[i].layer != Some(self.layers[i])) {
            return Err(Error::StaleCache(format!(
                "layer {i} cache does not match layer kind"
            )));
        }
        let n = cache.batch;
        if dlogits.shape() != [n, self.classes()] {
            return Err(Error::StaleCache(format!(
                "dlogits shape {:?} does not match cached batch {n} x {}",
                dlogits.shape(),
                self.classes()
            )));
        }
        let mut grads = self.zero_params();
        let mut block_idx = params.blocks().len();
        let depth = self.layers.len();
        for i in (0..depth).rev() {
            let need_dx = want_input || i > 0;
            let in_shape = self.shapes[i];
            let (head, tail) = cache.layers.split_at_mut(i + 1);
            let lc = &mut head[i];
            let dy: &[f64] = match tail.first() {
                Some(next) => &next.dinput,
                None => dlogits.data(),
            };
            let mut dinput = std::mem::take(&mut lc.dinput);
            dinput.clear();
            match self.layers[i] {
                LayerSpec::Conv { kernel, stride, .. } => {
                    block_idx -= 1;
                    let block = &params.blocks()[block_idx];
                    let geom = ConvGeom::new(in_shape, kernel, stride);
                    affine_backward(&lc.inputs, lc.rows, dy, block, &mut grads.blocks_mut()[block_idx]);
                    lc.set_grads(dy, n);
                    if need_dx {
                        let mut dpatches = std::mem::take(&mut lc.scratch);
                        affine_input_grad_into(dy, lc.rows, block, &mut dpatches);
                        col2im_into(&dpatches, n, &geom, &mut dinput);
                        lc.scratch = dpatches;
                    }
                }
                LayerSpec::Dense { .. } => {
                    block_idx -= 1;
                    let block = &params.blocks()[block_idx];
                    affine_backward(&lc.inputs, lc.rows, dy, block, &mut grads.blocks_mut()[block_idx]);
                    lc.set_grads(dy, n);
                    if need_dx {
                        affine_input_grad_into(dy, lc.rows, block, &mut dinput);
                    }
                }
                LayerSpec::Relu => {
                    dinput.extend(dy.iter().zip(&lc.mask).map(|(&d, &m)| if m { d } else { 0.0 }));
                }
                LayerSpec::MaxPool { .. } => {
                    dinput.resize(n * in_shape.len(), 0.0);
                    for (d, &src) in dy.iter().zip(&lc.argmax) {
                        dinput[src] += d;
                    }
                }
            }
            lc.dinput = dinput;
        }
        let dx = want_input.then(|| match cache.layers.first() {
            Some(l) => l.dinput.clone(),
            None => dlogits.data().to_vec(),
        });
        Ok((grads, dx))
    }

    /// Runs forward in chunks and returns softmax probabilities `(batch, classes)`.
    ///
    /// Nothing is cached, so memory stays proportional to `chunk`.
    pub fn predict_proba(&self, params: &NetworkParams, batch: &Tensor, chunk: usize) -> Result<Tensor> {
        self.check_params(params)?;
        self.check_batch(batch)?;
        let n = batch.rows();
        let w = batch.row_len();
        let chunk = chunk.max(1);
        let mut out = Vec::with_capacity(n * self.classes());
        let mut start = 0;
        while start < n {
            let end = (start + chunk).min(n);
            let logits = self.infer(params, &batch.data()[start * w..end * w], end - start)?;
            out.extend_from_slice(softmax_rows(&logits).data());
            start = end;
        }
        Tensor::new(vec![n, self.classes()], out)
    }

    /// Cache-free forward pass over `n` examples.
    fn infer(&self, params: &NetworkParams, batch: &[f64], n: usize) -> Result<Tensor> {
        let mut x = batch.to_vec();
        let mut scratch = Vec::new();
        let mut argmax = Vec::new();
        let mut blocks = params.blocks().iter();
        for (i, layer) in self.layers.iter().enumerate() {
            let shape = self.shapes[i];
            x = match *layer {
                LayerSpec::Conv { kernel, stride, .. } => {
                    let geom = ConvGeom::new(shape, kernel, stride);
                    im2col_into(&x, n, &geom, &mut scratch);
                    affine(&scratch, n * geom.positions(), blocks.next().expect("checked block count"))
                }
                LayerSpec::Dense { .. } => affine(&x, n, blocks.next().expect("checked block count")),
                LayerSpec::Relu => {
                    x.iter_mut().for_each(|v| *v = v.max(0.0));
                    x
                }
                LayerSpec::MaxPool { size, stride } => {
                    let mut y = Vec::new();
                    maxpool_forward_into(&x, n, shape, self.shapes[i + 1], size, stride, &mut y, &mut argmax);
                    y
                }
            };
        }
        let logits = Tensor::new(vec![n, self.classes()], x)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite {
                step: 0,
                what: "logits".into(),
            });
        }
        Ok(logits)
    }
}

fn next_shape(i: usize, cur: ActShape, layer: &LayerSpec) -> Result<ActShape> {
    let err = |message: String| Err(Error::Dimension { layer: i, message });
    match (*layer, cur) {
        (
            LayerSpec::Conv {
                in_channels,
                out_channels,
                kernel,
                stride,
            },
            ActShape::Spatial {
                height,
                width,
                channels,
            },
        ) => {
            if channels != in_channels {
                return err(format!("conv expects {in_channels} channels, got {channels}"));
            }
            if kernel % 2 == 0 || stride == 0 || out_channels == 0 {
                return err("conv needs an odd kernel, non-zero stride and outputs".into());
            }
            let pad = kernel / 2;
            Ok(ActShape::Spatial {
                height: (height + 2 * pad - kernel) / stride + 1,
                width: (width + 2 * pad - kernel) / stride + 1,
                channels: out_channels,
            })
        }
        (LayerSpec::Conv { .. }, ActShape::Flat(_)) => err("conv applied to flat input".into()),
        (
            LayerSpec::MaxPool { size, stride },
            ActShape::Spatial {
                height,
                width,
                channels,
            },
        ) => {
            if size == 0 || stride == 0 || height < size || width < size {
                return err(format!("pool {size}/{stride} does not fit {height}x{width}"));
            }
            Ok(ActShape::Spatial {
                height: (height - size) / stride + 1,
                width: (width - size) / stride + 1,
                channels,
            })
        }
        (LayerSpec::MaxPool { .. }, ActShape::Flat(_)) => err("pool applied to flat input".into()),
        (LayerSpec::Dense { inputs, outputs }, shape) => {
            if shape.len() != inputs {
                return err(format!("dense expects {inputs} inputs, got {}", shape.len()));
            }
            if outputs == 0 {
                return err("dense with zero outputs".into());
            }
            Ok(ActShape::Flat(outputs))
        }
        (LayerSpec::Relu, shape) => Ok(shape),
    }
}

/// Per-layer quantities captured during forward/backward.
///
/// Buffers are reused by [`Network::forward_with`].
#[derive(Debug, Clone, Default)]
pub struct ActivationCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    layer: Option<LayerSpec>,
    /// `a_{i-1}`: rows x fan_in (patch-expanded for conv). Parameterized layers only.
    inputs: Vec<f64>,
    rows: usize,
    /// Layer output; `s_i` (rows x outputs) for parameterized layers.
    out: Vec<f64>,
    mask: Vec<bool>,
    argmax: Vec<usize>,
    /// `g_i`: per-example gradient of the loss w.r.t. `s_i`, rows x outputs.
    grads: Vec<f64>,
    has_grads: bool,
    /// Gradient of the loss w.r.t. this layer's input.
    dinput: Vec<f64>,
    /// Patch-gradient workspace for convolutions.
    scratch: Vec<f64>,
}

impl LayerCache {
    fn set_grads(&mut self, dy: &[f64], n: usize) {
        self.grads.clear();
        self.grads.extend(dy.iter().map(|v| v * n as f64));
        self.has_grads = true;
    }
}

/// Borrowed view of one parameterized layer's cached statistics.
#[derive(Debug, Clone, Copy)]
pub struct LayerStats<'a> {
    /// Number of sample rows (batch, or batch x positions for conv).
    pub rows: usize,
    pub activations: &'a [f64],
    pub pre_activations: &'a [f64],
    pub grads: Option<&'a [f64]>,
}

impl ActivationCache {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Statistics for each parameterized layer, in order.
    pub fn layer_stats(&self) -> Vec<LayerStats<'_>> {
        self.layers
            .iter()
            .filter(|l| l.layer.is_some_and(|s| s.is_parameterized()))
            .map(|l| LayerStats {
                rows: l.rows,
                activations: &l.inputs,
                pre_activations: &l.out,
                grads: l.has_grads.then_some(&l.grads[..]),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    height: usize,
    width: usize,
    channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeom {
    fn new(shape: ActShape, kernel: usize, stride: usize) -> Self {
        let ActShape::Spatial {
            height,
            width,
            channels,
        } = shape
        else {
            unreachable!("validated at construction")
        };
        let pad = kernel / 2;
        Self {
            height,
            width,
            channels,
            kernel,
            stride,
            pad,
            out_h: (height + 2 * pad - kernel) / stride + 1,
            out_w: (width + 2 * pad - kernel) / stride + 1,
        }
    }

    fn positions(&self) -> usize {
        self.out_h * self.out_w
    }

    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.channels
    }

    /// Input offset (within one example) of patch element `(ky, kx)` at output `(oy, ox)`.
    #[cfg(test)]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<usize> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.height && x < self.width).then(|| (y * self.width + x) * self.channels)
    }
}

impl ConvGeom {
    /// Valid kernel columns `kx0..kx1` and first input column for output column `ox`.
    fn col_span(&self, ox: usize) -> (usize, usize, usize) {
        let start = ox * self.stride;
        let kx0 = self.pad.saturating_sub(start);
        let kx1 = self.kernel.min(self.width + self.pad - start);
        (kx0, kx1, start + kx0 - self.pad)
    }
}

/// Patch expansion: rows are `(example, oy, ox)`, columns `(ky, kx, c)`.
fn im2col_into(x: &[f64], n: usize, g: &ConvGeom, out: &mut Vec<f64>) {
    let plen = g.patch_len();
    let c = g.channels;
    let in_len = g.height * g.width * c;
    out.clear();
    out.resize(n * g.positions() * plen, 0.0);
    for b in 0..n {
        let xb = &x[b * in_len..(b + 1) * in_len];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (b * g.out_h + oy) * g.out_w + ox;
                let dst = &mut out[row * plen..(row + 1) * plen];
                let (kx0, kx1, x0) = g.col_span(ox);
                for ky in 0..g.kernel {
                    let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.height) else {
                        continue;
                    };
                    let src = (y * g.width + x0) * c;
                    let d = (ky * g.kernel + kx0) * c;
                    let len = (kx1 - kx0) * c;
                    dst[d..d + len].copy_from_slice(&xb[src..src + len]);
                }
            }
        }
    }
}

#[cfg(test)]
fn im2col(x: &[f64], n: usize, g: &ConvGeom) -> Vec<f64> {
    let mut out = Vec::new();
    im2col_into(x, n, g, &mut out);
    out
}

/// Adjoint of [`im2col_into`]: scatter-adds patch gradients back into the input.
fn col2im_into(dpatches: &[f64], n: usize, g: &ConvGeom, dx: &mut Vec<f64>) {
    let plen = g.patch_len();
    let c = g.channels;
    let in_len = g.height * g.width * c;
    dx.clear();
    dx.resize(n * in_len, 0.0);
    for b in 0..n {
        let dxb = &mut dx[b * in_len..(b + 1) * in_len];
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                let row = (b * g.out_h + oy) * g.out_w + ox;
                let src_row = &dpatches[row * plen..(row + 1) * plen];
                let (kx0, kx1, x0) = g.col_span(ox);
                for ky in 0..g.kernel {
                    let Some(y) = (oy * g.stride + ky).checked_sub(g.pad).filter(|&y| y < g.height) else {
                        continue;
                    };
                    let dst = (y * g.width + x0) * c;
                    let s = (ky * g.kernel + kx0) * c;
                    let len = (kx1 - kx0) * c;
                    for (d, v) in dxb[dst..dst + len].iter_mut().zip(&src_row[s..s + len]) {
                        *d += v;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
fn col2im(dpatches: &[f64], n: usize, g: &ConvGeom) -> Vec<f64> {
    let mut dx = Vec::new();
    col2im_into(dpatches, n, g, &mut dx);
    dx
}

/// `x W^T + b` for `rows` input rows.
fn affine_into(x: &[f64], rows: usize, block: &ParamBlock, out: &mut Vec<f64>) {
    out.clear();
    for _ in 0..rows {
        out.extend_from_slice(&block.bias);
    }
    gemm(
        MatRef::new(x, rows, block.fan_in),
        MatRef::new(&block.weight, block.outputs, block.fan_in).t(),
        1.0,
        out,
    );
}

fn affine(x: &[f64], rows: usize, block: &ParamBlock) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * block.outputs);
    affine_into(x, rows, block, &mut out);
    out
}

fn affine_backward(x: &[f64], rows: usize, dy: &[f64], block: &ParamBlock, grad: &mut ParamBlock) {
    gemm(
        MatRef::new(dy, rows, block.outputs).t(),
        MatRef::new(x, rows, block.fan_in),
        0.0,
        &mut grad.weight,
    );
    for r in 0..rows {
        for (gb, d) in grad.bias.iter_mut().zip(&dy[r * block.outputs..(r + 1) * block.outputs]) {
            *gb += d;
        }
    }
}

fn affine_input_grad_into(dy: &[f64], rows: usize, block: &ParamBlock, dx: &mut Vec<f64>) {
    dx.clear();
    dx.resize(rows * block.fan_in, 0.0);
    gemm(
        MatRef::new(dy, rows, block.outputs),
        MatRef::new(&block.weight, block.outputs, block.fan_in),
        0.0,
        dx,
    );
}

/// Max-pool over NHWC input. Ties go to the first element in row-major window order.
#[allow(clippy::too_many_arguments)]
fn maxpool_forward_into(
    x: &[f64],
    n: usize,
    input: ActShape,
    output: ActShape,
    size: usize,
    stride: usize,
    y: &mut Vec<f64>,
    argmax: &mut Vec<usize>,
) {
    let (
        ActShape::Spatial {
            height,
            width,
            channels,
        },
        ActShape::Spatial {
            height: oh,
            width: ow,
            ..
        },
    ) = (input, output)
    else {
        unreachable!("validated at construction")
    };
    let in_len = height * width * channels;
    y.clear();
    argmax.clear();
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for c in 0..channels {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = usize::MAX;
                    for ky in 0..size {
                        for kx in 0..size {
                            let idx = b * in_len
                                + ((oy * stride + ky) * width + ox * stride + kx) * channels
                                + c;
                            if best_idx == usize::MAX || x[idx] > best {
                                best = x[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    y.push(best);
                    argmax.push(best_idx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
