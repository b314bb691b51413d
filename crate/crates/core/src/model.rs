//! Layer stack with exact analytic gradients.
//!
//! Convolutions run as one batched GEMM over an im2col buffer; everything
//! else is straightforward elementwise or pooling code. The backward pass can
//! stop early when gradients are only needed for an upper subset of layers
//! (used by global-segment-only poison steps).

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::params::{LayerId, ParamVector, Segment};
use crate::scalar::{matmul, Scalar};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Dense {
        inputs: usize,
        outputs: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Shape {
    Chw(usize, usize, usize),
    Flat(usize),
}

impl Shape {
    fn dims(&self, batch: usize) -> Vec<usize> {
        match *self {
            Shape::Chw(c, h, w) => vec![batch, c, h, w],
            Shape::Flat(n) => vec![batch, n],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    layers: Vec<Layer>,
    input: (usize, usize, usize),
    shapes: Vec<Shape>, // output shape of each layer
    layout: Vec<Segment>,
    /// spec layer index -> parameterized-layer ordinal
    param_ordinal: Vec<Option<LayerId>>,
    num_classes: usize,
}

fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = extent + 2 * pad;
    if padded < kernel {
        return Err(Error::Config(format!(
            "kernel {} exceeds padded extent {}",
            kernel, padded
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl ModelSpec {
    pub fn new(layers: Vec<Layer>, input: (usize, usize, usize)) -> Result<Self> {
        let (c0, h0, w0) = input;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            return Err(Error::Config("input shape must be nonzero".into()));
        }
        let mut shape = Shape::Chw(c0, h0, w0);
        let mut shapes = Vec::with_capacity(layers.len());
        let mut layout: Vec<Segment> = Vec::new();
        let mut param_ordinal = Vec::with_capacity(layers.len());
        let mut offset = 0usize;
        for (li, layer) in layers.iter().enumerate() {
            let mut ordinal = None;
            shape = match (*layer, shape) {
                (Layer::Conv { in_ch, out_ch, kernel, stride, pad }, Shape::Chw(c, h, w)) => {
                    if in_ch != c {
                        return Err(Error::Config(format!(
                            "layer {}: conv expects {} channels, input has {}",
                            li, in_ch, c
                        )));
                    }
                    if stride == 0 || kernel == 0 || out_ch == 0 {
                        return Err(Error::Config(format!("layer {}: bad conv geometry", li)));
                    }
                    let len = out_ch * in_ch * kernel * kernel + out_ch;
                    ordinal = Some(layout.len());
                    layout.push(Segment { layer_id: layout.len(), offset, len });
                    offset += len;
                    Shape::Chw(
                        out_ch,
                        conv_out(h, kernel, stride, pad)?,
                        conv_out(w, kernel, stride, pad)?,
                    )
                }
                (Layer::Conv { .. }, Shape::Flat(_)) => {
                    return Err(Error::Config(format!("layer {}: conv on flat input", li)));
                }
                (Layer::Relu, s) => s,
                (Layer::MaxPool { size }, Shape::Chw(c, h, w)) => {
                    if size == 0 || h < size || w < size {
                        return Err(Error::Config(format!("layer {}: pool {} too large", li, size)));
                    }
                    Shape::Chw(c, h / size, w / size)
                }
                (Layer::MaxPool { .. }, Shape::Flat(_)) => {
                    return Err(Error::Config(format!("layer {}: pool on flat input", li)));
                }
                (Layer::Flatten, Shape::Chw(c, h, w)) => Shape::Flat(c * h * w),
                (Layer::Flatten, Shape::Flat(n)) => Shape::Flat(n),
                (Layer::Dense { inputs, outputs }, Shape::Flat(n)) => {
                    if inputs != n {
                        return Err(Error::Config(format!(
                            "layer {}: dense expects {} inputs, got {}",
                            li, inputs, n
                        )));
                    }
                    if outputs == 0 {
                        return Err(Error::Config(format!("layer {}: dense with zero outputs", li)));
                    }
                    let len = outputs * inputs + outputs;
                    ordinal = Some(layout.len());
                    layout.push(Segment { layer_id: layout.len(), offset, len });
                    offset += len;
                    Shape::Flat(outputs)
                }
                (Layer::Dense { .. }, Shape::Chw(..)) => {
                    return Err(Error::Config(format!(
                        "layer {}: dense on unflattened input",
                        li
                    )));
                }
            };
            shapes.push(shape);
            param_ordinal.push(ordinal);
        }
        let num_classes = match shape {
            Shape::Flat(n) => n,
            Shape::Chw(..) => return Err(Error::Config("model must end in a flat output".into())),
        };
        Ok(ModelSpec {
            layers,
            input,
            shapes,
            layout,
            param_ordinal,
            num_classes,
        })
    }

    /// The fixed image net: two 5x5 convolutions with pooling, then a
    /// 128-unit hidden dense layer and the classification layer.
    pub fn convnet(num_classes: usize) -> ModelSpec {
        ModelSpec::convnet_for(28, num_classes).expect("28x28 architecture is consistent")
    }

    /// Same stack as `convnet` on a square input of any side >= 8.
    pub fn convnet_for(side: usize, num_classes: usize) -> Result<ModelSpec> {
        if side < 8 {
            return Err(Error::Config(format!(
                "image side {side} too small for two pooling stages"
            )));
        }
        let pooled = side / 2 / 2;
        ModelSpec::new(
            vec![
                Layer::Conv { in_ch: 1, out_ch: 16, kernel: 5, stride: 1, pad: 2 },
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Conv { in_ch: 16, out_ch: 32, kernel: 5, stride: 1, pad: 2 },
                Layer::Relu,
                Layer::MaxPool { size: 2 },
                Layer::Flatten,
                Layer::Dense { inputs: 32 * pooled * pooled, outputs: 128 },
                Layer::Relu,
                Layer::Dense { inputs: 128, outputs: num_classes },
            ],
            (1, side, side),
        )
    }

    /// Flatten -> dense stack, used for small oracle nets and separability
    /// checks.
    pub fn dense_net(input: (usize, usize, usize), hidden: &[usize], num_classes: usize) -> Result<ModelSpec> {
        let (c, h, w) = input;
        let mut layers = vec![Layer::Flatten];
        let mut inputs = c * h * w;
        for &n in hidden {
            layers.push(Layer::Dense { inputs, outputs: n });
            layers.push(Layer::Relu);
            inputs = n;
        }
        layers.push(Layer::Dense { inputs, outputs: num_classes });
        ModelSpec::new(layers, input)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> (usize, usize, usize) {
        self.input
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn param_layout(&self) -> &[Segment] {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.iter().map(|s| s.len).sum()
    }

    pub fn param_layer_count(&self) -> usize {
        self.layout.len()
    }

    /// Ids of every parameterized layer, in order.
    pub fn layer_ids(&self) -> BTreeSet<LayerId> {
        self.layout.iter().map(|s| s.layer_id).collect()
    }

    /// Uniform init in +/- sqrt(6 / (fan_in + fan_out)) per layer, zero biases.
    pub fn init_params<T: Scalar>(&self, rng: &mut ChaCha8Rng) -> ParamVector<T> {
        let mut params = ParamVector::zeros_like(&self.layout);
        for (li, layer) in self.layers.iter().enumerate() {
            let Some(ordinal) = self.param_ordinal[li] else { continue };
            let (weights, fan_in, fan_out) = match *layer {
                Layer::Conv { in_ch, out_ch, kernel, .. } => (
                    out_ch * in_ch * kernel * kernel,
                    in_ch * kernel * kernel,
                    out_ch * kernel * kernel,
                ),
                Layer::Dense { inputs, outputs } => (outputs * inputs, inputs, outputs),
                _ => unreachable!(),
            };
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let seg = params.segment_mut(ordinal);
            for value in seg.iter_mut().take(weights) {
                *value = T::from_f64(rng.gen_range(-bound..=bound));
            }
            // biases stay zero
        }
        params
    }

    fn check_batch<T: Scalar>(&self, batch: &Tensor<T>) -> Result<usize> {
        let (c, h, w) = self.input;
        let s = batch.shape();
        if s.len() != 4 || s[1] != c || s[2] != h || s[3] != w {
            return Err(Error::InvalidArgument(format!(
                "batch shape {:?} does not match model input {}x{}x{}",
                s, c, h, w
            )));
        }
        Ok(s[0])
    }

    fn check_params<T: Scalar>(&self, params: &ParamVector<T>) -> Result<()> {
        if params.segments != self.layout {
            return Err(Error::InvalidArgument(
                "parameter layout does not match model".into(),
            ));
        }
        Ok(())
    }

    pub fn forward<T: Scalar>(&self, params: &ParamVector<T>, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let trace = self.run_forward(params, batch)?;
        Ok(trace.acts.into_iter().last().expect("nonempty model"))
    }

    fn run_forward<T: Scalar>(&self, params: &ParamVector<T>, batch: &Tensor<T>) -> Result<TraceData<T>> {
        let b = self.check_batch(batch)?;
        self.check_params(params)?;
        let mut acts: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_idx: Vec<Option<Vec<u32>>> = vec![None; self.layers.len()];
        acts.push(batch.clone());
        for (li, layer) in self.layers.iter().enumerate() {
            let x = acts.last().unwrap();
            let out = match *layer {
                Layer::Conv { in_ch, out_ch, kernel, stride, pad } => {
                    let dims = ConvDims::of(x.shape(), in_ch, out_ch, kernel, stride, pad);
                    conv_forward(x, params.segment(self.param_ordinal[li].unwrap()), &dims)
                }
                Layer::Relu => {
                    let mut y = x.clone();
                    for v in y.data_mut() {
                        if *v < T::zero() {
                            *v = T::zero();
                        }
                    }
                    y
                }
                Layer::MaxPool { size } => {
                    let (y, idx) = maxpool_forward(x, size);
                    pool_idx[li] = Some(idx);
                    y
                }
                Layer::Flatten => {
                    let n: usize = x.shape()[1..].iter().product();
                    x.clone().reshaped(vec![b, n])
                }
                Layer::Dense { inputs, outputs } => dense_forward(
                    x,
                    params.segment(self.param_ordinal[li].unwrap()),
                    inputs,
                    outputs,
                ),
            };
            debug_assert_eq!(out.shape(), self.shapes[li].dims(b).as_slice());
            acts.push(out);
        }
        Ok(TraceData { acts, pool_idx })
    }

    /// Mean cross-entropy and exact gradients for every parameterized layer.
    pub fn loss_and_grad<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        inputs: &Tensor<T>,
        labels: &[u8],
    ) -> Result<(T, ParamVector<T>)> {
        self.loss_and_grad_filtered(params, inputs, labels, None)
    }

    /// As `loss_and_grad`, but the backward pass may stop once every layer in
    /// `wanted` has its gradient (layers below the lowest wanted one are
    /// skipped). Gradients of skipped layers are zero.
    pub fn loss_and_grad_filtered<T: Scalar>(
        &self,
        params: &ParamVector<T>,
        inputs: &Tensor<T>,
        labels: &[u8],
        wanted: Option<&BTreeSet<LayerId>>,
    ) -> Result<(T, ParamVector<T>)> {
        let b = self.check_batch(inputs)?;
        if b == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if labels.len() != b {
            return Err(Error::InvalidArgument(format!(
                "{} labels for batch of {}",
                labels.len(),
                b
            )));
        }
        let stop_at = match wanted {
            None => 0,
            Some(set) => {
                if set.is_empty() {
                    return Err(Error::InvalidArgument("empty gradient filter".into()));
                }
                let lowest = *set.iter().next().unwrap();
                self.param_ordinal
                    .iter()
                    .position(|o| *o == Some(lowest))
                    .ok_or_else(|| {
                        Error::InvalidArgument(format!("filter names unknown layer {}", lowest))
                    })?
            }
        };
        let trace = self.run_forward(params, inputs)?;
        let logits = trace.acts.last().unwrap();
        let (loss, mut d) = softmax_xent(logits, labels)?;
        let mut grads = ParamVector::zeros_like(&self.layout);
        for li in (stop_at..self.layers.len()).rev() {
            let x = &trace.acts[li];
            let y = &trace.acts[li + 1];
            let need_dx = li > stop_at;
            d = match self.layers[li] {
                Layer::Conv { in_ch, out_ch, kernel, stride, pad } => {
                    let dims = ConvDims::of(x.shape(), in_ch, out_ch, kernel, stride, pad);
                    let ordinal = self.param_ordinal[li].unwrap();
                    conv_backward(
                        x,
                        params.segment(ordinal),
                        &d,
                        &dims,
                        grads.segment_mut(ordinal),
                        need_dx,
                    )
                }
                Layer::Relu => {
                    let mut dx = d;
                    for (g, out) in dx.data_mut().iter_mut().zip(y.data()) {
                        if *out <= T::zero() {
                            *g = T::zero();
                        }
                    }
                    dx
                }
                Layer::MaxPool { .. } => {
                    let idx = trace.pool_idx[li].as_ref().unwrap();
                    let mut dx = Tensor::zeros(x.shape().to_vec());
                    for (pos, &src) in idx.iter().enumerate() {
                        dx.data_mut()[src as usize] = d.data()[pos];
                    }
                    dx
                }
                Layer::Flatten => d.reshaped(x.shape().to_vec()),
                Layer::Dense { inputs, outputs } => {
                    let ordinal = self.param_ordinal[li].unwrap();
                    dense_backward(
                        x,
                        params.segment(ordinal),
                        &d,
                        inputs,
                        outputs,
                        grads.segment_mut(ordinal),
                        need_dx,
                    )
                }
            };
        }
        Ok((loss, grads))
    }
}

struct TraceData<T> {
    acts: Vec<Tensor<T>>,
    pool_idx: Vec<Option<Vec<u32>>>,
}

#[derive(Clone, Copy)]
struct ConvDims {
    batch: usize,
    ic: usize,
    oc: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn of(shape: &[usize], ic: usize, oc: usize, k: usize, stride: usize, pad: usize) -> ConvDims {
        let (h, w) = (shape[2], shape[3]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        ConvDims { batch: shape[0], ic, oc, k, stride, pad, h, w, oh, ow }
    }
    fn ickk(&self) -> usize {
        self.ic * self.k * self.k
    }
    fn cols(&self) -> usize {
        self.batch * self.oh * self.ow
    }
}

/// Unrolls one sample's receptive fields into `col` columns
/// `[col_off, col_off + oh*ow)`; `col` is row-major `[ickk, n_total]`.
fn im2col_sample<T: Scalar>(x: &[T], col: &mut [T], n_total: usize, col_off: usize, d: &ConvDims) {
    let ohw = d.oh * d.ow;
    let mut r = 0usize;
    for c in 0..d.ic {
        let plane = &x[c * d.h * d.w..(c + 1) * d.h * d.w];
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = &mut col[r * n_total + col_off..r * n_total + col_off + ohw];
                let mut p = 0usize;
                for i in 0..d.oh {
                    let ih = (i * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        for _ in 0..d.ow {
                            row[p] = T::zero();
                            p += 1;
                        }
                        continue;
                    }
                    let base = ih as usize * d.w;
                    for j in 0..d.ow {
                        let iw = (j * d.stride + kj) as isize - d.pad as isize;
                        row[p] = if iw < 0 || iw >= d.w as isize {
                            T::zero()
                        } else {
                            plane[base + iw as usize]
                        };
                        p += 1;
                    }
                }
                r += 1;
            }
        }
    }
}

/// Scatters one sample's column gradients back onto the input image.
fn col2im_sample<T: Scalar>(dcol: &[T], dx: &mut [T], n_total: usize, col_off: usize, d: &ConvDims) {
    let mut r = 0usize;
    for c in 0..d.ic {
        let plane_off = c * d.h * d.w;
        for ki in 0..d.k {
            for kj in 0..d.k {
                let row = &dcol[r * n_total + col_off..];
                for i in 0..d.oh {
                    let ih = (i * d.stride + ki) as isize - d.pad as isize;
                    if ih < 0 || ih >= d.h as isize {
                        continue;
                    }
                    let base = plane_off + ih as usize * d.w;
                    for j in 0..d.ow {
                        let iw = (j * d.stride + kj) as isize - d.pad as isize;
                        if iw < 0 || iw >= d.w as isize {
                            continue;
                        }
                        dx[base + iw as usize] += row[i * d.ow + j];
                    }
                }
                r += 1;
            }
        }
    }
}

fn build_col<T: Scalar>(x: &Tensor<T>, d: &ConvDims) -> Vec<T> {
    let n = d.cols();
    let mut col = vec![T::zero(); d.ickk() * n];
    for s in 0..d.batch {
        im2col_sample(x.sample(s), &mut col, n, s * d.oh * d.ow, d);
    }
    col
}

fn conv_forward<T: Scalar>(x: &Tensor<T>, seg: &[T], d: &ConvDims) -> Tensor<T> {
    let ickk = d.ickk();
    let n = d.cols();
    let ohw = d.oh * d.ow;
    let (weights, bias) = seg.split_at(d.oc * ickk);
    let col = build_col(x, d);
    let mut yflat = vec![T::zero(); d.oc * n];
    matmul(d.oc, ickk, n, weights, false, &col, false, &mut yflat);
    let mut out = Tensor::zeros(vec![d.batch, d.oc, d.oh, d.ow]);
    let data = out.data_mut();
    for s in 0..d.batch {
        for o in 0..d.oc {
            let dst = &mut data[(s * d.oc + o) * ohw..(s * d.oc + o + 1) * ohw];
            dst.copy_from_slice(&yflat[o * n + s * ohw..o * n + (s + 1) * ohw]);
            for v in dst.iter_mut() {
                *v += bias[o];
            }
        }
    }
    out
}

fn conv_backward<T: Scalar>(
    x: &Tensor<T>,
    seg: &[T],
    dy: &Tensor<T>,
    d: &ConvDims,
    grad_seg: &mut [T],
    need_dx: bool,
) -> Tensor<T> {
    let ickk = d.ickk();
    let n = d.cols();
    let ohw = d.oh * d.ow;
    let weights = &seg[..d.oc * ickk];
    let col = build_col(x, d);

    // regroup dy [b, oc, ohw] as [oc, b*ohw]
    let mut dyflat = vec![T::zero(); d.oc * n];
    for s in 0..d.batch {
        for o in 0..d.oc {
            dyflat[o * n + s * ohw..o * n + (s + 1) * ohw]
                .copy_from_slice(&dy.data()[(s * d.oc + o) * ohw..(s * d.oc + o + 1) * ohw]);
        }
    }

    let (dw, db) = grad_seg.split_at_mut(d.oc * ickk);
    matmul(d.oc, n, ickk, &dyflat, false, &col, true, dw);
    for o in 0..d.oc {
        db[o] = dyflat[o * n..(o + 1) * n].iter().copied().sum();
    }

    if !need_dx {
        return Tensor::zeros(vec![0]);
    }
    let mut dcol = vec![T::zero(); ickk * n];
    matmul(ickk, d.oc, n, weights, true, &dyflat, false, &mut dcol);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let plane = d.ic * d.h * d.w;
    for s in 0..d.batch {
        col2im_sample(&dcol, &mut dx.data_mut()[s * plane..(s + 1) * plane], n, s * ohw, d);
    }
    dx
}

fn maxpool_forward<T: Scalar>(x: &Tensor<T>, size: usize) -> (Tensor<T>, Vec<u32>) {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (h / size, w / size);
    let mut out = Tensor::zeros(vec![b, c, oh, ow]);
    let mut idx = vec![0u32; b * c * oh * ow];
    let xd = x.data();
    let od = out.data_mut();
    let mut p = 0usize;
    for s in 0..b {
        for ch in 0..c {
            let plane_off = (s * c + ch) * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best_at = plane_off + (i * size) * w + j * size;
                    let mut best = xd[best_at];
                    for di in 0..size {
                        for dj in 0..size {
                            let at = plane_off + (i * size + di) * w + (j * size + dj);
                            if xd[at] > best {
                                best = xd[at];
                                best_at = at;
                            }
                        }
                    }
                    od[p] = best;
                    idx[p] = best_at as u32;
                    p += 1;
                }
            }
        }
    }
    (out, idx)
}

fn dense_forward<T: Scalar>(x: &Tensor<T>, seg: &[T], inputs: usize, outputs: usize) -> Tensor<T> {
    let b = x.shape()[0];
    let (weights, bias) = seg.split_at(outputs * inputs);
    let mut out = Tensor::zeros(vec![b, outputs]);
    // y = x * Wᵀ; W stored row-major (outputs x inputs)
    matmul(b, inputs, outputs, x.data(), false, weights, true, out.data_mut());
    let od = out.data_mut();
    for s in 0..b {
        for o in 0..outputs {
            od[s * outputs + o] += bias[o];
        }
    }
    out
}

fn dense_backward<T: Scalar>(
    x: &Tensor<T>,
    seg: &[T],
    dy: &Tensor<T>,
    inputs: usize,
    outputs: usize,
    grad_seg: &mut [T],
    need_dx: bool,
) -> Tensor<T> {
    let b = x.shape()[0];
    let weights = &seg[..outputs * inputs];
    let (dw, db) = grad_seg.split_at_mut(outputs * inputs);
    // dW = dyᵀ * x ; dy stored row-major (b x outputs)
    matmul(outputs, b, inputs, dy.data(), true, x.data(), false, dw);
    for o in 0..outputs {
        db[o] = (0..b).map(|s| dy.data()[s * outputs + o]).sum();
    }
    if !need_dx {
        return Tensor::zeros(vec![0]);
    }
    let mut dx = Tensor::zeros(vec![b, inputs]);
    matmul(b, outputs, inputs, dy.data(), false, weights, false, dx.data_mut());
    dx
}

/// Mean cross-entropy over the batch plus d(loss)/d(logits).
fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[u8]) -> Result<(T, Tensor<T>)> {
    let b = logits.shape()[0];
    let nc = logits.shape()[1];
    let inv_b = T::one() / T::from_f64(b as f64);
    let mut d = Tensor::zeros(vec![b, nc]);
    let mut total = T::zero();
    for s in 0..b {
        let z = &logits.data()[s * nc..(s + 1) * nc];
        let y = labels[s] as usize;
        if y >= nc {
            return Err(Error::InvalidArgument(format!(
                "label {} out of range for {} classes",
                y, nc
            )));
        }
        let m = z.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for &v in z {
            sum += (v - m).exp();
        }
        total += m + sum.ln() - z[y];
        let row = &mut d.data_mut()[s * nc..(s + 1) * nc];
        for c in 0..nc {
            let p = (z[c] - m).exp() / sum;
            row[c] = (p - if c == y { T::one() } else { T::zero() }) * inv_b;
        }
    }
    Ok((total * inv_b, d))
}

/// Index of the row-maximum; ties resolve to the lowest class index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0usize;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
