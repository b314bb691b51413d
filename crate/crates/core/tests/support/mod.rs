//! Shared helpers for integration tests: an independently coded per-element
//! forward pass, a central finite-difference gradient check, and random small
//! model generation.

use pfl_core::model::{Layer, ModelSpec};
use pfl_core::params::ParamVector;
use pfl_core::scalar::Scalar;
use pfl_core::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Per-element forward pass for one [c, h, w] sample, written with plain
/// nested loops and no shared code with the engine's GEMM path.
pub fn naive_forward<T: Scalar>(spec: &ModelSpec, params: &ParamVector<T>, image: &[T]) -> Vec<T> {
    enum S {
        Chw(usize, usize, usize),
        Flat(usize),
    }
    let (c0, h0, w0) = spec.input_shape();
    let mut shape = S::Chw(c0, h0, w0);
    let mut x: Vec<T> = image.to_vec();
    let mut ordinal = 0usize;
    for layer in spec.layers() {
        match *layer {
            Layer::Conv { in_ch, out_ch, kernel, stride, pad } => {
                let S::Chw(_, h, w) = shape else { panic!("conv on flat") };
                let oh = (h + 2 * pad - kernel) / stride + 1;
                let ow = (w + 2 * pad - kernel) / stride + 1;
                let seg = params.segment(ordinal);
                ordinal += 1;
                let weights = &seg[..out_ch * in_ch * kernel * kernel];
                let bias = &seg[out_ch * in_ch * kernel * kernel..];
                let mut y = vec![T::zero(); out_ch * oh * ow];
                for oc in 0..out_ch {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut acc = bias[oc];
                            for ic in 0..in_ch {
                                for ki in 0..kernel {
                                    for kj in 0..kernel {
                                        let ih = (i * stride + ki) as isize - pad as isize;
                                        let iw = (j * stride + kj) as isize - pad as isize;
                                        if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize
                                        {
                                            continue;
                                        }
                                        let xv =
                                            x[(ic * h + ih as usize) * w + iw as usize];
                                        let wv = weights[((oc * in_ch + ic) * kernel + ki)
                                            * kernel
                                            + kj];
                                        acc = acc + wv * xv;
                                    }
                                }
                            }
                            y[(oc * oh + i) * ow + j] = acc;
                        }
                    }
                }
                x = y;
                shape = S::Chw(out_ch, oh, ow);
            }
            Layer::Relu => {
                for v in &mut x {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            Layer::MaxPool { size } => {
                let S::Chw(c, h, w) = shape else { panic!("pool on flat") };
                let oh = h / size;
                let ow = w / size;
                let mut y = vec![T::zero(); c * oh * ow];
                for ch in 0..c {
                    for i in 0..oh {
                        for j in 0..ow {
                            let mut best = T::neg_infinity();
                            for di in 0..size {
                                for dj in 0..size {
                                    let v = x[(ch * h + i * size + di) * w + j * size + dj];
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                            y[(ch * oh + i) * ow + j] = best;
                        }
                    }
                }
                x = y;
                shape = S::Chw(c, oh, ow);
            }
            Layer::Flatten => {
                let n = x.len();
                shape = S::Flat(n);
            }
            Layer::Dense { inputs, outputs } => {
                let S::Flat(n) = shape else { panic!("dense on image") };
                assert_eq!(n, inputs);
                let seg = params.segment(ordinal);
                ordinal += 1;
                let weights = &seg[..outputs * inputs];
                let bias = &seg[outputs * inputs..];
                let mut y = vec![T::zero(); outputs];
                for (o, out) in y.iter_mut().enumerate() {
                    let mut acc = bias[o];
                    for i in 0..inputs {
                        acc = acc + weights[o * inputs + i] * x[i];
                    }
                    *out = acc;
                }
                x = y;
                shape = S::Flat(outputs);
            }
        }
    }
    x
}

/// Worst relative error between analytic gradients and central finite
/// differences over every parameter coordinate, at 64-bit precision.
pub fn fd_worst_rel_err(
    spec: &ModelSpec,
    params: &ParamVector<f64>,
    inputs: &Tensor<f64>,
    labels: &[u8],
    step: f64,
) -> f64 {
    let (_, analytic) = spec.loss_and_grad(params, inputs, labels).unwrap();
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for i in 0..params.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + step;
        let (lp, _) = spec.loss_and_grad(&probe, inputs, labels).unwrap();
        probe.values[i] = orig - step;
        let (lm, _) = spec.loss_and_grad(&probe, inputs, labels).unwrap();
        probe.values[i] = orig;
        let fd = (lp - lm) / (2.0 * step);
        let a = analytic.values[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-3);
        if rel > worst {
            worst = rel;
        }
    }
    worst
}

/// Random small architectures (at most `max_params` parameters) mixing dense
/// and convolutional stacks.
pub fn random_small_net(rng: &mut ChaCha8Rng, max_params: usize) -> ModelSpec {
    loop {
        let kind = rng.gen_range(0..4u32);
        let nc = rng.gen_range(2..=4usize);
        let candidate = match kind {
            0 => {
                // flatten -> dense -> relu -> dense
                let side = rng.gen_range(3..=5usize);
                let hidden = rng.gen_range(4..=10usize);
                ModelSpec::dense_net((1, side, side), &[hidden], nc)
            }
            1 => {
                // single conv stack
                let side = rng.gen_range(6..=8usize);
                let oc = rng.gen_range(2..=3usize);
                let pad = rng.gen_range(0..=1usize);
                ModelSpec::new(
                    vec![
                        Layer::Conv { in_ch: 1, out_ch: oc, kernel: 3, stride: 1, pad },
                        Layer::Relu,
                        Layer::MaxPool { size: 2 },
                        Layer::Flatten,
                        Layer::Dense {
                            inputs: oc * ((side + 2 * pad - 3 + 1) / 2) * ((side + 2 * pad - 3 + 1) / 2),
                            outputs: nc,
                        },
                    ],
                    (1, side, side),
                )
            }
            2 => {
                // strided conv, no pool
                let side = 7;
                let oc = 2;
                ModelSpec::new(
                    vec![
                        Layer::Conv { in_ch: 1, out_ch: oc, kernel: 3, stride: 2, pad: 1 },
                        Layer::Relu,
                        Layer::Flatten,
                        Layer::Dense { inputs: oc * 4 * 4, outputs: nc },
                    ],
                    (1, side, side),
                )
            }
            _ => {
                // two convolutions
                let side = 8;
                ModelSpec::new(
                    vec![
                        Layer::Conv { in_ch: 1, out_ch: 2, kernel: 3, stride: 1, pad: 1 },
                        Layer::Relu,
                        Layer::MaxPool { size: 2 },
                        Layer::Conv { in_ch: 2, out_ch: 3, kernel: 3, stride: 1, pad: 1 },
                        Layer::Relu,
                        Layer::MaxPool { size: 2 },
                        Layer::Flatten,
                        Layer::Dense { inputs: 3 * 2 * 2, outputs: nc },
                    ],
                    (1, side, side),
                )
            }
        };
        let spec = candidate.expect("generated net is consistent");
        if spec.param_count() <= max_params {
            return spec;
        }
    }
}

/// Uniform random batch in [0,1] with uniform random labels.
pub fn random_batch<T: Scalar>(
    rng: &mut ChaCha8Rng,
    spec: &ModelSpec,
    batch: usize,
) -> (Tensor<T>, Vec<u8>) {
    let (c, h, w) = spec.input_shape();
    let data: Vec<T> = (0..batch * c * h * w)
        .map(|_| T::from_f64(rng.gen_range(0.0..1.0)))
        .collect();
    let labels: Vec<u8> = (0..batch)
        .map(|_| rng.gen_range(0..spec.num_classes()) as u8)
        .collect();
    (Tensor::new(vec![batch, c, h, w], data).unwrap(), labels)
}
