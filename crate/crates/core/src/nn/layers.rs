//! Layer stack: configuration, parameter initialization, forward pass with
//! caches, and exact reverse-mode backward pass.
//!
//! Tensors are NHWC. Batch-parallel sections only ever write disjoint
//! slices and reduce partial results in index order, so outputs are
//! bit-identical regardless of thread count.

use super::tensor::Tensor;
use super::NnError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum ActivationKind {
    Relu,
    LeakyRelu(f64),
    Srelu,
}

/// Declarative layer description, the unit of model configuration.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub enum LayerConfig {
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: usize,
    },
    MaxPool {
        pool: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAveragePool,
    Dense {
        units: usize,
    },
    Dropout {
        rate: f64,
    },
    Activation(ActivationKind),
    Softmax,
    Residual {
        inner: Vec<LayerConfig>,
        projection: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub kernel: Tensor, // [1, 1, in_c, out_c]
    pub bias: Tensor,
    pub stride: usize,
}

/// A configured layer together with its learned parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv2d {
        kernel: Tensor, // [kh, kw, in_c, filters]
        bias: Tensor,
        stride: (usize, usize),
        padding: usize,
    },
    MaxPool {
        pool: (usize, usize),
        stride: (usize, usize),
    },
    GlobalAveragePool,
    Dense {
        weight: Tensor, // [in, out]
        bias: Tensor,
    },
    Dropout {
        rate: f64,
    },
    Relu,
    LeakyRelu {
        alpha: f64,
    },
    Srelu {
        t_left: Tensor,
        a_left: Tensor,
        t_right: Tensor,
        a_right: Tensor,
    },
    Softmax,
    Residual {
        inner: Vec<LayerKind>,
        projection: Option<Projection>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Spatial(usize, usize, usize), // (h, w, c)
    Flat(usize),
}

impl Shape {
    fn elements(&self) -> usize {
        match *self {
            Shape::Spatial(h, w, c) => h * w * c,
            Shape::Flat(n) => n,
        }
    }

    fn channels(&self) -> usize {
        match *self {
            Shape::Spatial(_, _, c) => c,
            Shape::Flat(n) => n,
        }
    }
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let eff = input + 2 * padding;
    if eff < kernel || stride == 0 {
        None
    } else {
        Some((eff - kernel) / stride + 1)
    }
}

// ---------------------------------------------------------------------------
// Build

/// Instantiates a layer stack for a `[h, w, c]` input, initializing
/// weights fan-in-scaled uniform from the seed and biases to zero.
pub fn build_model(
    configs: &[LayerConfig],
    input: (usize, usize, usize),
    seed: u64,
) -> Result<Vec<LayerKind>, NnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shape = Shape::Spatial(input.0, input.1, input.2);
    build_stack(configs, &mut shape, &mut rng)
}

fn build_stack(
    configs: &[LayerConfig],
    shape: &mut Shape,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LayerKind>, NnError> {
    let mut layers = Vec::with_capacity(configs.len());
    for config in configs {
        layers.push(build_layer(config, shape, rng)?);
    }
    Ok(layers)
}

fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    t
}

fn build_layer(
    config: &LayerConfig,
    shape: &mut Shape,
    rng: &mut ChaCha8Rng,
) -> Result<LayerKind, NnError> {
    match *config {
        LayerConfig::Conv2d {
            filters,
            kernel: (kh, kw),
            stride: (sh, sw),
            padding,
        } => {
            if kh == 0 || kw == 0 || sh == 0 || sw == 0 || filters == 0 {
                return Err(NnError::Config("conv extents must be >= 1".into()));
            }
            let (h, w, c) = match *shape {
                Shape::Spatial(h, w, c) => (h, w, c),
                Shape::Flat(_) => {
                    return Err(NnError::Shape("conv requires a spatial input".into()))
                }
            };
            let oh = conv_out_extent(h, kh, sh, padding)
                .ok_or_else(|| NnError::Shape(format!("conv output height <= 0 for input {h}")))?;
            let ow = conv_out_extent(w, kw, sw, padding)
                .ok_or_else(|| NnError::Shape(format!("conv output width <= 0 for input {w}")))?;
            let kernel = fan_in_uniform(&[kh, kw, c, filters], kh * kw * c, rng);
            *shape = Shape::Spatial(oh, ow, filters);
            Ok(LayerKind::Conv2d {
                kernel,
                bias: Tensor::zeros(&[filters]),
                stride: (sh, sw),
                padding,
            })
        }
        LayerConfig::MaxPool {
            pool: (ph, pw),
            stride: (sh, sw),
        } => {
            if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
                return Err(NnError::Config("pool extents must be >= 1".into()));
            }
            let (h, w, c) = match *shape {
                Shape::Spatial(h, w, c) => (h, w, c),
                Shape::Flat(_) => {
                    return Err(NnError::Shape("maxpool requires a spatial input".into()))
                }
            };
            if ph > h || pw > w {
                return Err(NnError::Shape(format!(
                    "pool window {ph}x{pw} exceeds input {h}x{w}"
                )));
            }
            let oh = (h - ph) / sh + 1;
            let ow = (w - pw) / sw + 1;
            *shape = Shape::Spatial(oh, ow, c);
            Ok(LayerKind::MaxPool {
                pool: (ph, pw),
                stride: (sh, sw),
            })
        }
        LayerConfig::GlobalAveragePool => {
            let c = match *shape {
                Shape::Spatial(_, _, c) => c,
                Shape::Flat(_) => {
                    return Err(NnError::Shape(
                        "global average pool requires a spatial input".into(),
                    ))
                }
            };
            *shape = Shape::Flat(c);
            Ok(LayerKind::GlobalAveragePool)
        }
        LayerConfig::Dense { units } => {
            if units == 0 {
                return Err(NnError::Config("dense units must be >= 1".into()));
            }
            let in_features = shape.elements();
            let weight = fan_in_uniform(&[in_features, units], in_features, rng);
            *shape = Shape::Flat(units);
            Ok(LayerKind::Dense {
                weight,
                bias: Tensor::zeros(&[units]),
            })
        }
        LayerConfig::Dropout { rate } => {
            if !(0.0..1.0).contains(&rate) {
                return Err(NnError::Config(format!("dropout rate {rate} outside [0, 1)")));
            }
            Ok(LayerKind::Dropout { rate })
        }
        LayerConfig::Activation(kind) => Ok(match kind {
            ActivationKind::Relu => LayerKind::Relu,
            ActivationKind::LeakyRelu(alpha) => LayerKind::LeakyRelu { alpha },
            ActivationKind::Srelu => {
                let channels = shape.channels();
                // starts as ReLU below zero, identity in the mid band
                LayerKind::Srelu {
                    t_left: Tensor::zeros(&[channels]),
                    a_left: Tensor::zeros(&[channels]),
                    t_right: Tensor::from_data(&[channels], vec![1.0; channels]),
                    a_right: Tensor::from_data(&[channels], vec![1.0; channels]),
                }
            }
        }),
        LayerConfig::Softmax => match *shape {
            Shape::Flat(_) => Ok(LayerKind::Softmax),
            Shape::Spatial(..) => Err(NnError::Shape("softmax requires a flat input".into())),
        },
        LayerConfig::Residual {
            ref inner,
            projection,
        } => {
            let input_shape = *shape;
            let mut inner_shape = input_shape;
            let inner_layers = build_stack(inner, &mut inner_shape, rng)?;
            let proj = if inner_shape == input_shape {
                None
            } else if !projection {
                return Err(NnError::Shape(format!(
                    "residual inner stack changes shape {input_shape:?} -> {inner_shape:?} \
                     without a projection"
                )));
            } else {
                let (ih, _iw, ic) = match input_shape {
                    Shape::Spatial(h, w, c) => (h, w, c),
                    Shape::Flat(_) => {
                        return Err(NnError::Shape(
                            "residual projection requires spatial shapes".into(),
                        ))
                    }
                };
                let (oh, ow, oc) = match inner_shape {
                    Shape::Spatial(h, w, c) => (h, w, c),
                    Shape::Flat(_) => {
                        return Err(NnError::Shape(
                            "residual projection requires spatial shapes".into(),
                        ))
                    }
                };
                let stride = (1..=ih)
                    .find(|&s| {
                        conv_out_extent(ih, 1, s, 0) == Some(oh)
                            && conv_out_extent(ih, 1, s, 0).is_some()
                    })
                    .ok_or_else(|| {
                        NnError::Shape(format!(
                            "no 1x1 projection stride maps {input_shape:?} to {inner_shape:?}"
                        ))
                    })?;
                if conv_out_extent(ih, 1, stride, 0) != Some(oh)
                    || conv_out_extent(_iw_guard(input_shape), 1, stride, 0) != Some(ow)
                {
                    return Err(NnError::Shape(format!(
                        "projection stride {stride} cannot map {input_shape:?} to {inner_shape:?}"
                    )));
                }
                Some(Projection {
                    kernel: fan_in_uniform(&[1, 1, ic, oc], ic, rng),
                    bias: Tensor::zeros(&[oc]),
                    stride,
                })
            };
            *shape = inner_shape;
            Ok(LayerKind::Residual {
                inner: inner_layers,
                projection: proj,
            })
        }
    }
}

fn _iw_guard(shape: Shape) -> usize {
    match shape {
        Shape::Spatial(_, w, _) => w,
        Shape::Flat(n) => n,
    }
}

/// Recovers the declarative configuration from a built stack.
pub fn to_configs(layers: &[LayerKind]) -> Vec<LayerConfig> {
    layers
        .iter()
        .map(|l| match l {
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => LayerConfig::Conv2d {
                filters: kernel.shape()[3],
                kernel: (kernel.shape()[0], kernel.shape()[1]),
                stride: *stride,
                padding: *padding,
            },
            LayerKind::MaxPool { pool, stride } => LayerConfig::MaxPool {
                pool: *pool,
                stride: *stride,
            },
            LayerKind::GlobalAveragePool => LayerConfig::GlobalAveragePool,
            LayerKind::Dense { weight, .. } => LayerConfig::Dense {
                units: weight.shape()[1],
            },
            LayerKind::Dropout { rate } => LayerConfig::Dropout { rate: *rate },
            LayerKind::Relu => LayerConfig::Activation(ActivationKind::Relu),
            LayerKind::LeakyRelu { alpha } => {
                LayerConfig::Activation(ActivationKind::LeakyRelu(*alpha))
            }
            LayerKind::Srelu { .. } => LayerConfig::Activation(ActivationKind::Srelu),
            LayerKind::Softmax => LayerConfig::Softmax,
            LayerKind::Residual { inner, projection } => LayerConfig::Residual {
                inner: to_configs(inner),
                projection: projection.is_some(),
            },
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Parameter traversal (declaration order)

pub fn for_each_param<'a>(layers: &'a [LayerKind], f: &mut impl FnMut(&'a Tensor)) {
    for layer in layers {
        match layer {
            LayerKind::Conv2d { kernel, bias, .. } => {
                f(kernel);
                f(bias);
            }
            LayerKind::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerKind::Srelu {
                t_left,
                a_left,
                t_right,
                a_right,
            } => {
                f(t_left);
                f(a_left);
                f(t_right);
                f(a_right);
            }
            LayerKind::Residual { inner, projection } => {
                for_each_param(inner, f);
                if let Some(p) = projection {
                    f(&p.kernel);
                    f(&p.bias);
                }
            }
            _ => {}
        }
    }
}

pub fn for_each_param_mut(layers: &mut [LayerKind], f: &mut impl FnMut(&mut Tensor)) {
    for layer in layers {
        match layer {
            LayerKind::Conv2d { kernel, bias, .. } => {
                f(kernel);
                f(bias);
            }
            LayerKind::Dense { weight, bias } => {
                f(weight);
                f(bias);
            }
            LayerKind::Srelu {
                t_left,
                a_left,
                t_right,
                a_right,
            } => {
                f(t_left);
                f(a_left);
                f(t_right);
                f(a_right);
            }
            LayerKind::Residual { inner, projection } => {
                for_each_param_mut(inner, f);
                if let Some(p) = projection {
                    f(&mut p.kernel);
                    f(&mut p.bias);
                }
            }
            _ => {}
        }
    }
}

pub fn param_count(layers: &[LayerKind]) -> usize {
    let mut n = 0;
    for_each_param(layers, &mut |t| n += t.len());
    n
}

/// Adds seeded uniform noise to every parameter. Gradient checking uses
/// this to move piecewise-linear activations off their kinks and break
/// exact max-pool ties (freshly initialized SReLU maps every negative
/// pre-activation to exactly zero, which makes the loss non-smooth at the
/// evaluation point).
pub fn jitter_params(layers: &mut [LayerKind], seed: u64, amplitude: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for_each_param_mut(layers, &mut |t| {
        for v in t.data_mut() {
            *v += rng.gen_range(-amplitude..amplitude);
        }
    });
}

// ---------------------------------------------------------------------------
// Forward

#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    Train { dropout_seed: u64 },
    Infer,
}

#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    MaxPool {
        input_shape: Vec<usize>,
        argmax: Vec<u32>,
    },
    Gap {
        input_shape: Vec<usize>,
    },
    DropoutMask(Vec<f64>),
    SoftmaxOut(Tensor),
    Residual {
        input: Tensor,
        inner: Vec<Cache>,
    },
    None,
}

pub fn forward(
    layers: &[LayerKind],
    input: &Tensor,
    mode: ForwardMode,
    precision: Precision,
) -> (Tensor, Vec<Cache>) {
    let mut dropout_counter = 0u64;
    forward_stack(layers, input, mode, precision, &mut dropout_counter)
}

fn round_precision(t: &mut Tensor, precision: Precision) {
    if precision == Precision::F32 {
        t.round_to_f32();
    }
}

fn forward_stack(
    layers: &[LayerKind],
    input: &Tensor,
    mode: ForwardMode,
    precision: Precision,
    dropout_counter: &mut u64,
) -> (Tensor, Vec<Cache>) {
    let mut caches = Vec::with_capacity(layers.len());
    let mut current = input.clone();
    for layer in layers {
        let (mut out, cache) = forward_layer(layer, &current, mode, precision, dropout_counter);
        round_precision(&mut out, precision);
        caches.push(cache);
        current = out;
    }
    (current, caches)
}

fn forward_layer(
    layer: &LayerKind,
    input: &Tensor,
    mode: ForwardMode,
    precision: Precision,
    dropout_counter: &mut u64,
) -> (Tensor, Cache) {
    match layer {
        LayerKind::Conv2d {
            kernel,
            bias,
            stride,
            padding,
        } => {
            let out = conv2d_forward(input, kernel, bias, *stride, *padding);
            (out, Cache::Input(input.clone()))
        }
        LayerKind::MaxPool { pool, stride } => {
            let (out, argmax) = maxpool_forward(input, *pool, *stride);
            (
                out,
                Cache::MaxPool {
                    input_shape: input.shape().to_vec(),
                    argmax,
                },
            )
        }
        LayerKind::GlobalAveragePool => {
            let out = gap_forward(input);
            (
                out,
                Cache::Gap {
                    input_shape: input.shape().to_vec(),
                },
            )
        }
        LayerKind::Dense { weight, bias } => {
            let flat = flatten_batch(input);
            let out = dense_forward(&flat, weight, bias);
            (out, Cache::Input(flat))
        }
        LayerKind::Dropout { rate } => {
            let stream = *dropout_counter;
            *dropout_counter += 1;
            match mode {
                ForwardMode::Infer => (input.clone(), Cache::None),
                ForwardMode::Train { dropout_seed } => {
                    if *rate == 0.0 {
                        return (input.clone(), Cache::DropoutMask(vec![1.0; input.len()]));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
                    rng.set_stream(stream);
                    let keep_scale = 1.0 / (1.0 - rate);
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| {
                            if rng.gen::<f64>() < *rate {
                                0.0
                            } else {
                                keep_scale
                            }
                        })
                        .collect();
                    let mut out = input.clone();
                    for (v, m) in out.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    (out, Cache::DropoutMask(mask))
                }
            }
        }
        LayerKind::Relu => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            (out, Cache::Input(input.clone()))
        }
        LayerKind::LeakyRelu { alpha } => {
            let mut out = input.clone();
            for v in out.data_mut() {
                if *v < 0.0 {
                    *v *= alpha;
                }
            }
            (out, Cache::Input(input.clone()))
        }
        LayerKind::Srelu {
            t_left,
            a_left,
            t_right,
            a_right,
        } => {
            let channels = t_left.len();
            let mut out = input.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                let c = i % channels;
                let (tl, al) = (t_left.data()[c], a_left.data()[c]);
                let (tr, ar) = (t_right.data()[c], a_right.data()[c]);
                *v = srelu_scalar(*v, tl, al, tr, ar);
            }
            (out, Cache::Input(input.clone()))
        }
        LayerKind::Softmax => {
            let out = super::loss::softmax_rows(input);
            (out.clone(), Cache::SoftmaxOut(out))
        }
        LayerKind::Residual { inner, projection } => {
            let (inner_out, inner_caches) =
                forward_stack(inner, input, mode, precision, dropout_counter);
            let shortcut = match projection {
                None => input.clone(),
                Some(p) => conv2d_forward(input, &p.kernel, &p.bias, (p.stride, p.stride), 0),
            };
            let mut out = inner_out;
            for (v, s) in out.data_mut().iter_mut().zip(shortcut.data()) {
                *v += s;
            }
            (
                out,
                Cache::Residual {
                    input: input.clone(),
                    inner: inner_caches,
                },
            )
        }
    }
}

pub fn srelu_scalar(x: f64, tl: f64, al: f64, tr: f64, ar: f64) -> f64 {
    if x <= tl {
        al * (x - tl) + tl
    } else if x >= tr {
        ar * (x - tr) + tr
    } else {
        x
    }
}

fn flatten_batch(input: &Tensor) -> Tensor {
    let b = input.shape()[0];
    let features = input.len() / b;
    input.reshaped(&[b, features])
}

/// Each output value is the dot product of a filter with its input patch
/// plus the filter bias.
pub fn conv2d_forward(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: (usize, usize),
    padding: usize,
) -> Tensor {
    let [b, h, w, c]: [usize; 4] = input.shape().try_into().expect("conv input must be rank 4");
    let (kh, kw, kc, filters) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    assert_eq!(kc, c, "filter channel depth must equal input channels");
    let oh = conv_out_extent(h, kh, stride.0, padding).expect("non-positive conv output");
    let ow = conv_out_extent(w, kw, stride.1, padding).expect("non-positive conv output");
    let mut out = Tensor::zeros(&[b, oh, ow, filters]);
    let in_per = h * w * c;
    let out_per = oh * ow * filters;
    let in_data = input.data();
    let kdata = kernel.data();
    let bdata = bias.data();
    out.data_mut()
        .par_chunks_mut(out_per)
        .enumerate()
        .for_each(|(bi, out_chunk)| {
            let in_chunk = &in_data[bi * in_per..(bi + 1) * in_per];
            for oy in 0..oh {
                for ox in 0..ow {
                    let base = (oy * ow + ox) * filters;
                    out_chunk[base..base + filters].copy_from_slice(bdata);
                    for ky in 0..kh {
                        let iy = (oy * stride.0 + ky) as i64 - padding as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride.1 + kx) as i64 - padding as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            let in_base = ((iy as usize) * w + ix as usize) * c;
                            let k_base = (ky * kw + kx) * c * filters;
                            for ci in 0..c {
                                let x = in_chunk[in_base + ci];
                                if x == 0.0 {
                                    continue;
                                }
                                let krow = &kdata[k_base + ci * filters..k_base + (ci + 1) * filters];
                                let orow = &mut out_chunk[base..base + filters];
                                for (o, k) in orow.iter_mut().zip(krow) {
                                    *o += x * k;
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

/// Each output value is the maximum of its pooling window; ties resolve to
/// the first (row-major) position so routing is deterministic.
pub fn maxpool_forward(
    input: &Tensor,
    pool: (usize, usize),
    stride: (usize, usize),
) -> (Tensor, Vec<u32>) {
    let [b, h, w, c]: [usize; 4] = input.shape().try_into().expect("pool input must be rank 4");
    assert!(pool.0 <= h && pool.1 <= w, "pool window exceeds input");
    let oh = (h - pool.0) / stride.0 + 1;
    let ow = (w - pool.1) / stride.1 + 1;
    let mut out = Tensor::zeros(&[b, oh, ow, c]);
    let mut argmax = vec![0u32; b * oh * ow * c];
    let data = input.data();
    for bi in 0..b {
        for oy in 0..oh {
            for ox in 0..ow {
                for ci in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = 0usize;
                    for py in 0..pool.0 {
                        for px in 0..pool.1 {
                            let iy = oy * stride.0 + py;
                            let ix = ox * stride.1 + px;
                            let idx = ((bi * h + iy) * w + ix) * c + ci;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    let out_idx = ((bi * oh + oy) * ow + ox) * c + ci;
                    out.data_mut()[out_idx] = best;
                    argmax[out_idx] = best_idx as u32;
                }
            }
        }
    }
    (out, argmax)
}

fn gap_forward(input: &Tensor) -> Tensor {
    let [b, h, w, c]: [usize; 4] = input.shape().try_into().expect("gap input must be rank 4");
    let mut out = Tensor::zeros(&[b, c]);
    let inv = 1.0 / (h * w) as f64;
    for bi in 0..b {
        for iy in 0..h {
            for ix in 0..w {
                for ci in 0..c {
                    out.data_mut()[bi * c + ci] += input.data()[((bi * h + iy) * w + ix) * c + ci];
                }
            }
        }
    }
    for v in out.data_mut() {
        *v *= inv;
    }
    out
}

fn dense_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Tensor {
    let [b, features]: [usize; 2] = input.shape().try_into().expect("dense input must be rank 2");
    let (w_in, units) = (weight.shape()[0], weight.shape()[1]);
    assert_eq!(features, w_in, "dense input width mismatch");
    let mut out = Tensor::zeros(&[b, units]);
    for bi in 0..b {
        let orow = &mut out.data_mut()[bi * units..(bi + 1) * units];
        orow.copy_from_slice(bias.data());
        let irow = &input.data()[bi * features..(bi + 1) * features];
        for (fi, &x) in irow.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let wrow = &weight.data()[fi * units..(fi + 1) * units];
            for (o, wv) in orow.iter_mut().zip(wrow) {
                *o += x * wv;
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Backward

/// Exact reverse-mode gradients. Returns the gradient with respect to the
/// stack input and the parameter gradients in declaration order.
pub fn backward(
    layers: &[LayerKind],
    caches: &[Cache],
    d_out: &Tensor,
    precision: Precision,
) -> (Tensor, Vec<Tensor>) {
    let mut d_current = d_out.clone();
    // per-layer grads gathered in reverse, then flattened in forward order
    let mut per_layer: Vec<Vec<Tensor>> = Vec::with_capacity(layers.len());
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let (mut d_in, grads) = backward_layer(layer, cache, &d_current, precision);
        round_precision(&mut d_in, precision);
        per_layer.push(grads);
        d_current = d_in;
    }
    per_layer.reverse();
    (d_current, per_layer.into_iter().flatten().collect())
}

fn backward_layer(
    layer: &LayerKind,
    cache: &Cache,
    d_out: &Tensor,
    precision: Precision,
) -> (Tensor, Vec<Tensor>) {
    match (layer, cache) {
        (
            LayerKind::Conv2d {
                kernel,
                stride,
                padding,
                ..
            },
            Cache::Input(input),
        ) => {
            let (d_in, d_kernel, d_bias) = conv2d_backward(input, kernel, d_out, *stride, *padding);
            (d_in, vec![d_kernel, d_bias])
        }
        (LayerKind::MaxPool { .. }, Cache::MaxPool { input_shape, argmax }) => {
            let mut d_in = Tensor::zeros(input_shape);
            for (i, &src) in argmax.iter().enumerate() {
                d_in.data_mut()[src as usize] += d_out.data()[i];
            }
            (d_in, vec![])
        }
        (LayerKind::GlobalAveragePool, Cache::Gap { input_shape }) => {
            let (b, h, w, c) = (
                input_shape[0],
                input_shape[1],
                input_shape[2],
                input_shape[3],
            );
            let inv = 1.0 / (h * w) as f64;
            let mut d_in = Tensor::zeros(input_shape);
            for bi in 0..b {
                for iy in 0..h {
                    for ix in 0..w {
                        for ci in 0..c {
                            d_in.data_mut()[((bi * h + iy) * w + ix) * c + ci] =
                                d_out.data()[bi * c + ci] * inv;
                        }
                    }
                }
            }
            (d_in, vec![])
        }
        (LayerKind::Dense { weight, .. }, Cache::Input(input)) => {
            let [b, features]: [usize; 2] = input.shape().try_into().unwrap();
            let units = weight.shape()[1];
            let mut d_in = Tensor::zeros(&[b, features]);
            let mut d_weight = Tensor::zeros(&[features, units]);
            let mut d_bias = Tensor::zeros(&[units]);
            for bi in 0..b {
                let drow = &d_out.data()[bi * units..(bi + 1) * units];
                for (o, d) in d_bias.data_mut().iter_mut().zip(drow) {
                    *o += d;
                }
                let irow = &input.data()[bi * features..(bi + 1) * features];
                for fi in 0..features {
                    let wrow = &weight.data()[fi * units..(fi + 1) * units];
                    let x = irow[fi];
                    let mut acc = 0.0;
                    let dwrow = &mut d_weight.data_mut()[fi * units..(fi + 1) * units];
                    for ((&d, &wv), dw) in drow.iter().zip(wrow).zip(dwrow.iter_mut()) {
                        acc += d * wv;
                        *dw += d * x;
                    }
                    d_in.data_mut()[bi * features + fi] = acc;
                }
            }
            (d_in, vec![d_weight, d_bias])
        }
        (LayerKind::Dropout { .. }, Cache::None) => (d_out.clone(), vec![]),
        (LayerKind::Dropout { .. }, Cache::DropoutMask(mask)) => {
            let mut d_in = d_out.clone();
            for (v, m) in d_in.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
            (d_in, vec![])
        }
        (LayerKind::Relu, Cache::Input(input)) => {
            let mut d_in = d_out.clone();
            for (v, &x) in d_in.data_mut().iter_mut().zip(input.data()) {
                if x < 0.0 {
                    *v = 0.0;
                }
            }
            (d_in, vec![])
        }
        (LayerKind::LeakyRelu { alpha }, Cache::Input(input)) => {
            let mut d_in = d_out.clone();
            for (v, &x) in d_in.data_mut().iter_mut().zip(input.data()) {
                if x < 0.0 {
                    *v *= alpha;
                }
            }
            (d_in, vec![])
        }
        (
            LayerKind::Srelu {
                t_left,
                a_left,
                t_right,
                a_right,
            },
            Cache::Input(input),
        ) => {
            let channels = t_left.len();
            let mut d_in = d_out.clone();
            let mut d_tl = Tensor::zeros(&[channels]);
            let mut d_al = Tensor::zeros(&[channels]);
            let mut d_tr = Tensor::zeros(&[channels]);
            let mut d_ar = Tensor::zeros(&[channels]);
            for (i, v) in d_in.data_mut().iter_mut().enumerate() {
                let c = i % channels;
                let x = input.data()[i];
                let d = *v;
                let (tl, al) = (t_left.data()[c], a_left.data()[c]);
                let (tr, ar) = (t_right.data()[c], a_right.data()[c]);
                if x <= tl {
                    *v = d * al;
                    d_tl.data_mut()[c] += d * (1.0 - al);
                    d_al.data_mut()[c] += d * (x - tl);
                } else if x >= tr {
                    *v = d * ar;
                    d_tr.data_mut()[c] += d * (1.0 - ar);
                    d_ar.data_mut()[c] += d * (x - tr);
                }
                // mid band: identity, gradient passes through unchanged
            }
            (d_in, vec![d_tl, d_al, d_tr, d_ar])
        }
        (LayerKind::Softmax, Cache::SoftmaxOut(probs)) => {
            let [b, classes]: [usize; 2] = probs.shape().try_into().unwrap();
            let mut d_in = Tensor::zeros(&[b, classes]);
            for bi in 0..b {
                let p = &probs.data()[bi * classes..(bi + 1) * classes];
                let dp = &d_out.data()[bi * classes..(bi + 1) * classes];
                let dot: f64 = p.iter().zip(dp).map(|(&pi, &di)| pi * di).sum();
                let row = &mut d_in.data_mut()[bi * classes..(bi + 1) * classes];
                for ((r, &pi), &di) in row.iter_mut().zip(p).zip(dp) {
                    *r = pi * (di - dot);
                }
            }
            (d_in, vec![])
        }
        (LayerKind::Residual { inner, projection }, Cache::Residual { input, inner: ic }) => {
            let (d_inner_in, inner_grads) = backward(inner, ic, d_out, precision);
            let mut d_in = d_inner_in;
            let mut grads = inner_grads;
            match projection {
                None => {
                    for (v, d) in d_in.data_mut().iter_mut().zip(d_out.data()) {
                        *v += d;
                    }
                }
                Some(p) => {
                    let (d_short, d_pk, d_pb) = conv2d_backward(
                        input,
                        &p.kernel,
                        d_out,
                        (p.stride, p.stride),
                        0,
                    );
                    for (v, d) in d_in.data_mut().iter_mut().zip(d_short.data()) {
                        *v += d;
                    }
                    grads.push(d_pk);
                    grads.push(d_pb);
                }
            }
            (d_in, grads)
        }
        (layer, cache) => unreachable!(
            "layer/cache mismatch: {:?} with {:?}",
            std::mem::discriminant(layer),
            std::mem::discriminant(cache)
        ),
    }
}

fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    d_out: &Tensor,
    stride: (usize, usize),
    padding: usize,
) -> (Tensor, Tensor, Tensor) {
    let [b, h, w, c]: [usize; 4] = input.shape().try_into().unwrap();
    let (kh, kw, _, filters) = (
        kernel.shape()[0],
        kernel.shape()[1],
        kernel.shape()[2],
        kernel.shape()[3],
    );
    let [_, oh, ow, _]: [usize; 4] = d_out.shape().try_into().unwrap();
    let in_per = h * w * c;
    let out_per = oh * ow * filters;
    let mut d_in = Tensor::zeros(input.shape());
    let in_data = input.data();
    let kdata = kernel.data();
    let dout_data = d_out.data();

    // batch-parallel: each task owns one sample's d_in slice and produces
    // local kernel/bias gradients, summed afterwards in index order
    let partials: Vec<(Vec<f64>, Vec<f64>)> = d_in
        .data_mut()
        .par_chunks_mut(in_per)
        .enumerate()
        .map(|(bi, din_chunk)| {
            let in_chunk = &in_data[bi * in_per..(bi + 1) * in_per];
            let dout_chunk = &dout_data[bi * out_per..(bi + 1) * out_per];
            let mut dk = vec![0.0; kernel.len()];
            let mut db = vec![0.0; filters];
            for oy in 0..oh {
                for ox in 0..ow {
                    let dbase = (oy * ow + ox) * filters;
                    let drow = &dout_chunk[dbase..dbase + filters];
                    for (dbv, &d) in db.iter_mut().zip(drow) {
                        *dbv += d;
                    }
                    for ky in 0..kh {
                        let iy = (oy * stride.0 + ky) as i64 - padding as i64;
                        if iy < 0 || iy >= h as i64 {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (ox * stride.1 + kx) as i64 - padding as i64;
                            if ix < 0 || ix >= w as i64 {
                                continue;
                            }
                            let in_base = ((iy as usize) * w + ix as usize) * c;
                            let k_base = (ky * kw + kx) * c * filters;
                            for ci in 0..c {
                                let x = in_chunk[in_base + ci];
                                let krow =
                                    &kdata[k_base + ci * filters..k_base + (ci + 1) * filters];
                                let dkrow = &mut dk
                                    [k_base + ci * filters..k_base + (ci + 1) * filters];
                                let mut acc = 0.0;
                                for ((&d, &kv), dkv) in
                                    drow.iter().zip(krow).zip(dkrow.iter_mut())
                                {
                                    acc += d * kv;
                                    *dkv += d * x;
                                }
                                din_chunk[in_base + ci] += acc;
                            }
                        }
                    }
                }
            }
            (dk, db)
        })
        .collect();

    let mut d_kernel = Tensor::zeros(kernel.shape());
    let mut d_bias = Tensor::zeros(&[filters]);
    let _ = b;
    for (dk, db) in partials {
        for (a, v) in d_kernel.data_mut().iter_mut().zip(dk) {
            *a += v;
        }
        for (a, v) in d_bias.data_mut().iter_mut().zip(db) {
            *a += v;
        }
    }
    (d_in, d_kernel, d_bias)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(b: usize, h: usize, w: usize, c: usize, data: Vec<f64>) -> Tensor {
        Tensor::from_data(&[b, h, w, c], data)
    }

    #[test]
    fn conv_of_ones_sums_patch() {
        let input = t4(1, 3, 3, 1, vec![1.0; 9]);
        let kernel = Tensor::from_data(&[2, 2, 1, 1], vec![1.0; 4]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernel, &bias, (1, 1), 0);
        assert_eq!(out.shape(), &[1, 2, 2, 1]);
        assert!(out.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn identity_one_by_one_conv() {
        let input = t4(1, 3, 3, 1, (0..9).map(|v| v as f64).collect());
        let kernel = Tensor::from_data(&[1, 1, 1, 1], vec![1.0]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernel, &bias, (1, 1), 0);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn stride_two_shrinks_output() {
        let input = t4(1, 4, 4, 1, vec![1.0; 16]);
        let kernel = Tensor::from_data(&[2, 2, 1, 1], vec![1.0; 4]);
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernel, &bias, (2, 2), 0);
        assert_eq!(out.shape(), &[1, 2, 2, 1]);
    }

    #[test]
    fn conv_shape_formula_exhaustive() {
        for input in 1..=16usize {
            for kernel in 1..=input {
                for stride in 1..=3usize {
                    for padding in 0..=2usize {
                        let out = conv_out_extent(input, kernel, stride, padding).unwrap();
                        assert_eq!(out, (input + 2 * padding - kernel) / stride + 1);
                    }
                }
            }
        }
    }

    #[test]
    fn maxpool_takes_window_max() {
        let input = t4(1, 2, 2, 1, vec![1.0, 5.0, 3.0, 2.0]);
        let (out, _) = maxpool_forward(&input, (2, 2), (2, 2));
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn maxpool_constant_input_stays_constant() {
        let input = t4(2, 4, 4, 3, vec![2.5; 2 * 4 * 4 * 3]);
        let (out, _) = maxpool_forward(&input, (2, 2), (2, 2));
        assert_eq!(out.shape(), &[2, 2, 2, 3]);
        assert!(out.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn maxpool_halves_paper_shape() {
        // [100,100,32] -> [50,50,32] with a 2x2/2 pool
        let input = Tensor::zeros(&[1, 100, 100, 32]);
        let (out, _) = maxpool_forward(&input, (2, 2), (2, 2));
        assert_eq!(out.shape(), &[1, 50, 50, 32]);
    }

    #[test]
    fn relu_and_leaky_values() {
        let layers = vec![LayerKind::Relu];
        let input = Tensor::from_data(&[1, 2], vec![-2.0, 3.0]);
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.data(), &[0.0, 3.0]);
        let layers = vec![LayerKind::LeakyRelu { alpha: 0.1 }];
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert!((out.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(out.data()[1], 3.0);
    }

    #[test]
    fn srelu_with_wide_right_band_matches_relu() {
        // t_l = 0, a_l = 0, t_r far right: identical to relu
        let channels = 4;
        let srelu = LayerKind::Srelu {
            t_left: Tensor::zeros(&[channels]),
            a_left: Tensor::zeros(&[channels]),
            t_right: Tensor::from_data(&[channels], vec![1e300; channels]),
            a_right: Tensor::from_data(&[channels], vec![1.0; channels]),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..32).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let input = Tensor::from_data(&[8, 4], data.clone());
        let (out, _) = forward(&[srelu], &input, ForwardMode::Infer, Precision::F64);
        let expected: Vec<f64> = data.iter().map(|&x| x.max(0.0)).collect();
        assert_eq!(out.data(), &expected[..]);
    }

    #[test]
    fn dropout_rate_zero_and_infer_are_identity() {
        let layers = vec![LayerKind::Dropout { rate: 0.0 }];
        let input = Tensor::from_data(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]);
        let (out, _) = forward(
            &layers,
            &input,
            ForwardMode::Train { dropout_seed: 1 },
            Precision::F64,
        );
        assert_eq!(out.data(), input.data());
        let layers = vec![LayerKind::Dropout { rate: 0.9 }];
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn dropout_preserves_expectation_statistically() {
        let layers = vec![LayerKind::Dropout { rate: 0.25 }];
        let n = 1_000_000;
        let input = Tensor::from_data(&[1, n], vec![1.0; n]);
        let (out, _) = forward(
            &layers,
            &input,
            ForwardMode::Train { dropout_seed: 99 },
            Precision::F64,
        );
        let survivors = out.data().iter().filter(|&&v| v != 0.0).count();
        let frac = survivors as f64 / n as f64;
        assert!((frac - 0.75).abs() < 0.01, "survivor fraction {frac}");
        let mean: f64 = out.data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn residual_with_zero_inner_is_identity() {
        let mut layers = build_model(
            &[LayerConfig::Residual {
                inner: vec![LayerConfig::Conv2d {
                    filters: 2,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: 1,
                }],
                projection: false,
            }],
            (4, 4, 2),
            5,
        )
        .unwrap();
        for_each_param_mut(&mut layers, &mut |t| {
            for v in t.data_mut() {
                *v = 0.0;
            }
        });
        let data: Vec<f64> = (0..32).map(|v| v as f64 * 0.5).collect();
        let input = Tensor::from_data(&[1, 4, 4, 2], data);
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn residual_zero_conv_with_bias_broadcasts_bias() {
        let mut layers = build_model(
            &[LayerConfig::Residual {
                inner: vec![LayerConfig::Conv2d {
                    filters: 1,
                    kernel: (1, 1),
                    stride: (1, 1),
                    padding: 0,
                }],
                projection: false,
            }],
            (2, 2, 1),
            5,
        )
        .unwrap();
        for_each_param_mut(&mut layers, &mut |t| {
            for v in t.data_mut() {
                *v = 0.0;
            }
        });
        // set the conv bias to 0.25
        if let LayerKind::Residual { inner, .. } = &mut layers[0] {
            if let LayerKind::Conv2d { bias, .. } = &mut inner[0] {
                bias.data_mut()[0] = 0.25;
            }
        }
        let input = Tensor::from_data(&[1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.data(), &[1.25, 2.25, 3.25, 4.25]);
    }

    #[test]
    fn shape_changing_residual_without_projection_errors() {
        let err = build_model(
            &[LayerConfig::Residual {
                inner: vec![LayerConfig::Conv2d {
                    filters: 2,
                    kernel: (3, 3),
                    stride: (2, 2),
                    padding: 1,
                }],
                projection: false,
            }],
            (8, 8, 1),
            5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("projection"), "{err}");
    }

    #[test]
    fn residual_projection_resolves_downsample() {
        let layers = build_model(
            &[LayerConfig::Residual {
                inner: vec![LayerConfig::Conv2d {
                    filters: 4,
                    kernel: (3, 3),
                    stride: (2, 2),
                    padding: 1,
                }],
                projection: true,
            }],
            (8, 8, 2),
            5,
        )
        .unwrap();
        let input = Tensor::zeros(&[1, 8, 8, 2]);
        let (out, _) = forward(&layers, &input, ForwardMode::Infer, Precision::F64);
        assert_eq!(out.shape(), &[1, 4, 4, 4]);
    }

    #[test]
    fn forward_is_deterministic_in_train_mode() {
        let layers = build_model(
            &[
                LayerConfig::Conv2d {
                    filters: 3,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: 0,
                },
                LayerConfig::Activation(ActivationKind::Srelu),
                LayerConfig::GlobalAveragePool,
                LayerConfig::Dropout { rate: 0.3 },
                LayerConfig::Dense { units: 2 },
                LayerConfig::Softmax,
            ],
            (8, 8, 1),
            7,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..64).map(|_| rng.gen::<f64>()).collect();
        let input = Tensor::from_data(&[1, 8, 8, 1], data);
        let mode = ForwardMode::Train { dropout_seed: 42 };
        let (a, _) = forward(&layers, &input, mode, Precision::F64);
        let (b, _) = forward(&layers, &input, mode, Precision::F64);
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn config_round_trip() {
        let configs = vec![
            LayerConfig::Conv2d {
                filters: 4,
                kernel: (3, 3),
                stride: (1, 1),
                padding: 1,
            },
            LayerConfig::Activation(ActivationKind::Srelu),
            LayerConfig::Residual {
                inner: vec![LayerConfig::Conv2d {
                    filters: 4,
                    kernel: (3, 3),
                    stride: (1, 1),
                    padding: 1,
                }],
                projection: false,
            },
            LayerConfig::MaxPool {
                pool: (2, 2),
                stride: (2, 2),
            },
            LayerConfig::GlobalAveragePool,
            LayerConfig::Dropout { rate: 0.2 },
            LayerConfig::Dense { units: 3 },
            LayerConfig::Softmax,
        ];
        let layers = build_model(&configs, (8, 8, 1), 1).unwrap();
        assert_eq!(to_configs(&layers), configs);
    }
}
