//! Network architectures, parameter sets and forward passes.
//!
//! Dense weights are stored `[fan_in, fan_out]` so a layer computes `X·W (+ b)`
//! on row-major `[batch, fan_in]` inputs. Convolution kernels are
//! `[out_channels, in_channels, kh, kw]` and act as cross-correlations on
//! `[batch, channels, height, width]` inputs. Biases are optional and off by
//! default.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    LeakyRelu(f64),
    Identity,
    Softmax,
}

impl Activation {
    pub const DEFAULT_LEAK: f64 = 0.01;

    fn scalar(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > a * x {
                    x
                } else {
                    a * x
                }
            }
            Activation::Identity | Activation::Softmax => x,
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "identity" | "linear" => Activation::Identity,
            "softmax" => Activation::Softmax,
            "leaky_relu" => Activation::LeakyRelu(Self::DEFAULT_LEAK),
            _ => {
                let alpha = s
                    .strip_prefix("leaky_relu(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|a| a.trim().parse::<f64>().ok());
                match alpha {
                    Some(a) if (0.0..1.0).contains(&a) => Activation::LeakyRelu(a),
                    _ => {
                        return Err(Error::Unknown {
                            kind: "activation",
                            name: s.to_string(),
                        })
                    }
                }
            }
        })
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Sigmoid => f.write_str("sigmoid"),
            Activation::Tanh => f.write_str("tanh"),
            Activation::Relu => f.write_str("relu"),
            Activation::LeakyRelu(a) => write!(f, "leaky_relu({a})"),
            Activation::Identity => f.write_str("identity"),
            Activation::Softmax => f.write_str("softmax"),
        }
    }
}

/// Applies an activation elementwise. Softmax acts along the last axis.
pub fn activation(kind: Activation, x: &Tensor) -> Result<Tensor> {
    match kind {
        Activation::Softmax => softmax(x),
        k => Ok(x.map(|v| k.scalar(v))),
    }
}

/// Numerically stable softmax along the last axis.
pub fn softmax(f: &Tensor) -> Result<Tensor> {
    if !f.is_finite() {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let k = *f.shape().last().unwrap_or(&1);
    let mut out = f.clone();
    for row in out.data_mut().chunks_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Records an activation on the tape.
pub fn apply_activation(tape: &mut Tape, kind: Activation, x: Var) -> Result<Var> {
    match kind {
        Activation::Sigmoid => tape.sigmoid(x),
        Activation::Tanh => tape.tanh(x),
        Activation::Relu => tape.relu(x),
        Activation::LeakyRelu(a) => tape.leaky_relu(x, a),
        Activation::Identity => Ok(x),
        Activation::Softmax => {
            let logp = log_softmax(tape, x)?;
            tape.exp(logp)
        }
    }
}

/// Row-wise log-softmax of a `[n, k]` logit matrix.
///
/// The row maxima are subtracted as constants; the result does not depend on
/// them, so neither does its gradient.
pub fn log_softmax(tape: &mut Tape, logits: Var) -> Result<Var> {
    let v = tape.value(logits);
    let shape = v.shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::InvalidShape(format!("log_softmax expects [n, k], got {shape:?}")));
    }
    let k = shape[1];
    let mut shift = Vec::with_capacity(v.len());
    for row in v.data().chunks(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift.extend(core::iter::repeat_n(-m, k));
    }
    let shift = tape.constant(Tensor::new(shape, shift)?);
    let s = tape.add(logits, shift)?;
    let e = tape.exp(s)?;
    let z = tape.row_sum(e)?;
    let lz = tape.log(z)?;
    let lz = tape.broadcast_cols(lz, k)?;
    tape.sub(s, lz)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "regression" => Ok(Task::Regression),
            "classification" => Ok(Task::Classification),
            other => Err(Error::Unknown {
                kind: "task",
                name: other.to_string(),
            }),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Regression => "regression",
            Task::Classification => "classification",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Dense { fan_in: usize, fan_out: usize, bias: bool },
    Conv2d { conv: Conv2dSpec, bias: bool },
    Activation(Activation),
    Flatten,
    /// Drops units flowing into the next dense layer with probability `p`.
    Dropout { p: f64 },
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    fn weight_shape(&self) -> Option<(Vec<usize>, Option<Vec<usize>>)> {
        match *self {
            LayerSpec::Dense { fan_in, fan_out, bias } => {
                Some((vec![fan_in, fan_out], bias.then(|| vec![fan_out])))
            }
            LayerSpec::Conv2d { conv, bias } => Some((
                vec![conv.out_channels, conv.in_channels, conv.kernel.0, conv.kernel.1],
                bias.then(|| vec![conv.out_channels]),
            )),
            _ => None,
        }
    }
}

/// An ordered stack of layers with a single output head.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    output_dim: usize,
    task: Task,
}

impl NetworkSpec {
    /// Validates dimension compatibility and the output-head rule: regression
    /// heads end in a dense layer (optionally followed by an identity
    /// activation), classification heads end in softmax.
    pub fn new(layers: Vec<LayerSpec>, input_shape: Vec<usize>, task: Task) -> Result<Self> {
        let mut shape = input_shape.clone();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!("input shape {shape:?}")));
        }
        for (i, layer) in layers.iter().enumerate() {
            let bad = |d: String| Error::InvalidShape(format!("layer {i}: {d}"));
            match layer {
                LayerSpec::Dense { fan_in, fan_out, .. } => {
                    if shape.len() != 1 || shape[0] != *fan_in || *fan_out == 0 {
                        return Err(bad(format!("dense {fan_in}->{fan_out} after {shape:?}")));
                    }
                    shape = vec![*fan_out];
                }
                LayerSpec::Conv2d { conv, .. } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("conv2d needs [c, h, w] input, got {shape:?}")));
                    }
                    let geo = ConvGeometry::new(
                        &[1, shape[0], shape[1], shape[2]],
                        &[conv.out_channels, conv.in_channels, conv.kernel.0, conv.kernel.1],
                        conv.stride,
                        conv.padding,
                    )
                    .map_err(|e| bad(e.to_string()))?;
                    shape = vec![conv.out_channels, geo.out_h(), geo.out_w()];
                }
                LayerSpec::Flatten => shape = vec![shape.iter().product()],
                LayerSpec::Dropout { p } => {
                    if !(0.0..1.0).contains(p) {
                        return Err(bad(format!("dropout rate {p} outside [0, 1)")));
                    }
                }
                LayerSpec::Activation(Activation::LeakyRelu(a)) if !(0.0..1.0).contains(a) => {
                    return Err(bad(format!("leaky_relu slope {a} outside [0, 1)")));
                }
                LayerSpec::Activation(_) => {}
            }
        }
        if shape.len() != 1 {
            return Err(Error::InvalidShape(format!("network output {shape:?} is not a vector")));
        }
        let softmaxes = layers
            .iter()
            .filter(|l| matches!(l, LayerSpec::Activation(Activation::Softmax)))
            .count();
        let head_ok = match task {
            Task::Regression => {
                softmaxes == 0
                    && matches!(
                        layers.iter().rev().find(|l| !matches!(l, LayerSpec::Activation(Activation::Identity))),
                        Some(LayerSpec::Dense { .. })
                    )
            }
            Task::Classification => {
                softmaxes == 1 && matches!(layers.last(), Some(LayerSpec::Activation(Activation::Softmax)))
            }
        };
        if !head_ok {
            return Err(Error::invalid(match task {
                Task::Regression => "regression networks must end in a dense layer with no output activation",
                Task::Classification => "classification networks must end in a single softmax",
            }));
        }
        Ok(Self {
            layers,
            input_shape,
            output_dim: shape[0],
            task,
        })
    }

    /// Fully connected network with the same activation on every hidden layer.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize, act: Activation, task: Task, bias: bool) -> Result<Self> {
        let mut layers = Vec::new();
        let mut fan_in = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::Dense { fan_in, fan_out: h, bias });
            layers.push(LayerSpec::Activation(act));
            fan_in = h;
        }
        layers.push(LayerSpec::Dense {
            fan_in,
            fan_out: output_dim,
            bias,
        });
        if task == Task::Classification {
            layers.push(LayerSpec::Activation(Activation::Softmax));
        }
        Self::new(layers, vec![input_dim], task)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn task(&self) -> Task {
        self.task
    }

    /// Total number of scalar parameters `P`.
    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .filter_map(LayerSpec::weight_shape)
            .map(|(w, b)| w.iter().product::<usize>() + b.map_or(0, |b| b[0]))
            .sum()
    }

    /// Indices of dense layers, in order.
    pub fn dense_layers(&self) -> impl Iterator<Item = usize> + '_ {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Dense { .. }))
            .map(|(i, _)| i)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// One concrete weight assignment for a [`NetworkSpec`], keyed by layer index.
///
/// The flat ordering used by [`ParameterSet::to_flat`] is: layers in index
/// order, weight before bias, each row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    layers: BTreeMap<usize, LayerParams>,
}

impl ParameterSet {
    pub fn from_layers(spec: &NetworkSpec, layers: BTreeMap<usize, LayerParams>) -> Result<Self> {
        let set = Self { layers };
        set.check(spec)?;
        Ok(set)
    }

    pub fn filled(spec: &NetworkSpec, value: f64) -> Self {
        let layers = spec
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| {
                l.weight_shape().map(|(w, b)| {
                    (
                        i,
                        LayerParams {
                            weight: Tensor::full(&w, value),
                            bias: b.map(|b| Tensor::full(&b, value)),
                        },
                    )
                })
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(spec: &NetworkSpec) -> Self {
        Self::filled(spec, 0.0)
    }

    /// Independent `N(0, std²)` draws for every parameter.
    pub fn random<R: Rng + ?Sized>(spec: &NetworkSpec, std: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        for v in p.values_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v = std * z;
        }
        p
    }

    fn check(&self, spec: &NetworkSpec) -> Result<()> {
        for (i, l) in spec.layers.iter().enumerate() {
            match (l.weight_shape(), self.layers.get(&i)) {
                (None, None) => {}
                (Some((w, b)), Some(p)) => {
                    if p.weight.shape() != w.as_slice() || p.bias.as_ref().map(|t| t.shape().to_vec()) != b {
                        return Err(Error::InvalidShape(format!("parameters of layer {i} do not match the spec")));
                    }
                }
                _ => return Err(Error::InvalidShape(format!("parameter presence mismatch at layer {i}"))),
            }
        }
        if self.layers.keys().any(|&k| k >= spec.layers.len()) {
            return Err(Error::InvalidShape("parameters for a layer outside the spec".into()));
        }
        Ok(())
    }

    pub fn layer(&self, index: usize) -> Option<&LayerParams> {
        self.layers.get(&index)
    }

    pub fn layer_mut(&mut self, index: usize) -> Option<&mut LayerParams> {
        self.layers.get_mut(&index)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &LayerParams)> {
        self.layers.iter().map(|(k, v)| (*k, v))
    }

    /// Number of scalar parameters.
    pub fn len(&self) -> usize {
        self.layers
            .values()
            .map(|p| p.weight.len() + p.bias.as_ref().map_or(0, Tensor::len))
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.values().flat_map(|p| {
            p.weight
                .data()
                .iter()
                .chain(p.bias.iter().flat_map(|b| b.data().iter()))
        })
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.values_mut().flat_map(|p| {
            let LayerParams { weight, bias } = p;
            weight
                .data_mut()
                .iter_mut()
                .chain(bias.iter_mut().flat_map(|b| b.data_mut().iter_mut()))
        })
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    pub fn from_flat(spec: &NetworkSpec, flat: &[f64]) -> Result<Self> {
        let mut p = Self::zeros(spec);
        if flat.len() != p.len() {
            return Err(Error::InvalidShape(format!(
                "flat vector has {} entries, network has {} parameters",
                flat.len(),
                p.len()
            )));
        }
        for (dst, &src) in p.values_mut().zip(flat) {
            *dst = src;
        }
        Ok(p)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        let mut p = self.clone();
        for v in p.values_mut() {
            *v = f(*v);
        }
        p
    }

    /// Tape leaf names `w{layer}` / `b{layer}`.
    pub fn leaf_names(layer: usize) -> (String, String) {
        (format!("w{layer}"), format!("b{layer}"))
    }
}

/// Tape handles for the parameters of each layer.
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    layers: BTreeMap<usize, (Var, Option<Var>)>,
}

impl ParamVars {
    /// Binds every parameter tensor as a leaf named with `prefix`.
    pub fn bind(tape: &mut Tape, params: &ParameterSet, prefix: &str, trainable: bool) -> Result<Self> {
        let mut layers = BTreeMap::new();
        for (i, p) in params.iter() {
            let (wn, bn) = ParameterSet::leaf_names(i);
            let w = tape.input(&format!("{prefix}{wn}"), p.weight.clone(), trainable)?;
            let b = match &p.bias {
                Some(b) => Some(tape.input(&format!("{prefix}{bn}"), b.clone(), trainable)?),
                None => None,
            };
            layers.insert(i, (w, b));
        }
        Ok(Self { layers })
    }

    pub fn insert(&mut self, layer: usize, weight: Var, bias: Option<Var>) {
        self.layers.insert(layer, (weight, bias));
    }

    pub fn get(&self, layer: usize) -> Option<(Var, Option<Var>)> {
        self.layers.get(&layer).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, Var, Option<Var>)> + '_ {
        self.layers.iter().map(|(&i, &(w, b))| (i, w, b))
    }

    /// Flattened gradient in [`ParameterSet::to_flat`] order.
    pub fn flat_grad(&self, tape: &Tape, grads: &crate::autodiff::Gradients) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, w, b) in self.iter() {
            out.extend_from_slice(grads.get_or_zeros(tape, w).data());
            if let Some(b) = b {
                out.extend_from_slice(grads.get_or_zeros(tape, b).data());
            }
        }
        out
    }
}

/// Hook invoked with the input of every dense layer before it is applied.
pub type DenseInputHook<'a> = dyn FnMut(&mut Tape, usize, Var) -> Result<Var> + 'a;

/// Records the forward pass on a tape.
///
/// Classification networks stop before their softmax so callers get logits;
/// regression networks return the identity head. Without a hook, `Dropout`
/// layers scale by `1 − p` (their expectation). With a hook they pass through
/// unchanged, since the hook owns masking of dense-layer inputs.
pub fn forward_tape(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamVars,
    x: Var,
    mut hook: Option<&mut DenseInputHook<'_>>,
) -> Result<Var> {
    let in_shape = tape.value(x).shape().to_vec();
    if in_shape.len() != spec.input_shape.len() + 1 || in_shape[1..] != spec.input_shape[..] {
        return Err(Error::InvalidShape(format!(
            "input {in_shape:?} does not conform to [n, {:?}]",
            spec.input_shape
        )));
    }
    let batch = in_shape[0];
    let mut h = x;
    let n_layers = spec.layers.len();
    for (i, layer) in spec.layers.iter().enumerate() {
        h = match layer {
            LayerSpec::Dense { .. } => {
                let (w, b) = params.get(i).ok_or_else(|| Error::invalid(format!("no parameters bound for layer {i}")))?;
                let input = match hook.as_mut() {
                    Some(f) => f(tape, i, h)?,
                    None => h,
                };
                let z = tape.matmul(input, w)?;
                match b {
                    Some(b) => tape.add_bias(z, b, 1)?,
                    None => z,
                }
            }
            LayerSpec::Conv2d { conv, .. } => {
                let (w, b) = params.get(i).ok_or_else(|| Error::invalid(format!("no parameters bound for layer {i}")))?;
                let z = tape.conv2d(h, w, conv.stride, conv.padding)?;
                match b {
                    Some(b) => tape.add_bias(z, b, 1)?,
                    None => z,
                }
            }
            LayerSpec::Flatten => {
                let n = tape.value(h).len() / batch;
                tape.reshape(h, &[batch, n])?
            }
            LayerSpec::Dropout { p } => {
                if *p == 0.0 || hook.is_some() {
                    h
                } else {
                    tape.scale(h, 1.0 - p)?
                }
            }
            LayerSpec::Activation(Activation::Softmax) if i + 1 == n_layers => h,
            LayerSpec::Activation(a) => apply_activation(tape, *a, h)?,
        };
    }
    Ok(h)
}

/// Deterministic forward pass `F = g(a(X·W¹)·W²)` generalised to any depth.
///
/// Classification outputs are softmax probabilities.
pub fn mlp_forward(spec: &NetworkSpec, params: &ParameterSet, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = ParamVars::bind(&mut tape, params, "", false)?;
    let xv = tape.constant(x.clone());
    let out = forward_tape(&mut tape, spec, &vars, xv, None)?;
    match spec.task {
        Task::Classification => softmax(tape.value(out)),
        Task::Regression => Ok(tape.value(out).clone()),
    }
}

/// One convolutional layer `Φ = u(X ∗ W)` computed as a cross-correlation.
pub fn conv_forward(conv: &Conv2dSpec, kernel: &Tensor, bias: Option<&Tensor>, act: Activation, x: &Tensor) -> Result<Tensor> {
    let expect = [conv.out_channels, conv.in_channels, conv.kernel.0, conv.kernel.1];
    if kernel.shape() != expect {
        return Err(Error::InvalidShape(format!("kernel {:?}, expected {expect:?}", kernel.shape())));
    }
    let geo = ConvGeometry::new(x.shape(), kernel.shape(), conv.stride, conv.padding)?;
    let mut out = Tensor::new(geo.out_shape(), tensor::conv2d_forward(x.data(), kernel.data(), &geo))?;
    if let Some(b) = bias {
        if b.shape() != [conv.out_channels] {
            return Err(Error::InvalidShape(format!("bias {:?}", b.shape())));
        }
        let plane = geo.out_h() * geo.out_w();
        for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
            let bv = b.data()[i % conv.out_channels];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
    activation(act, &out)
}
