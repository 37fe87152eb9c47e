//! Tape-based reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! Building a graph evaluates it eagerly: every op method computes its value
//! and appends a node. Node inputs always refer to earlier nodes, so the
//! append order is a topological order and one reverse sweep visits each node
//! exactly once. A finished tape can be re-evaluated with new values bound to
//! its named inputs through [`Tape::forward_eval`].
//!
//! ReLU (built from `maximum(x, 0)`) has subgradient 0 at the kink: ties in
//! `maximum(a, b)` send the gradient to `b`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::tensor::{self, ConvGeometry, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input { name: String, trainable: bool },
    Constant,
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Maximum(Var, Var),
    Exp(Var),
    Log(Var),
    Tanh(Var),
    Recip(Var),
    Sum(Var),
    Conv2d { input: Var, kernel: Var, stride: usize, padding: usize },
    Slice { x: Var, axis: usize, start: usize, end: usize },
    Reshape { x: Var, shape: Vec<usize> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input { .. } => "input",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MatMul(..) => "matmul",
            Op::AddBias { .. } => "add_bias",
            Op::Maximum(..) => "maximum",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Tanh(_) => "tanh",
            Op::Recip(_) => "reciprocal",
            Op::Sum(_) => "sum",
            Op::Conv2d { .. } => "conv2d",
            Op::Slice { .. } => "slice",
            Op::Reshape { .. } => "reshape",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only record of primitive operations.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    outputs: BTreeMap<String, Var>,
}

/// Gradients of one scalar output with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` when the output does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var` with unvisited nodes reported as zeros.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Tensor {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(var).shape()))
    }
}

fn shape_err(node: usize, op: &'static str, detail: String) -> Error {
    Error::Shape { node, op, detail }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    /// Binds a named leaf. Trainable leaves are reported by [`Tape::backward_grad`].
    pub fn input(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<Var> {
        if self.find_input(name).is_some() {
            return Err(Error::invalid(format!("input `{name}` bound twice")));
        }
        Ok(self.push_node(
            Op::Input {
                name: name.to_string(),
                trainable,
            },
            value,
        ))
    }

    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var> {
        self.input(name, value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_node(Op::Constant, value)
    }

    pub fn set_output(&mut self, name: &str, var: Var) {
        self.outputs.insert(name.to_string(), var);
    }

    pub fn output(&self, name: &str) -> Option<Var> {
        self.outputs.get(name).copied()
    }

    pub fn find_input(&self, name: &str) -> Option<Var> {
        self.nodes.iter().position(|n| matches!(&n.op, Op::Input { name: nm, .. } if nm == name)).map(Var)
    }

    fn push_node(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let index = self.nodes.len();
        let value = self.eval_op(index, &op)?;
        Ok(self.push_node(op, value))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a, c))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a, b))
    }

    /// Adds a 1-d `bias` along `axis` of `x`, broadcasting over every other axis.
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        self.push(Op::AddBias { x, bias, axis })
    }

    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Maximum(a, b))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Tanh(a))
    }

    pub fn recip(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Recip(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sum(a))
    }

    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        self.push(Op::Conv2d {
            input,
            kernel,
            stride,
            padding,
        })
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.push(Op::Slice { x, axis, start, end })
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape {
            x,
            shape: shape.to_vec(),
        })
    }

    // Composites built only from the primitives above.

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.neg(b)?;
        self.add(a, nb)
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let k = self.constant(Tensor::full(self.value(a).shape(), c));
        self.add(a, k)
    }

    pub fn mul_const(&mut self, a: Var, c: Tensor) -> Result<Var> {
        let k = self.constant(c);
        self.mul(a, k)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let z = self.constant(Tensor::zeros(self.value(a).shape()));
        self.maximum(a, z)
    }

    /// `max(x, αx)` for `0 ≤ α < 1`.
    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let s = self.scale(a, alpha)?;
        self.maximum(a, s)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        let e = self.exp(n)?;
        let d = self.add_scalar(e, 1.0)?;
        self.recip(d)
    }

    /// `ln(1 + eˣ)`; overflows for arguments above ~709.
    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let e = self.exp(a)?;
        let d = self.add_scalar(e, 1.0)?;
        self.log(d)
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let l = self.log(a)?;
        let h = self.scale(l, 0.5)?;
        self.exp(h)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    /// Sums a `[n, k]` matrix over its last axis, giving `[n, 1]`.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() != 2 {
            return Err(shape_err(a.0, "row_sum", format!("expected 2-d input, got {shape:?}")));
        }
        let ones = self.constant(Tensor::ones(&[shape[1], 1]));
        self.matmul(a, ones)
    }

    /// Repeats a `[n, 1]` column across `k` columns.
    pub fn broadcast_cols(&mut self, a: Var, k: usize) -> Result<Var> {
        let ones = self.constant(Tensor::ones(&[1, k]));
        self.matmul(a, ones)
    }

    fn eval_op(&self, index: usize, op: &Op) -> Result<Tensor> {
        let name = op.name();
        let val = |v: &Var| -> Result<&Tensor> {
            if v.0 >= index {
                return Err(shape_err(index, name, format!("input node {} is not earlier", v.0)));
            }
            Ok(&self.nodes[v.0].value)
        };
        let same_shape = |a: &Tensor, b: &Tensor| -> Result<()> {
            if a.shape() != b.shape() {
                return Err(shape_err(index, name, format!("{:?} vs {:?}", a.shape(), b.shape())));
            }
            Ok(())
        };
        let wrap = |r: Result<Tensor>| r.map_err(|e| shape_err(index, name, e.to_string()));
        Ok(match op {
            Op::Input { .. } | Op::Constant => self.nodes[index].value.clone(),
            Op::Add(a, b) => {
                let (a, b) = (val(a)?, val(b)?);
                same_shape(a, b)?;
                wrap(a.zip_map(b, |x, y| x + y))?
            }
            Op::Mul(a, b) => {
                let (a, b) = (val(a)?, val(b)?);
                same_shape(a, b)?;
                wrap(a.zip_map(b, |x, y| x * y))?
            }
            Op::Scale(a, c) => val(a)?.map(|x| x * c),
            Op::MatMul(a, b) => {
                let (a, b) = (val(a)?, val(b)?);
                let (sa, sb) = (a.shape(), b.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(shape_err(index, name, format!("cannot multiply {sa:?} by {sb:?}")));
                }
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                wrap(Tensor::new(vec![n, m], tensor::matmul(a.data(), b.data(), n, k, m)))?
            }
            Op::AddBias { x, bias, axis } => {
                let (x, b) = (val(x)?, val(bias)?);
                let (n_outer, c, n_inner) = bias_layout(x.shape(), b.shape(), *axis)
                    .map_err(|d| shape_err(index, name, d))?;
                let mut out = x.clone();
                let data = out.data_mut();
                for o in 0..n_outer {
                    for (ci, &bv) in b.data().iter().enumerate().take(c) {
                        let base = (o * c + ci) * n_inner;
                        for v in &mut data[base..base + n_inner] {
                            *v += bv;
                        }
                    }
                }
                out
            }
            Op::Maximum(a, b) => {
                let (a, b) = (val(a)?, val(b)?);
                same_shape(a, b)?;
                wrap(a.zip_map(b, |x, y| if x > y { x } else { y }))?
            }
            Op::Exp(a) => val(a)?.map(f64::exp),
            Op::Log(a) => val(a)?.map(f64::ln),
            Op::Tanh(a) => val(a)?.map(f64::tanh),
            Op::Recip(a) => val(a)?.map(|x| 1.0 / x),
            Op::Sum(a) => Tensor::scalar(val(a)?.sum()),
            Op::Conv2d {
                input,
                kernel,
                stride,
                padding,
            } => {
                let (x, k) = (val(input)?, val(kernel)?);
                let geo = ConvGeometry::new(x.shape(), k.shape(), *stride, *padding)
                    .map_err(|e| shape_err(index, name, e.to_string()))?;
                wrap(Tensor::new(geo.out_shape(), tensor::conv2d_forward(x.data(), k.data(), &geo)))?
            }
            Op::Slice { x, axis, start, end } => {
                let x = val(x)?;
                let (outer, len, inner) = slice_layout(x.shape(), *axis, *start, *end)
                    .map_err(|d| shape_err(index, name, d))?;
                let mut data = Vec::with_capacity(outer * (end - start) * inner);
                for o in 0..outer {
                    let base = o * len * inner;
                    data.extend_from_slice(&x.data()[base + start * inner..base + end * inner]);
                }
                let mut shape = x.shape().to_vec();
                shape[*axis] = end - start;
                wrap(Tensor::new(shape, data))?
            }
            Op::Reshape { x, shape } => wrap(val(x)?.reshape(shape))?,
        })
    }

    /// Re-evaluates every node after rebinding the named inputs.
    ///
    /// Returns the values of all outputs registered with [`Tape::set_output`].
    pub fn forward_eval(&mut self, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
        for name in inputs.keys() {
            if self.find_input(name).is_none() {
                return Err(Error::Unknown {
                    kind: "input",
                    name: name.clone(),
                });
            }
        }
        for i in 0..self.nodes.len() {
            let op = self.nodes[i].op.clone();
            let value = match &op {
                Op::Input { name, .. } => match inputs.get(name) {
                    Some(v) => v.clone(),
                    None => continue,
                },
                Op::Constant => continue,
                _ => self.eval_op(i, &op)?,
            };
            self.nodes[i].value = value;
        }
        Ok(self
            .outputs
            .iter()
            .map(|(k, v)| (k.clone(), self.nodes[v.0].value.clone()))
            .collect())
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::NonScalar(out.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = &node.value;
            match &node.op {
                Op::Input { .. } | Op::Constant => {
                    grads[i] = Some(g);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    accumulate(&mut grads, *a, g.zip_map(bv, |x, y| x * y)?);
                    accumulate(&mut grads, *b, g.zip_map(av, |x, y| x * y)?);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|x| x * c)),
                Op::MatMul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (n, k, m) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                    let ga = tensor::matmul_nt(g.data(), bv.data(), n, k, m);
                    let gb = tensor::matmul_tn(av.data(), g.data(), n, k, m);
                    accumulate(&mut grads, *a, Tensor::new(vec![n, k], ga)?);
                    accumulate(&mut grads, *b, Tensor::new(vec![k, m], gb)?);
                }
                Op::AddBias { x, bias, axis } => {
                    let bv = self.value(*bias);
                    let (n_outer, c, n_inner) = bias_layout(g.shape(), bv.shape(), *axis)
                        .map_err(|d| shape_err(i, "add_bias", d))?;
                    let mut gb = vec![0.0; c];
                    for o in 0..n_outer {
                        for (ci, acc) in gb.iter_mut().enumerate() {
                            let base = (o * c + ci) * n_inner;
                            *acc += g.data()[base..base + n_inner].iter().sum::<f64>();
                        }
                    }
                    accumulate(&mut grads, *bias, Tensor::new(bv.shape().to_vec(), gb)?);
                    accumulate(&mut grads, *x, g);
                }
                Op::Maximum(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let mut ga = g.clone();
                    let mut gb = g;
                    for ((x, y), (da, db)) in av
                        .data()
                        .iter()
                        .zip(bv.data())
                        .zip(ga.data_mut().iter_mut().zip(gb.data_mut().iter_mut()))
                    {
                        if x > y {
                            *db = 0.0;
                        } else {
                            *da = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, g.zip_map(y, |d, e| d * e)?),
                Op::Log(a) => accumulate(&mut grads, *a, g.zip_map(self.value(*a), |d, x| d / x)?),
                Op::Tanh(a) => accumulate(&mut grads, *a, g.zip_map(y, |d, t| d * (1.0 - t * t))?),
                Op::Recip(a) => accumulate(&mut grads, *a, g.zip_map(y, |d, r| -d * r * r)?),
                Op::Sum(a) => {
                    let s = g.data()[0];
                    accumulate(&mut grads, *a, Tensor::full(self.value(*a).shape(), s));
                }
                Op::Conv2d {
                    input,
                    kernel,
                    stride,
                    padding,
                } => {
                    let (xv, kv) = (self.value(*input), self.value(*kernel));
                    let geo = ConvGeometry::new(xv.shape(), kv.shape(), *stride, *padding)?;
                    let (dx, dk) = tensor::conv2d_backward(xv.data(), kv.data(), g.data(), &geo);
                    accumulate(&mut grads, *input, Tensor::new(xv.shape().to_vec(), dx)?);
                    accumulate(&mut grads, *kernel, Tensor::new(kv.shape().to_vec(), dk)?);
                }
                Op::Slice { x, axis, start, end } => {
                    let xv = self.value(*x);
                    let (outer, len, inner) = slice_layout(xv.shape(), *axis, *start, *end)
                        .map_err(|d| shape_err(i, "slice", d))?;
                    let mut gx = Tensor::zeros(xv.shape());
                    let w = (end - start) * inner;
                    for o in 0..outer {
                        let dst = o * len * inner + start * inner;
                        gx.data_mut()[dst..dst + w].copy_from_slice(&g.data()[o * w..(o + 1) * w]);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Reshape { x, .. } => {
                    let shape = self.value(*x).shape().to_vec();
                    accumulate(&mut grads, *x, Tensor::new(shape, g.into_data())?);
                }
            }
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads })
    }

    /// Gradient of the named scalar output with respect to every trainable leaf.
    ///
    /// Leaves the output does not depend on get zero tensors.
    pub fn backward_grad(&self, output: &str) -> Result<BTreeMap<String, Tensor>> {
        let out = self.output(output).ok_or_else(|| Error::Unknown {
            kind: "output",
            name: output.to_string(),
        })?;
        let grads = self.backward(out)?;
        Ok(self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match &n.op {
                Op::Input { name, trainable: true } => Some((name.clone(), grads.get_or_zeros(self, Var(i)))),
                _ => None,
            })
            .collect())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        slot => *slot = Some(g),
    }
}

fn bias_layout(x: &[usize], b: &[usize], axis: usize) -> core::result::Result<(usize, usize, usize), String> {
    if b.len() != 1 || axis >= x.len() || x[axis] != b[0] {
        return Err(format!("bias {b:?} does not match axis {axis} of {x:?}"));
    }
    Ok((x[..axis].iter().product(), b[0], x[axis + 1..].iter().product()))
}

fn slice_layout(
    x: &[usize],
    axis: usize,
    start: usize,
    end: usize,
) -> core::result::Result<(usize, usize, usize), String> {
    if axis >= x.len() || start >= end || end > x[axis] {
        return Err(format!("slice {start}..{end} on axis {axis} of {x:?}"));
    }
    Ok((x[..axis].iter().product(), x[axis], x[axis + 1..].iter().product()))
}

/// Step rule for [`finite_diff_grad`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FdStep {
    /// The same `h` for every coordinate.
    Absolute(f64),
    /// `h · (1 + |xᵢ|)` per coordinate.
    Relative(f64),
}

/// Central-difference gradient `(f(x+h) − f(x−h)) / 2h`, one coordinate at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &[f64], step: FdStep) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let h_of = |xi: f64| match step {
        FdStep::Absolute(h) => h,
        FdStep::Relative(h) => h * (1.0 + xi.abs()),
    };
    match step {
        FdStep::Absolute(h) | FdStep::Relative(h) if !(h > 0.0) => {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        _ => {}
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = h_of(x[i]);
        point[i] = x[i] + h;
        let up = f(&point)?;
        point[i] = x[i] - h;
        let down = f(&point)?;
        point[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("objective at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph() {
        let mut t = Tape::new();
        let x = t.input("x", Tensor::from_vec(vec![1.0, 2.0, 3.0]), false).unwrap();
        t.set_output("y", x);
        let out = t.forward_eval(&BTreeMap::new()).unwrap();
        assert_eq!(out["y"].data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn square_value_and_derivative() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::scalar(3.0)).unwrap();
        let y = t.mul(x, x).unwrap();
        t.set_output("y", y);
        assert_eq!(t.value(y).item(), Some(9.0));
        let g = t.backward_grad("y").unwrap();
        assert_eq!(g["x"].item(), Some(6.0));
    }

    #[test]
    fn sigmoid_slope_at_origin() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::scalar(0.0)).unwrap();
        let s = t.sigmoid(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!((g.get(x).unwrap().item().unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn relu_kink_has_zero_subgradient() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::from_vec(vec![0.0, 1.0, -1.0])).unwrap();
        let r = t.relu(x).unwrap();
        let s = t.sum(r).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        assert!(matches!(t.backward(x), Err(Error::NonScalar(_))));
    }

    #[test]
    fn unvisited_leaf_gets_zero_gradient() {
        let mut t = Tape::new();
        let x = t.param("x", Tensor::scalar(2.0)).unwrap();
        let _unused = t.param("w", Tensor::from_vec(vec![1.0, 1.0])).unwrap();
        let y = t.square(x).unwrap();
        t.set_output("y", y);
        let g = t.backward_grad("y").unwrap();
        assert_eq!(g["w"].data(), &[0.0, 0.0]);
    }

    #[test]
    fn shape_error_names_node() {
        let mut t = Tape::new();
        let a = t.param("a", Tensor::from_vec(vec![1.0, 2.0])).unwrap();
        let b = t.param("b", Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        match t.add(a, b) {
            Err(Error::Shape { node, op, .. }) => {
                assert_eq!(node, 2);
                assert_eq!(op, "add");
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn forward_eval_rebinds_inputs() {
        let mut t = Tape::new();
        let x = t.input("x", Tensor::scalar(3.0), true).unwrap();
        let y = t.square(x).unwrap();
        t.set_output("y", y);
        let mut inputs = BTreeMap::new();
        inputs.insert("x".into(), Tensor::scalar(4.0));
        assert_eq!(t.forward_eval(&inputs).unwrap()["y"].item(), Some(16.0));
        assert_eq!(t.backward_grad("y").unwrap()["x"].item(), Some(8.0));
        inputs.insert("x".into(), Tensor::from_vec(vec![1.0, 2.0]));
        let mut bad = Tape::new();
        let p = bad.input("x", Tensor::from_vec(vec![1.0, 2.0]), false).unwrap();
        let q = bad.constant(Tensor::from_vec(vec![1.0, 2.0]));
        let _ = bad.add(p, q).unwrap();
        inputs.insert("x".into(), Tensor::from_vec(vec![1.0, 2.0, 3.0]));
        assert!(matches!(bad.forward_eval(&inputs), Err(Error::Shape { node: 2, .. })));
    }

    #[test]
    fn fd_of_square() {
        let g = finite_diff_grad(|x| Ok(x[0] * x[0]), &[3.0], FdStep::Absolute(1e-6)).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
        let c = finite_diff_grad(|_| Ok(4.2), &[1.0, -2.0], FdStep::Absolute(1e-6)).unwrap();
        assert_eq!(c, vec![0.0, 0.0]);
        assert!(finite_diff_grad(|_| Ok(f64::NAN), &[1.0], FdStep::Absolute(1e-6)).is_err());
    }
}
