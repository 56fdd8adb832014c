//! Linear operation tape for reverse-mode differentiation.
//!
//! Forward calls append a node holding the computed value and whatever the
//! VJP needs. [`Tape::backward`] replays the nodes in reverse, visiting each
//! exactly once.

use crate::error::{Result, TensorError};
use crate::ops::{self, BatchNormCache, BinaryOp, SobelCache};
use crate::params::ParamStore;
use crate::tensor::{PadMode, Shape, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Conv2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
        pad: PadMode,
    },
    ConvTranspose2d {
        x: Var,
        k: Var,
        b: Var,
        stride: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Binary {
        op: BinaryOp,
        a: Var,
        b: Var,
    },
    AddScalar(Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Relu(Var),
    ChannelMax {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Resize(Var),
    Softmax(Var),
    Transpose(Var),
    Reshape(Var),
    Bmm(Var, Var),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        cache: BatchNormCache,
    },
    Concat(Vec<Var>),
    Sobel {
        x: Var,
        cache: SobelCache,
    },
    Bce {
        p: Var,
        target: Tensor,
        eps: f64,
    },
    Sum(Var),
    Dot {
        x: Var,
        weights: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation. Single writer; one pass per tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(Var, String)>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the leaf `v`, or `None` if the loss does not depend on it.
    /// Intermediate results are released during the backward sweep.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn bias_of(t: &Tensor) -> &[f64] {
    t.data()
}

fn vector(data: Vec<f64>) -> Tensor {
    let c = data.len();
    Tensor::from_vec(Shape::new(1, c, 1, 1), data).expect("vector shape")
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Records a constant input.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Records a parameter from `store`; its gradient is reported by
    /// [`Tape::param_grads`].
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| TensorError::MissingParam(name.to_string()))?
            .clone();
        let v = self.push(value, Op::Leaf);
        self.params.push((v, name.to_string()));
        Ok(v)
    }

    /// Parameter bindings in the order they were recorded.
    pub fn params(&self) -> &[(Var, String)] {
        &self.params
    }

    /// `(name, gradient)` for each recorded parameter that received one.
    pub fn param_grads<'a>(
        &'a self,
        grads: &'a Gradients,
    ) -> impl Iterator<Item = (&'a str, &'a Tensor)> + 'a {
        self.params
            .iter()
            .filter_map(|(v, name)| grads.get(*v).map(|g| (name.as_str(), g)))
    }

    pub fn conv2d(&mut self, x: Var, k: Var, b: Var, stride: usize, pad: PadMode) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(k), bias_of(self.value(b)), stride, pad)?;
        Ok(self.push(
            y,
            Op::Conv2d {
                x,
                k,
                b,
                stride,
                pad,
            },
        ))
    }

    pub fn conv_transpose2d(&mut self, x: Var, k: Var, b: Var, stride: usize) -> Result<Var> {
        let y = ops::conv_transpose2d(self.value(x), self.value(k), bias_of(self.value(b)), stride)?;
        Ok(self.push(y, Op::ConvTranspose2d { x, k, b, stride }))
    }

    pub fn fully_connected(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::fully_connected(self.value(x), self.value(w), bias_of(self.value(b)))?;
        Ok(self.push(y, Op::Linear { x, w, b }))
    }

    pub fn binary(&mut self, op: BinaryOp, a: Var, b: Var) -> Result<Var> {
        let y = ops::elementwise(op, self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Binary { op, a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryOp::Mul, a, b)
    }

    /// `x + c` for a constant scalar `c`.
    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v + c);
        self.push(y, Op::AddScalar(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let y = self.value(x).map(|v| v * k);
        self.push(y, Op::Scale(x, k))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = ops::sigmoid(self.value(x));
        self.push(y, Op::Sigmoid(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = ops::relu(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn channel_max(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::channel_max(self.value(x))?;
        Ok(self.push(y, Op::ChannelMax { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        Ok(self.push(y, Op::GlobalAvgPool(x)))
    }

    /// Bilinear resize in either direction.
    pub fn resize(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        if self.shape(x).h == h && self.shape(x).w == w {
            return Ok(x);
        }
        let y = ops::resize_bilinear(self.value(x), h, w)?;
        Ok(self.push(y, Op::Resize(x)))
    }

    /// Bilinear upsampling; refuses to shrink.
    pub fn upsample(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let y = ops::upsample_bilinear(self.value(x), h, w)?;
        Ok(self.push(y, Op::Resize(x)))
    }

    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_lastdim(self.value(x))?;
        Ok(self.push(y, Op::Softmax(x)))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let y = ops::transpose_last2(self.value(x));
        self.push(y, Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        let y = self.value(x).reshape(shape)?;
        Ok(self.push(y, Op::Reshape(x)))
    }

    /// `(n, c, h, w)` to the matrix view `(n, 1, c, h*w)`.
    pub fn flatten_spatial(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        self.reshape(x, Shape::new(s.n, 1, s.c, s.plane()))
    }

    /// Matrix view `(n, 1, c, h*w)` back to `(n, c, h, w)`.
    pub fn unflatten_spatial(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.c != 1 || s.w != h * w {
            return Err(TensorError::shape(
                "unflatten_spatial",
                format!("{s} is not a ({h}x{w}) matrix view"),
            ));
        }
        self.reshape(x, Shape::new(s.n, s.h, h, w))
    }

    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::bmm(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Bmm(a, b)))
    }

    pub fn batchnorm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let (y, cache) = ops::batchnorm(
            self.value(x),
            self.value(gamma).data(),
            self.value(beta).data(),
            ops::BN_EPS,
        )?;
        Ok(self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                cache,
            },
        ))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&values)?;
        Ok(self.push(y, Op::Concat(parts.to_vec())))
    }

    pub fn sobel_magnitude(&mut self, x: Var) -> Var {
        let (y, cache) = ops::sobel_magnitude(self.value(x));
        self.push(y, Op::Sobel { x, cache })
    }

    /// Mean clamped binary cross-entropy against a constant target.
    pub fn bce(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        let eps = ops::BCE_EPS;
        let l = ops::bce_mean(self.value(p), target, eps)?;
        Ok(self.push(
            Tensor::scalar(l),
            Op::Bce {
                p,
                target: target.clone(),
                eps,
            },
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::Sum(x))
    }

    /// `sum(x * weights)` for constant `weights`.
    pub fn dot(&mut self, x: Var, weights: &Tensor) -> Result<Var> {
        if self.shape(x) != weights.shape() {
            return Err(TensorError::shape(
                "dot",
                format!("{} vs {}", self.shape(x), weights.shape()),
            ));
        }
        let y = self
            .value(x)
            .data()
            .iter()
            .zip(weights.data())
            .map(|(a, b)| a * b)
            .sum();
        Ok(self.push(
            Tensor::scalar(y),
            Op::Dot {
                x,
                weights: weights.clone(),
            },
        ))
    }

    /// Which side of every non-differentiable point the recorded forward
    /// pass fell on: ReLU signs, channel-max winners, BCE clamping and zero
    /// Sobel magnitudes. Two passes with equal patterns lie on the same
    /// smooth piece of the function.
    pub fn branch_pattern(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut bits = |flags: &mut dyn Iterator<Item = bool>| {
            let mut word = 0u64;
            let mut n = 0;
            for f in flags {
                word = (word << 1) | f as u64;
                n += 1;
                if n == 64 {
                    out.push(word);
                    (word, n) = (0, 0);
                }
            }
            out.push(word);
        };
        for node in &self.nodes {
            match &node.op {
                &Op::Relu(x) => bits(&mut self.value(x).data().iter().map(|&v| v > 0.0)),
                Op::ChannelMax { argmax, .. } => {
                    bits(&mut argmax.iter().flat_map(|&a| (0..8).map(move |b| a >> b & 1 == 1)))
                }
                Op::Bce { p, eps, .. } => bits(
                    &mut self
                        .value(*p)
                        .data()
                        .iter()
                        .map(|&v| v > *eps && v < 1.0 - *eps),
                ),
                Op::Sobel { .. } => bits(&mut node.value.data().iter().map(|&v| v > 0.0)),
                _ => {}
            }
        }
        out
    }

    /// Runs the recorded operations in reverse from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(TensorError::NotScalar(ls));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::ones(ls));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            let mut acc = |v: Var, d: Tensor| {
                debug_assert!(v.0 < i, "tape order violated");
                match &mut grads[v.0] {
                    Some(existing) => {
                        for (e, x) in existing.data_mut().iter_mut().zip(d.data()) {
                            *e += x;
                        }
                    }
                    slot @ None => *slot = Some(d),
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Conv2d {
                    x,
                    k,
                    b,
                    stride,
                    pad,
                } => {
                    let (gx, gk, gb) =
                        ops::conv2d_backward(self.value(x), self.value(k), stride, pad, &g);
                    acc(x, gx);
                    acc(k, gk);
                    acc(b, vector(gb));
                }
                &Op::ConvTranspose2d { x, k, b, stride } => {
                    let (gx, gk, gb) =
                        ops::conv_transpose2d_backward(self.value(x), self.value(k), stride, &g);
                    acc(x, gx);
                    acc(k, gk);
                    acc(b, vector(gb));
                }
                &Op::Linear { x, w, b } => {
                    let (gx, gw, gb) =
                        ops::fully_connected_backward(self.value(x), self.value(w), &g);
                    acc(x, gx);
                    acc(w, gw);
                    acc(b, vector(gb));
                }
                &Op::Binary { op, a, b } => {
                    let (ga, gb) = ops::elementwise_backward(op, self.value(a), self.value(b), &g);
                    acc(a, ga);
                    acc(b, gb);
                }
                &Op::AddScalar(x) => acc(x, g),
                &Op::Scale(x, k) => acc(x, g.map(|v| v * k)),
                &Op::Sigmoid(x) => acc(x, ops::sigmoid_backward(&node.value, &g)),
                &Op::Relu(x) => acc(x, ops::relu_backward(self.value(x), &g)),
                Op::ChannelMax { x, argmax } => {
                    acc(*x, ops::channel_max_backward(self.shape(*x), argmax, &g))
                }
                &Op::GlobalAvgPool(x) => acc(x, ops::global_avg_pool_backward(self.shape(x), &g)),
                &Op::Resize(x) => acc(x, ops::resize_bilinear_backward(self.shape(x), &g)),
                &Op::Softmax(x) => acc(x, ops::softmax_lastdim_backward(&node.value, &g)),
                &Op::Transpose(x) => acc(x, ops::transpose_last2(&g)),
                &Op::Reshape(x) => acc(x, g.reshape(self.shape(x))?),
                &Op::Bmm(a, b) => {
                    let (ga, gb) = ops::bmm_backward(self.value(a), self.value(b), &g);
                    acc(a, ga);
                    acc(b, gb);
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    cache,
                } => {
                    let (gx, dg, db) =
                        ops::batchnorm_backward(cache, self.value(*gamma).data(), &g);
                    acc(*x, gx);
                    acc(*gamma, vector(dg));
                    acc(*beta, vector(db));
                }
                Op::Concat(parts) => {
                    let shapes: Vec<Shape> = parts.iter().map(|&p| self.shape(p)).collect();
                    for (&p, gp) in parts.iter().zip(ops::concat_channels_backward(&shapes, &g)) {
                        acc(p, gp);
                    }
                }
                Op::Sobel { x, cache } => {
                    acc(*x, ops::sobel_magnitude_backward(&node.value, cache, &g))
                }
                Op::Bce { p, target, eps } => {
                    let seed = g.data()[0];
                    acc(*p, ops::bce_mean_backward(self.value(*p), target, *eps, seed));
                }
                &Op::Sum(x) => {
                    let seed = g.data()[0];
                    acc(x, Tensor::full(self.shape(x), seed));
                }
                Op::Dot { x, weights } => {
                    let seed = g.data()[0];
                    acc(*x, weights.map(|w| w * seed));
                }
            }
        }
        Ok(Gradients { grads })
    }
}
