//! Reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles along with
//! the forward value. [`Tape::backward`] then walks the record in reverse,
//! dispatching each op's adjoint and accumulating gradients into parents.
//! Ops are recorded in execution order, so a node's parents always precede
//! it and one reverse sweep suffices.

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Scalar, Shape, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d { x: usize, w: usize, b: Option<usize>, stride: usize, pad: usize },
    ConvTranspose2d { x: usize, w: usize, b: Option<usize>, stride: usize },
    Relu { x: usize },
    SoftmaxChannels { x: usize },
    NearestUpsample { x: usize, s: usize },
    /// One output part of a channel split; `c0` is its first input channel.
    SplitPart { x: usize, c0: usize },
    Concat { xs: Vec<usize> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Abs { x: usize },
    Scale { x: usize, c: f64 },
    SumAll { x: usize },
}

struct Node<T: Scalar> {
    op: Op,
    value: Tensor<T>,
}

/// Gradients of a scalar root with respect to every tape node.
pub struct Gradients<T: Scalar> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`, if any path connected it to the root.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or a zero tensor of the given shape when the root
    /// does not depend on it.
    pub fn get_or_zeros(&self, v: Var, shape: Shape) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Tensor::zeros(shape),
        }
    }
}

/// Operation record for one forward pass.
pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op, value: Tensor<T>) -> Result<Var> {
        value.ensure_finite("tape op output")?;
        self.nodes.push(Node { op, value });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Enter a tensor as an input node.
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<Var> {
        self.push(Op::Leaf, value)
    }

    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let y = ops::conv2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
            pad,
        )?;
        self.push(Op::Conv2d { x: x.0, w: w.0, b: b.map(|b| b.0), stride, pad }, y)
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let y = ops::conv_transpose2d(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            stride,
        )?;
        self.push(Op::ConvTranspose2d { x: x.0, w: w.0, b: b.map(|b| b.0), stride }, y)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let y = ops::relu(self.value(x));
        self.push(Op::Relu { x: x.0 }, y)
    }

    pub fn softmax_channels(&mut self, x: Var) -> Result<Var> {
        let y = ops::softmax_channels(self.value(x))?;
        self.push(Op::SoftmaxChannels { x: x.0 }, y)
    }

    pub fn nearest_upsample(&mut self, x: Var, s: usize) -> Result<Var> {
        let y = ops::nearest_upsample(self.value(x), s)?;
        self.push(Op::NearestUpsample { x: x.0, s }, y)
    }

    /// Split into `s` equal channel groups, one node per part.
    pub fn split_channels(&mut self, x: Var, s: usize) -> Result<Vec<Var>> {
        let parts = ops::split_channels(self.value(x), s)?;
        let per = parts[0].shape().c;
        let mut vars = Vec::with_capacity(s);
        for (i, part) in parts.into_iter().enumerate() {
            vars.push(self.push(Op::SplitPart { x: x.0, c0: i * per }, part)?);
        }
        Ok(vars)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&tensors)?;
        self.push(Op::Concat { xs: xs.iter().map(|v| v.0).collect() }, y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::add(self.value(a), self.value(b))?;
        self.push(Op::Add { a: a.0, b: b.0 }, y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::sub(self.value(a), self.value(b))?;
        self.push(Op::Sub { a: a.0, b: b.0 }, y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = ops::mul(self.value(a), self.value(b))?;
        self.push(Op::Mul { a: a.0, b: b.0 }, y)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let y = ops::abs(self.value(x));
        self.push(Op::Abs { x: x.0 }, y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let y = ops::scale(self.value(x), c)?;
        self.push(Op::Scale { x: x.0, c }, y)
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        let y = ops::sum_all(self.value(x));
        self.push(Op::SumAll { x: x.0 }, y)
    }

    /// Accumulate `g` into the gradient slot for node `i`.
    fn accumulate(grads: &mut [Option<Tensor<T>>], i: usize, g: Tensor<T>) -> Result<()> {
        grads[i] = Some(match grads[i].take() {
            Some(old) => ops::add(&old, &g)?,
            None => g,
        });
        Ok(())
    }

    /// Gradients of the scalar node `root` with respect to all tape nodes.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let root_shape = self.value(root).shape();
        if root_shape.count() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar-shaped, got {root_shape}"
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::full(root_shape, T::one()));

        for i in (0..self.nodes.len()).rev() {
            let Some(gy) = grads[i].clone() else { continue };
            gy.ensure_finite("backward gradient")?;
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d { x, w, b, stride, pad } => {
                    let gx = ops::conv2d_grad_input(
                        &gy,
                        &self.nodes[*w].value,
                        self.nodes[*x].value.shape(),
                        *stride,
                        *pad,
                    )?;
                    Self::accumulate(&mut grads, *x, gx)?;
                    let gw = ops::conv2d_grad_weight(
                        &self.nodes[*x].value,
                        &gy,
                        self.nodes[*w].value.shape(),
                        *stride,
                        *pad,
                    )?;
                    Self::accumulate(&mut grads, *w, gw)?;
                    if let Some(b) = b {
                        Self::accumulate(&mut grads, *b, ops::conv_grad_bias(&gy)?)?;
                    }
                }
                Op::ConvTranspose2d { x, w, b, stride } => {
                    let gx = ops::conv_transpose2d_grad_input(
                        &gy,
                        &self.nodes[*w].value,
                        self.nodes[*x].value.shape(),
                        *stride,
                    )?;
                    Self::accumulate(&mut grads, *x, gx)?;
                    let gw = ops::conv_transpose2d_grad_weight(
                        &self.nodes[*x].value,
                        &gy,
                        self.nodes[*w].value.shape(),
                        *stride,
                    )?;
                    Self::accumulate(&mut grads, *w, gw)?;
                    if let Some(b) = b {
                        Self::accumulate(&mut grads, *b, ops::conv_grad_bias(&gy)?)?;
                    }
                }
                Op::Relu { x } => {
                    let gx = ops::relu_grad(&self.nodes[*x].value, &gy)?;
                    Self::accumulate(&mut grads, *x, gx)?;
                }
                Op::SoftmaxChannels { x } => {
                    // The adjoint needs the forward output, which is this
                    // node's own value.
                    let gx = ops::softmax_channels_grad(&node.value, &gy)?;
                    Self::accumulate(&mut grads, *x, gx)?;
                }
                Op::NearestUpsample { x, s } => {
                    let gx = ops::nearest_upsample_grad(&gy, *s)?;
                    Self::accumulate(&mut grads, *x, gx)?;
                }
                Op::SplitPart { x, c0 } => {
                    let xs = self.nodes[*x].value.shape();
                    let gx = embed_channels(&gy, xs, *c0)?;
                    Self::accumulate(&mut grads, *x, gx)?;
                }
                Op::Concat { xs } => {
                    let mut c0 = 0;
                    for &xi in xs {
                        let len = self.nodes[xi].value.shape().c;
                        let gx = ops::slice_channels(&gy, c0, len)?;
                        Self::accumulate(&mut grads, xi, gx)?;
                        c0 += len;
                    }
                }
                Op::Add { a, b } => {
                    Self::accumulate(&mut grads, *a, gy.clone())?;
                    Self::accumulate(&mut grads, *b, gy.clone())?;
                }
                Op::Sub { a, b } => {
                    Self::accumulate(&mut grads, *a, gy.clone())?;
                    Self::accumulate(&mut grads, *b, ops::scale(&gy, -1.0)?)?;
                }
                Op::Mul { a, b } => {
                    let ga = ops::mul(&gy, &self.nodes[*b].value)?;
                    let gb = ops::mul(&gy, &self.nodes[*a].value)?;
                    Self::accumulate(&mut grads, *a, ga)?;
                    Self::accumulate(&mut grads, *b, gb)?;
                }
                Op::Abs { x } => {
                    let sign = ops::signum_zero(&self.nodes[*x].value);
                    Self::accumulate(&mut grads, *x, ops::mul(&gy, &sign)?)?;
                }
                Op::Scale { x, c } => {
                    Self::accumulate(&mut grads, *x, ops::scale(&gy, *c)?)?;
                }
                Op::SumAll { x } => {
                    let g = gy.item()?;
                    let xs = self.nodes[*x].value.shape();
                    Self::accumulate(&mut grads, *x, Tensor::full(xs, g))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Place `g` into a zero tensor of shape `full` at channel offset `c0`.
fn embed_channels<T: Scalar>(g: &Tensor<T>, full: Shape, c0: usize) -> Result<Tensor<T>> {
    let gs = g.shape();
    if gs.n != full.n || gs.h != full.h || gs.w != full.w || c0 + gs.c > full.c {
        return Err(Error::Dimension(format!(
            "embed_channels: part {gs} at offset {c0} does not fit {full}"
        )));
    }
    let plane = full.h * full.w;
    let mut out = vec![T::zero(); full.count()];
    let gd = g.data();
    for n in 0..full.n {
        let dst = (n * full.c + c0) * plane;
        let src = n * gs.c * plane;
        out[dst..dst + gs.c * plane].copy_from_slice(&gd[src..src + gs.c * plane]);
    }
    Tensor::from_vec(full, out)
}
