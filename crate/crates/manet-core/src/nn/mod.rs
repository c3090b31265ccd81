//! Network building blocks on top of the tape.
//!
//! All learnable tensors of a network live in one [`ParamSet`]; layers hold
//! [`ParamId`] indices into it. That keeps the optimizer a flat array
//! update, makes checkpointing a name/tensor dump, and lets a forward pass
//! bind every parameter onto a tape in one sweep.

pub mod cost;
pub mod maconv;
pub mod manet;
pub mod probe;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

/// Index of a parameter within its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Whether an entry is a weight or a bias; cost accounting needs to count
/// the two separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// Ordered, named collection of learnable tensors.
pub struct ParamSet<T: Scalar> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { names: Vec::new(), kinds: Vec::new(), tensors: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, t: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        self.names.push(name);
        self.kinds.push(kind);
        self.tensors.push(t);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shapes(&self) -> Vec<Shape> {
        self.tensors.iter().map(|t| t.shape()).collect()
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    /// Iterate `(name, kind, tensor)` in declaration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.names
            .iter()
            .zip(self.kinds.iter())
            .zip(self.tensors.iter())
            .map(|((n, &k), t)| (n.as_str(), k, t))
    }

    /// Total element count, optionally excluding biases.
    pub fn count(&self, include_bias: bool) -> u64 {
        self.iter()
            .filter(|(_, k, _)| include_bias || *k == ParamKind::Weight)
            .map(|(_, _, t)| t.len() as u64)
            .sum()
    }

    /// Enter every parameter as a tape leaf, in declaration order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Result<Vec<Var>> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Replace all tensors by name. Unknown names and shape mismatches are
    /// state errors; every parameter must be covered.
    pub fn load(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        let mut seen = vec![false; self.tensors.len()];
        for (name, t) in entries {
            let Some(i) = self.names.iter().position(|n| n == name) else {
                return Err(Error::State(format!(
                    "checkpoint parameter {name} does not exist in this network"
                )));
            };
            if self.tensors[i].shape() != t.shape() {
                return Err(Error::State(format!(
                    "parameter {name}: network expects {}, checkpoint holds {}",
                    self.tensors[i].shape(),
                    t.shape()
                )));
            }
            self.tensors[i] = t.clone();
            seen[i] = true;
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::State(format!(
                "checkpoint is missing parameter {}",
                self.names[i]
            )));
        }
        Ok(())
    }

    /// Replace every weight by its absolute value and zero every bias; the
    /// receptive-field probe regime, where no activation can die.
    pub fn make_positive(&mut self) {
        for i in 0..self.tensors.len() {
            let t = &self.tensors[i];
            let data = match self.kinds[i] {
                ParamKind::Weight => t.data().iter().map(|v| v.abs()).collect(),
                ParamKind::Bias => vec![T::zero(); t.len()],
            };
            self.tensors[i] = Tensor::from_vec(t.shape(), data).expect("same shape");
        }
    }
}

/// Fan-in-scaled uniform init: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
/// Draws are made in f64 and cast, so f32 and f64 nets start from the same
/// underlying sequence.
fn init_uniform<T: Scalar>(rng: &mut ChaCha12Rng, shape: Shape, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.count())
        .map(|_| T::from_f64(rng.random_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).expect("sized by shape")
}

/// A recorded 2-D convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub pad: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Conv2d {
        let fan_in = c_in * kernel * kernel;
        let weight = params.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_uniform(rng, Shape::new(c_out, c_in, kernel, kernel), fan_in),
        );
        let bias = Some(params.add(
            format!("{name}.bias"),
            ParamKind::Bias,
            init_uniform(rng, Shape::new(1, c_out, 1, 1), fan_in),
        ));
        Conv2d { weight, bias, stride, pad, c_in, c_out, kernel }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv2d(
            x,
            vars[self.weight.0],
            self.bias.map(|b| vars[b.0]),
            self.stride,
            self.pad,
        )
    }
}

/// A recorded 2-D transpose convolution layer.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl ConvTranspose2d {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
    ) -> ConvTranspose2d {
        let fan_in = c_in * kernel * kernel;
        let weight = params.add(
            format!("{name}.weight"),
            ParamKind::Weight,
            init_uniform(rng, Shape::new(c_in, c_out, kernel, kernel), fan_in),
        );
        let bias = Some(params.add(
            format!("{name}.bias"),
            ParamKind::Bias,
            init_uniform(rng, Shape::new(1, c_out, 1, 1), fan_in),
        ));
        ConvTranspose2d { weight, bias, stride, c_in, c_out, kernel }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        tape.conv_transpose2d(
            x,
            vars[self.weight.0],
            self.bias.map(|b| vars[b.0]),
            self.stride,
        )
    }
}
