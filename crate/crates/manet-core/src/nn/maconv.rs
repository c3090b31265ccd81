//! Mutual affine convolution.
//!
//! The input is split into `S` channel groups. Each group is modulated by a
//! per-pixel affine transform predicted from the *other* groups (the
//! complement, concatenated in ascending order), then passed through its
//! own 3x3 convolution. The affine path uses only 1x1 convolutions, so the
//! layer's receptive field stays 3x3 while every output channel still
//! depends on every input channel.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Scalar;

use super::{Conv2d, ParamSet};

/// Channel arithmetic for one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MAConvConfig {
    pub c_in: usize,
    pub c_out: usize,
    pub s: usize,
}

impl MAConvConfig {
    pub fn new(c_in: usize, c_out: usize, s: usize) -> Result<Self> {
        if s < 2 {
            return Err(Error::Argument(format!("split count must be >= 2, got {s}")));
        }
        if c_in % s != 0 || c_out % s != 0 {
            return Err(Error::Argument(format!(
                "split count {s} must divide both channel counts, got {c_in} -> {c_out}"
            )));
        }
        if c_in * (s - 1) / (2 * s) < 1 {
            return Err(Error::Argument(format!(
                "affine hidden width C_in(S-1)/(2S) vanishes for {c_in} channels at S={s}"
            )));
        }
        Ok(MAConvConfig { c_in, c_out, s })
    }

    /// Channels of the complement x-bar each affine subnet sees.
    pub fn complement_channels(&self) -> usize {
        self.c_in * (self.s - 1) / self.s
    }

    /// Hidden width of the two-layer affine subnet.
    pub fn hidden_channels(&self) -> usize {
        self.c_in * (self.s - 1) / (2 * self.s)
    }

    /// Output channels of the affine subnet: beta and gamma stacked.
    pub fn affine_out_channels(&self) -> usize {
        2 * self.c_in / self.s
    }
}

/// One MAConv layer: per split, a two-layer 1x1 affine subnet and a 3x3
/// convolution.
pub struct MAConv {
    pub cfg: MAConvConfig,
    affine1: Vec<Conv2d>,
    affine2: Vec<Conv2d>,
    conv: Vec<Conv2d>,
}

impl MAConv {
    pub fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        cfg: MAConvConfig,
    ) -> MAConv {
        let mut affine1 = Vec::with_capacity(cfg.s);
        let mut affine2 = Vec::with_capacity(cfg.s);
        let mut conv = Vec::with_capacity(cfg.s);
        for i in 0..cfg.s {
            affine1.push(Conv2d::new(
                params,
                rng,
                &format!("{name}.split{i}.affine1"),
                cfg.complement_channels(),
                cfg.hidden_channels(),
                1,
                1,
                0,
            ));
            affine2.push(Conv2d::new(
                params,
                rng,
                &format!("{name}.split{i}.affine2"),
                cfg.hidden_channels(),
                cfg.affine_out_channels(),
                1,
                1,
                0,
            ));
            conv.push(Conv2d::new(
                params,
                rng,
                &format!("{name}.split{i}.conv"),
                cfg.c_in / cfg.s,
                cfg.c_out / cfg.s,
                3,
                1,
                1,
            ));
        }
        MAConv { cfg, affine1, affine2, conv }
    }

    /// Every constituent convolution, for cost accounting. All of them
    /// preserve spatial extent (1x1 pad 0 and 3x3 pad 1, stride 1).
    pub(crate) fn sublayers(&self) -> impl Iterator<Item = &Conv2d> {
        self.affine1.iter().chain(self.affine2.iter()).chain(self.conv.iter())
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        if tape.value(x).shape().c != self.cfg.c_in {
            return Err(Error::Dimension(format!(
                "maconv expects {} input channels, got {}",
                self.cfg.c_in,
                tape.value(x).shape().c
            )));
        }
        let splits = tape.split_channels(x, self.cfg.s)?;
        let mut outs = Vec::with_capacity(self.cfg.s);
        for i in 0..self.cfg.s {
            // x-bar_i: every split but i, ascending.
            let complement: Vec<Var> = splits
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, &v)| v)
                .collect();
            let xbar = tape.concat_channels(&complement)?;
            let hidden = self.affine1[i].forward(tape, vars, xbar)?;
            let hidden = tape.relu(hidden)?;
            let affine = self.affine2[i].forward(tape, vars, hidden)?;
            let beta_gamma = tape.split_channels(affine, 2)?;
            let scaled = tape.mul(beta_gamma[0], splits[i])?;
            let shifted = tape.add(scaled, beta_gamma[1])?;
            outs.push(self.conv[i].forward(tape, vars, shifted)?);
        }
        tape.concat_channels(&outs)
    }
}
