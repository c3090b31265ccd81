//! Parameter and FLOP accounting, plus analytic receptive field arithmetic.
//!
//! Costs are derived two independent ways wherever possible: a closed form
//! from the layer algebra, and an enumeration over the tensors the
//! constructors actually allocate. Tests pin the two against each other.

use crate::error::{Error, Result};
use crate::ops::conv_out_extent;
use crate::tensor::Scalar;

use super::maconv::MAConv;
use super::manet::{MaNet, PathStep};
use super::{Conv2d, ConvTranspose2d, ParamKind, ParamSet};

/// Named per-layer costs with their total.
#[derive(Debug, Clone)]
pub struct CostReport {
    entries: Vec<(String, u64)>,
    total: u64,
}

impl CostReport {
    fn from_entries(entries: Vec<(String, u64)>) -> CostReport {
        let total = entries.iter().map(|(_, v)| *v).sum();
        CostReport { entries, total }
    }

    pub fn entries(&self) -> &[(String, u64)] {
        &self.entries
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Closed-form bias-free parameter count of one MAConv layer:
/// `9 c_in c_out / s` for the split 3x3 convolutions plus
/// `(s^2 - 1) c_in^2 / (2s)` for the affine subnets. Errors when the
/// division is not exact, which is exactly when no such layer exists.
pub fn maconv_param_formula(c_in: usize, c_out: usize, s: usize) -> Result<u64> {
    if s < 2 {
        return Err(Error::Argument(format!("split must be >= 2, got {s}")));
    }
    let (c_in, c_out, s) = (c_in as u128, c_out as u128, s as u128);
    let conv_num = 9 * c_in * c_out;
    let affine_num = (s * s - 1) * c_in * c_in;
    if conv_num % s != 0 || affine_num % (2 * s) != 0 {
        return Err(Error::Argument(format!(
            "no MAConv layer with c_in={c_in}, c_out={c_out}, s={s}: split does not divide evenly"
        )));
    }
    Ok((conv_num / s + affine_num / (2 * s)) as u64)
}

/// Bias-free parameter count of a plain `k x k` convolution.
pub fn plain_conv_params(c_in: usize, c_out: usize, k: usize) -> u64 {
    (c_in * c_out * k * k) as u64
}

/// Per-tensor parameter enumeration over a whole set.
pub fn count_params<T: Scalar>(params: &ParamSet<T>, include_bias: bool) -> CostReport {
    let entries = params
        .iter()
        .filter(|(_, kind, _)| include_bias || *kind == ParamKind::Weight)
        .map(|(name, _, t)| (name.to_string(), t.shape().count() as u64))
        .collect();
    CostReport::from_entries(entries)
}

/// Enumerated parameter count of every tensor whose name starts with a
/// prefix, the brute-force side of the formula checks.
pub fn prefix_param_count<T: Scalar>(
    params: &ParamSet<T>,
    prefix: &str,
    include_bias: bool,
) -> u64 {
    params
        .iter()
        .filter(|(name, kind, _)| {
            name.starts_with(prefix) && (include_bias || *kind == ParamKind::Weight)
        })
        .map(|(_, _, t)| t.shape().count() as u64)
        .sum()
}

/// A convolution's multiply-accumulates at the given input extent, with the
/// output extent it produces. One MAC counts as one FLOP.
fn conv_macs(l: &Conv2d, h: usize, w: usize) -> Result<(u64, usize, usize)> {
    let oh = conv_out_extent(h, l.kernel, l.stride, l.pad)?;
    let ow = conv_out_extent(w, l.kernel, l.stride, l.pad)?;
    let per_site = (l.c_out * l.c_in * l.kernel * l.kernel) as u64;
    Ok((per_site * (oh * ow) as u64, oh, ow))
}

/// Transpose convolution MACs: every input site fires all taps.
fn transpose_macs(l: &ConvTranspose2d, h: usize, w: usize) -> (u64, usize, usize) {
    let per_site = (l.c_in * l.c_out * l.kernel * l.kernel) as u64;
    let oh = (h - 1) * l.stride + l.kernel;
    let ow = (w - 1) * l.stride + l.kernel;
    (per_site * (h * w) as u64, oh, ow)
}

fn maconv_macs(l: &MAConv, h: usize, w: usize) -> Result<u64> {
    let mut total = 0;
    for c in l.sublayers() {
        total += conv_macs(c, h, w)?.0;
    }
    Ok(total)
}

/// Walk the network layer by layer at the given input extent, counting MACs
/// from the tensors actually constructed.
pub fn count_flops<T: Scalar>(net: &MaNet<T>, hf: usize, wf: usize) -> Result<CostReport> {
    if hf % 2 != 0 || wf % 2 != 0 || hf == 0 || wf == 0 {
        return Err(Error::Dimension(format!(
            "flop accounting mirrors the forward pass and needs even extents, got {hf}x{wf}"
        )));
    }
    let mut entries = Vec::new();
    let (head, h, w) = conv_macs(&net.head, hf, wf)?;
    entries.push(("head".to_string(), head));
    let b1 = 2 * maconv_macs(&net.block1.a, h, w)?;
    entries.push(("block1".to_string(), b1));
    let (down, dh, dw) = conv_macs(&net.down, h, w)?;
    entries.push(("down".to_string(), down));
    let b2 = 2 * maconv_macs(&net.block2.a, dh, dw)?;
    entries.push(("block2".to_string(), b2));
    let (up, uh, uw) = transpose_macs(&net.up, dh, dw);
    entries.push(("up".to_string(), up));
    debug_assert_eq!((uh, uw), (h, w), "skip extents must agree");
    let b3 = 2 * maconv_macs(&net.block3.a, uh, uw)?;
    entries.push(("block3".to_string(), b3));
    let (recon, _, _) = conv_macs(&net.recon, uh, uw)?;
    entries.push(("recon".to_string(), recon));
    Ok(CostReport::from_entries(entries))
}

/// Closed-form FLOP total: each layer's bias-free weight count times the
/// number of sites it fires at. Must equal [`count_flops`] exactly.
pub fn flops_closed_form(
    cfg: &super::manet::MaNetConfig,
    hf: usize,
    wf: usize,
) -> Result<u64> {
    cfg.validate()?;
    if hf % 2 != 0 || wf % 2 != 0 {
        return Err(Error::Dimension(format!("extents must be even, got {hf}x{wf}")));
    }
    let [c1, c2, _] = cfg.channels;
    let full = (hf * wf) as u64;
    let half = (hf / 2 * (wf / 2)) as u64;
    let block1 = 2 * maconv_param_formula(c1, c1, cfg.split)?;
    let block2 = 2 * maconv_param_formula(c2, c2, cfg.split)?;
    Ok(plain_conv_params(cfg.in_channels, c1, 3) * full
        + block1 * full
        + plain_conv_params(c1, c2, 2) * half
        + block2 * half
        + plain_conv_params(c2, c1, 2) * half
        + block1 * full
        + plain_conv_params(c1, cfg.out_channels(), 3) * full)
}

/// Fold receptive field growth over the main path. Convolutions add
/// `(k - 1) * jump` and multiply the jump by their stride; transpose
/// convolutions add `(ceil(k / s) - 1) * jump` and divide it.
pub fn receptive_field_analytic(path: &[PathStep]) -> (usize, usize) {
    let mut rf = 1.0f64;
    let mut jump = 1.0f64;
    for step in path {
        match *step {
            PathStep::Conv { kernel, stride } => {
                rf += (kernel - 1) as f64 * jump;
                jump *= stride as f64;
            }
            PathStep::Transpose { kernel, stride } => {
                rf += (kernel.div_ceil(stride) - 1) as f64 * jump;
                jump /= stride as f64;
            }
        }
    }
    debug_assert_eq!(rf.fract(), 0.0);
    (rf as usize, rf as usize)
}
