//! The kernel estimation network.
//!
//! An encoder-decoder over three residual blocks of MAConv layers: head
//! convolution, block at full LR resolution, 2x2 stride-2 downsampler,
//! block at half resolution, 2x2 stride-2 transpose upsampler, additive
//! skips from both full-resolution features, third block, then a 3x3
//! reconstruction convolution onto one channel per kernel tap. A channel
//! softmax makes every site a probability vector and nearest upsampling
//! lifts the map to HR extent.

use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::{KernelMap, DEFAULT_KERNEL_SIZE};
use crate::rng::{stream_rng, StreamId};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Shape, Tensor};

use super::maconv::{MAConv, MAConvConfig};
use super::{Conv2d, ConvTranspose2d, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaNetConfig {
    /// Residual-block widths `[c1, c2, c3]`; the skips force `c1 == c3`.
    pub channels: [usize; 3],
    /// MAConv split count.
    pub split: usize,
    /// Estimated kernel support; the net outputs `kernel_size^2` channels.
    pub kernel_size: usize,
    /// Super-resolution scale; the output map is upsampled by this factor.
    pub scale: usize,
    /// 1 for luminance input, 3 for color.
    pub in_channels: usize,
}

impl Default for MaNetConfig {
    fn default() -> Self {
        MaNetConfig {
            channels: [128, 256, 128],
            split: 2,
            kernel_size: DEFAULT_KERNEL_SIZE,
            scale: 4,
            in_channels: 1,
        }
    }
}

impl MaNetConfig {
    pub fn validate(&self) -> Result<()> {
        let [c1, c2, c3] = self.channels;
        if c1 != c3 {
            return Err(Error::Argument(format!(
                "additive skips need matching first and last widths, got {c1} and {c3}"
            )));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size == 0 {
            return Err(Error::Argument(format!(
                "kernel support must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.scale == 0 {
            return Err(Error::Argument("scale must be positive".into()));
        }
        if self.in_channels != 1 && self.in_channels != 3 {
            return Err(Error::Argument(format!(
                "input is 1- or 3-channel, got {}",
                self.in_channels
            )));
        }
        // Constructing the layer configs validates split divisibility.
        MAConvConfig::new(c1, c1, self.split)?;
        MAConvConfig::new(c2, c2, self.split)?;
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.kernel_size * self.kernel_size
    }

    /// Compact signature used in checkpoint-mismatch diagnostics.
    pub fn signature(&self) -> String {
        format!(
            "channels={},{},{} split={} kernel={} scale={} in={}",
            self.channels[0],
            self.channels[1],
            self.channels[2],
            self.split,
            self.kernel_size,
            self.scale,
            self.in_channels
        )
    }
}

/// One spatial step of the main computation path, enough to fold receptive
/// field growth layer by layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathStep {
    Conv { kernel: usize, stride: usize },
    Transpose { kernel: usize, stride: usize },
}

/// The main path's spatial layer sequence for a config. The MAConv affine
/// branches are 1x1 everywhere and add no spatial extent, so each MAConv
/// contributes exactly its 3x3 convolution.
pub fn main_path(_cfg: &MaNetConfig) -> Vec<PathStep> {
    let conv3 = PathStep::Conv { kernel: 3, stride: 1 };
    vec![
        conv3, // head
        conv3,
        conv3, // block 1
        PathStep::Conv { kernel: 2, stride: 2 }, // downsampler
        conv3,
        conv3, // block 2
        PathStep::Transpose { kernel: 2, stride: 2 }, // upsampler
        conv3,
        conv3, // block 3
        conv3, // reconstruction
    ]
}

/// Residual block: `x + maconv2(relu(maconv1(x)))`.
pub struct ResBlock {
    pub a: MAConv,
    pub b: MAConv,
}

impl ResBlock {
    fn new<T: Scalar>(
        params: &mut ParamSet<T>,
        rng: &mut ChaCha12Rng,
        name: &str,
        channels: usize,
        split: usize,
    ) -> Result<ResBlock> {
        let cfg = MAConvConfig::new(channels, channels, split)?;
        Ok(ResBlock {
            a: MAConv::new(params, rng, &format!("{name}.maconv1"), cfg),
            b: MAConv::new(params, rng, &format!("{name}.maconv2"), cfg),
        })
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<Var> {
        let h = self.a.forward(tape, vars, x)?;
        let h = tape.relu(h)?;
        let h = self.b.forward(tape, vars, h)?;
        tape.add(x, h)
    }
}

/// Tape nodes of interest from one forward pass.
pub struct ForwardNodes {
    /// Reconstruction output before the softmax, at LR extent.
    pub pre_softmax: Var,
    /// Per-site probability vectors at LR extent.
    pub softmax: Var,
    /// Final kernel map at HR extent.
    pub output: Var,
}

/// The assembled estimator.
pub struct MaNet<T: Scalar> {
    cfg: MaNetConfig,
    params: ParamSet<T>,
    pub(crate) head: Conv2d,
    pub(crate) block1: ResBlock,
    pub(crate) down: Conv2d,
    pub(crate) block2: ResBlock,
    pub(crate) up: ConvTranspose2d,
    pub(crate) block3: ResBlock,
    pub(crate) recon: Conv2d,
}

impl<T: Scalar> MaNet<T> {
    /// Build with fan-in uniform init drawn from the seed's init stream.
    pub fn new(cfg: MaNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let [c1, c2, _] = cfg.channels;
        let mut rng = stream_rng(seed, StreamId::Init);
        let mut params = ParamSet::new();
        let head = Conv2d::new(&mut params, &mut rng, "head", cfg.in_channels, c1, 3, 1, 1);
        let block1 = ResBlock::new(&mut params, &mut rng, "block1", c1, cfg.split)?;
        let down = Conv2d::new(&mut params, &mut rng, "down", c1, c2, 2, 2, 0);
        let block2 = ResBlock::new(&mut params, &mut rng, "block2", c2, cfg.split)?;
        let up = ConvTranspose2d::new(&mut params, &mut rng, "up", c2, c1, 2, 2);
        let block3 = ResBlock::new(&mut params, &mut rng, "block3", c1, cfg.split)?;
        let recon = Conv2d::new(&mut params, &mut rng, "recon", c1, cfg.out_channels(), 3, 1, 1);
        Ok(MaNet { cfg, params, head, block1, down, block2, up, block3, recon })
    }

    pub fn config(&self) -> &MaNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Forward pass on an already-bound tape, exposing the nodes probes and
    /// training need. Input must be `N x in_channels x H x W` with even
    /// spatial extents (the stride-2 encoder-decoder cannot reproduce odd
    /// ones).
    pub fn forward(&self, tape: &mut Tape<T>, vars: &[Var], x: Var) -> Result<ForwardNodes> {
        let s = tape.value(x).shape();
        if s.c != self.cfg.in_channels {
            return Err(Error::Dimension(format!(
                "network expects {} input channels, got {}",
                self.cfg.in_channels, s.c
            )));
        }
        if s.h % 2 != 0 || s.w % 2 != 0 || s.h == 0 || s.w == 0 {
            return Err(Error::Dimension(format!(
                "LR extent must be even and positive, got {}x{}",
                s.h, s.w
            )));
        }
        let f0 = self.head.forward(tape, vars, x)?;
        let f1 = self.block1.forward(tape, vars, f0)?;
        let d = self.down.forward(tape, vars, f1)?;
        let f2 = self.block2.forward(tape, vars, d)?;
        let u = self.up.forward(tape, vars, f2)?;
        // Both full-resolution features feed back in additively.
        let u = tape.add(u, f1)?;
        let u = tape.add(u, f0)?;
        let f3 = self.block3.forward(tape, vars, u)?;
        let pre_softmax = self.recon.forward(tape, vars, f3)?;
        let softmax = tape.softmax_channels(pre_softmax)?;
        let output = tape.nearest_upsample(softmax, self.cfg.scale)?;
        Ok(ForwardNodes { pre_softmax, softmax, output })
    }

    /// Inference convenience: bind, run, return the HR-extent kernel map
    /// tensor. Odd input extents are edge-padded to even and the output is
    /// cropped back, so any LR image can be estimated.
    pub fn infer(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let s = input.shape();
        let (pad_h, pad_w) = (s.h % 2, s.w % 2);
        let padded = if pad_h + pad_w > 0 {
            edge_pad(input, pad_h, pad_w)?
        } else {
            input.clone()
        };
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape)?;
        let x = tape.leaf(padded)?;
        let nodes = self.forward(&mut tape, &vars, x)?;
        let out = tape.value(nodes.output).clone();
        if pad_h + pad_w > 0 {
            crop_spatial(&out, s.h * self.cfg.scale, s.w * self.cfg.scale)
        } else {
            Ok(out)
        }
    }

    /// Estimate the kernel map for an LR image. A color image is collapsed
    /// to luminance for a 1-channel net; a grayscale image is replicated
    /// for a 3-channel net.
    pub fn estimate_map(&self, img: &Image) -> Result<KernelMap> {
        let prepared = match (self.cfg.in_channels, img.channels()) {
            (1, _) => img.to_luminance(),
            (3, 3) => img.clone(),
            (3, 1) => {
                let (h, w) = img.extent();
                let mut data = Vec::with_capacity(3 * h * w);
                for _ in 0..3 {
                    data.extend_from_slice(img.plane(0));
                }
                Image::new(3, h, w, img.role(), data)?
            }
            _ => unreachable!("validated channel counts"),
        };
        let out = self.infer(&prepared.to_tensor()?)?;
        KernelMap::from_tensor(&out, self.cfg.kernel_size)
    }

    /// Named parameter snapshot for checkpointing.
    pub fn state(&self) -> Vec<(String, Tensor<T>)> {
        self.params
            .iter()
            .map(|(n, _, t)| (n.to_string(), t.clone()))
            .collect()
    }

    /// Restore from a checkpoint snapshot; every parameter must be present
    /// with its exact shape.
    pub fn load_state(&mut self, entries: &[(String, Tensor<T>)]) -> Result<()> {
        self.params.load(entries)
    }
}

/// Pad bottom/right by replicating the last row/column.
fn edge_pad<T: Scalar>(t: &Tensor<T>, pad_h: usize, pad_w: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    let out = Shape::new(s.n, s.c, s.h + pad_h, s.w + pad_w);
    Ok(Tensor::from_fn(out, |n, c, r, q| {
        t.at(n, c, r.min(s.h - 1), q.min(s.w - 1))
    }))
}

/// Keep the top-left `h x w` spatial window.
fn crop_spatial<T: Scalar>(t: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let s = t.shape();
    if h > s.h || w > s.w {
        return Err(Error::Dimension(format!(
            "crop {h}x{w} exceeds tensor extent {}x{}",
            s.h, s.w
        )));
    }
    Ok(Tensor::from_fn(Shape::new(s.n, s.c, h, w), |n, c, r, q| {
        t.at(n, c, r, q)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny_cfg() -> MaNetConfig {
        MaNetConfig {
            channels: [8, 16, 8],
            scale: 2,
            ..Default::default()
        }
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let mut c = MaNetConfig::default();
        c.channels = [128, 256, 64];
        assert!(c.validate().is_err());
        let mut c = MaNetConfig::default();
        c.kernel_size = 20;
        assert!(c.validate().is_err());
        let mut c = MaNetConfig::default();
        c.split = 6; // does not divide 128
        assert!(c.validate().is_err());
        assert!(MaNetConfig::default().validate().is_ok());
    }

    #[test]
    fn default_config_parameter_count_matches_published_total() {
        // With a 3-channel head and biases included the full net carries
        // 1,810,361 parameters, matching the published 1.8104M figure.
        let cfg = MaNetConfig { in_channels: 3, ..Default::default() };
        let net: MaNet<f32> = MaNet::new(cfg, 0).unwrap();
        assert_eq!(net.params().count(true), 1_810_361);
    }

    #[test]
    fn forward_produces_probability_map_at_hr_extent() {
        let net: MaNet<f64> = MaNet::new(tiny_cfg(), 7).unwrap();
        let mut rng = stream_rng(8, StreamId::Images);
        let data = (0..1 * 1 * 12 * 16).map(|_| rng.random_range(0.0..1.0)).collect();
        let input = Tensor::from_vec(Shape::new(1, 1, 12, 16), data).unwrap();
        let out = net.infer(&input).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 441, 24, 32));
        // Every site is a probability vector.
        let plane = 24 * 32;
        for p in 0..plane {
            let mut sum = 0.0;
            for k in 0..441 {
                let v = out.data()[k * plane + p];
                assert!(v >= 0.0);
                sum += v;
            }
            assert!((sum - 1.0).abs() < 1e-9, "site {p} sums to {sum}");
        }
    }

    #[test]
    fn forward_rejects_wrong_channels_and_odd_extent() {
        let net: MaNet<f64> = MaNet::new(tiny_cfg(), 7).unwrap();
        let mut tape = Tape::new();
        let vars = net.params().bind(&mut tape).unwrap();
        let bad_ch = tape.leaf(Tensor::zeros(Shape::new(1, 3, 8, 8))).unwrap();
        assert!(net.forward(&mut tape, &vars, bad_ch).is_err());
        let odd = tape.leaf(Tensor::zeros(Shape::new(1, 1, 7, 8))).unwrap();
        assert!(net.forward(&mut tape, &vars, odd).is_err());
    }

    #[test]
    fn infer_handles_odd_extents_by_padding() {
        let net: MaNet<f64> = MaNet::new(tiny_cfg(), 7).unwrap();
        let input = Tensor::full(Shape::new(1, 1, 7, 9), 0.5f64);
        let out = net.infer(&input).unwrap();
        assert_eq!(out.shape(), Shape::new(1, 441, 14, 18));
    }

    #[test]
    fn constant_input_gives_parity_constant_interior() {
        // A stride-2 encoder-decoder is shift-equivariant in steps of 2, so
        // on constant input every interior site of one parity class must
        // carry the same kernel. Margin 12 keeps the 22-pixel receptive
        // field clear of the zero-padded border.
        let net: MaNet<f64> = MaNet::new(tiny_cfg(), 9).unwrap();
        let mut tape = Tape::new();
        let vars = net.params().bind(&mut tape).unwrap();
        let x = tape.leaf(Tensor::full(Shape::new(1, 1, 28, 28), 0.4f64)).unwrap();
        let nodes = net.forward(&mut tape, &vars, x).unwrap();
        let soft = tape.value(nodes.softmax);
        let sites = [(12, 12), (12, 14), (14, 12), (16, 16), (12, 16)];
        for &(r1, c1) in &sites {
            for &(r2, c2) in &sites {
                for k in 0..441 {
                    let d = (soft.at(0, k, r1, c1) - soft.at(0, k, r2, c2)).abs();
                    assert!(
                        d < 1e-9,
                        "sites ({r1},{c1}) vs ({r2},{c2}) differ by {d} at tap {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn same_seed_same_network() {
        let a: MaNet<f64> = MaNet::new(tiny_cfg(), 5).unwrap();
        let b: MaNet<f64> = MaNet::new(tiny_cfg(), 5).unwrap();
        for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
            assert!(x.bit_eq(y));
        }
        let c: MaNet<f64> = MaNet::new(tiny_cfg(), 6).unwrap();
        assert!(!a.params().tensors()[0].bit_eq(&c.params().tensors()[0]));
    }

    #[test]
    fn state_round_trips_through_load() {
        let a: MaNet<f64> = MaNet::new(tiny_cfg(), 1).unwrap();
        let mut b: MaNet<f64> = MaNet::new(tiny_cfg(), 2).unwrap();
        b.load_state(&a.state()).unwrap();
        for (x, y) in a.params().tensors().iter().zip(b.params().tensors()) {
            assert!(x.bit_eq(y));
        }
        // A differently shaped net refuses the same state.
        let mut c: MaNet<f64> =
            MaNet::new(MaNetConfig { channels: [4, 8, 4], scale: 2, ..Default::default() }, 3)
                .unwrap();
        assert!(matches!(c.load_state(&a.state()), Err(Error::State(_))));
    }

    #[test]
    fn estimate_map_accepts_gray_and_color() {
        let net: MaNet<f64> = MaNet::new(tiny_cfg(), 4).unwrap();
        let gray = Image::constant(1, 8, 8, crate::image::Role::Lr { scale: 2 }, 0.5).unwrap();
        let map = net.estimate_map(&gray).unwrap();
        assert_eq!(map.extent(), (16, 16));
        map.validate_probabilities(1e-9).unwrap();
        let color = Image::constant(3, 8, 8, crate::image::Role::Lr { scale: 2 }, 0.5).unwrap();
        let map2 = net.estimate_map(&color).unwrap();
        // Luminance of a constant color image is the same constant, up to
        // the rounding of the luma weights.
        assert!(map.max_abs_diff(&map2) < 1e-12);
    }

    #[test]
    fn main_path_lists_the_spatial_layers() {
        let path = main_path(&MaNetConfig::default());
        assert_eq!(path.len(), 10);
        let strided: Vec<&PathStep> = path
            .iter()
            .filter(|s| matches!(s, PathStep::Conv { stride: 2, .. } | PathStep::Transpose { .. }))
            .collect();
        assert_eq!(strided.len(), 2);
    }
}
