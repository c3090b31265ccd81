//! Floating-point raster images.
//!
//! Values live in `[0, 1]` nominally but are clamped only at export;
//! intermediate pipeline stages (blur residue, noise) may step outside the
//! range and must not be truncated mid-way. Data is planar: all of channel
//! 0, then channel 1, each row-major.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Whether an image is on the high- or low-resolution side of degradation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Hr,
    /// Low-resolution, tagged with the scale factor that produced it.
    Lr { scale: usize },
}

#[derive(Debug, Clone)]
pub struct Image {
    channels: usize,
    h: usize,
    w: usize,
    role: Role,
    data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, h: usize, w: usize, role: Role, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Argument(format!(
                "images are 1- or 3-channel, got {channels}"
            )));
        }
        if h == 0 || w == 0 {
            return Err(Error::Argument(format!("empty image extent {h}x{w}")));
        }
        if data.len() != channels * h * w {
            return Err(Error::Dimension(format!(
                "image {channels}x{h}x{w} needs {} values, got {}",
                channels * h * w,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        Ok(Image { channels, h, w, role, data })
    }

    pub fn zeros(channels: usize, h: usize, w: usize, role: Role) -> Result<Self> {
        Self::new(channels, h, w, role, vec![0.0; channels * h * w])
    }

    pub fn constant(channels: usize, h: usize, w: usize, role: Role, v: f64) -> Result<Self> {
        Self::new(channels, h, w, role, vec![v; channels * h * w])
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, c: usize, r: usize, q: usize) -> f64 {
        self.data[(c * self.h + r) * self.w + q]
    }

    /// One channel's plane, row-major.
    pub fn plane(&self, c: usize) -> &[f64] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }

    /// Same raster reinterpreted with a different role tag.
    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    /// Rec. 601 luminance; a 1-channel image passes through unchanged.
    pub fn to_luminance(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let plane = self.h * self.w;
        let mut data = Vec::with_capacity(plane);
        for p in 0..plane {
            data.push(
                0.299 * self.data[p] + 0.587 * self.data[plane + p] + 0.114 * self.data[2 * plane + p],
            );
        }
        Image { channels: 1, h: self.h, w: self.w, role: self.role, data }
    }

    /// Axis-aligned crop of `ch x cw` pixels starting at `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, ch: usize, cw: usize) -> Result<Image> {
        if r0 + ch > self.h || c0 + cw > self.w || ch == 0 || cw == 0 {
            return Err(Error::Argument(format!(
                "crop {ch}x{cw} at ({r0},{c0}) exceeds image {}x{}",
                self.h, self.w
            )));
        }
        let mut data = Vec::with_capacity(self.channels * ch * cw);
        for c in 0..self.channels {
            let src = self.plane(c);
            for r in 0..ch {
                let row = (r0 + r) * self.w + c0;
                data.extend_from_slice(&src[row..row + cw]);
            }
        }
        Image { channels: self.channels, h: ch, w: cw, role: self.role, data }.validate()
    }

    fn validate(self) -> Result<Image> {
        Image::new(self.channels, self.h, self.w, self.role, self.data)
    }

    /// One of the 8 dihedral variants: `rot` quarter turns then optional
    /// horizontal flip.
    pub fn dihedral(&self, rot: u8, flip: bool) -> Image {
        let rot = rot % 4;
        let (oh, ow) = if rot % 2 == 0 { (self.h, self.w) } else { (self.w, self.h) };
        let mut data = vec![0.0; self.data.len()];
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = &mut data[c * oh * ow..(c + 1) * oh * ow];
            for r in 0..oh {
                for q in 0..ow {
                    let qq = if flip { ow - 1 - q } else { q };
                    // Destination (r, qq) pulled back through the rotation.
                    let (sr, sc) = match rot {
                        0 => (r, qq),
                        1 => (self.h - 1 - qq, r),
                        2 => (self.h - 1 - r, self.w - 1 - qq),
                        _ => (qq, self.w - 1 - r),
                    };
                    dst[r * ow + q] = src[sr * self.w + sc];
                }
            }
        }
        Image { channels: self.channels, h: oh, w: ow, role: self.role, data }
    }

    /// Mean over all channels and pixels.
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Largest absolute pixel difference; extents must match.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f64> {
        if self.channels != other.channels || self.h != other.h || self.w != other.w {
            return Err(Error::Dimension(format!(
                "comparing images {}x{}x{} vs {}x{}x{}",
                self.channels, self.h, self.w, other.channels, other.h, other.w
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// View as a `1 x C x H x W` tensor, the network's input convention.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let shape = Shape::new(1, self.channels, self.h, self.w);
        let data = self.data.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Reinterpret a single-batch tensor as an image.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, role: Role) -> Result<Image> {
        let s = t.shape();
        if s.n != 1 {
            return Err(Error::Dimension(format!(
                "image tensors are single-batch, got {s}"
            )));
        }
        Image::new(
            s.c,
            s.h,
            s.w,
            role,
            t.data().iter().map(|v| v.as_f64()).collect(),
        )
    }

    /// Clamp into `[0, 1]` and quantize to 8 bits per channel, the only
    /// place the pipeline is allowed to clip.
    pub fn to_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect()
    }

    /// Rebuild from 8-bit samples (values scaled into `[0, 1]`).
    pub fn from_bytes(channels: usize, h: usize, w: usize, role: Role, bytes: &[u8]) -> Result<Image> {
        let data = bytes.iter().map(|&b| b as f64 / 255.0).collect();
        Image::new(channels, h, w, role, data)
    }
}
