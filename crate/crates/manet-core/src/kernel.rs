//! Anisotropic Gaussian blur kernels, kernel fields, and kernel maps.
//!
//! A [`KernelParams`] triple describes a centered 2-D Gaussian by its two
//! principal widths and rotation angle. [`synth_kernel`] discretizes it by
//! sampling the density at integer offsets from the exact grid center and
//! normalizing, with no sub-pixel shift. A [`KernelField`] assigns one
//! parameter triple per image patch, and a [`KernelMap`] is the dense
//! per-pixel form used as the learning target.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Shape, Tensor};

/// Kernel support used throughout the full-scale setup.
pub const DEFAULT_KERNEL_SIZE: usize = 21;

/// Patch edge length for spatially variant evaluation fields.
pub const DEFAULT_PATCH_SIZE: usize = 40;

/// Width floor applied before inverting the covariance, guarding against a
/// singular matrix on degenerate inputs.
const SIGMA_FLOOR: f64 = 1e-3;

/// Principal widths (HR-pixel units) and rotation of a Gaussian kernel.
/// `theta = 0` aligns `sigma1` with the horizontal axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma1: f64,
    pub sigma2: f64,
    /// Radians, normalized into `[0, pi)`; a centered Gaussian has period pi.
    pub theta: f64,
}

impl KernelParams {
    pub fn new(sigma1: f64, sigma2: f64, theta: f64) -> Result<Self> {
        if !(sigma1 > 0.0) || !(sigma2 > 0.0) {
            return Err(Error::Argument(format!(
                "kernel widths must be positive, got sigma1={sigma1} sigma2={sigma2}"
            )));
        }
        if !theta.is_finite() {
            return Err(Error::Argument(format!("kernel angle must be finite, got {theta}")));
        }
        let mut t = theta.rem_euclid(PI);
        if t >= PI {
            t = 0.0;
        }
        Ok(KernelParams { sigma1, sigma2, theta: t })
    }

    /// The isotropic unit-width kernel, handy as a neutral default.
    pub fn isotropic(sigma: f64) -> Result<Self> {
        Self::new(sigma, sigma, 0.0)
    }
}

/// A discretized, normalized blur kernel with odd square support.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    size: usize,
    taps: Vec<f64>,
}

impl Kernel {
    /// Wrap raw taps, normalizing them to sum 1.
    pub fn from_taps(size: usize, taps: Vec<f64>) -> Result<Self> {
        if size % 2 == 0 || size == 0 {
            return Err(Error::Argument(format!("kernel size must be odd, got {size}")));
        }
        if taps.len() != size * size {
            return Err(Error::Dimension(format!(
                "kernel needs {} taps, got {}",
                size * size,
                taps.len()
            )));
        }
        if taps.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(Error::Numeric("kernel taps must be finite and nonnegative".into()));
        }
        let sum: f64 = taps.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Numeric("kernel taps sum to zero".into()));
        }
        let taps = taps.into_iter().map(|t| t / sum).collect();
        Ok(Kernel { size, taps })
    }

    /// The uniform kernel: every tap `1/size^2`.
    pub fn uniform(size: usize) -> Result<Self> {
        Self::from_taps(size, vec![1.0; size * size])
    }

    /// Delta kernel: all mass on the center tap.
    pub fn delta(size: usize) -> Result<Self> {
        let mut taps = vec![0.0; size * size];
        taps[(size / 2) * size + size / 2] = 1.0;
        Self::from_taps(size, taps)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.taps[row * self.size + col]
    }

    pub fn max_abs_diff(&self, other: &Kernel) -> f64 {
        assert_eq!(self.size, other.size, "comparing kernels of different support");
        self.taps
            .iter()
            .zip(other.taps.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Second moments `(m_xx, m_xy, m_yy)` of the tap distribution, with
    /// `x` the horizontal offset from center. The eigenvectors of this
    /// matrix recover the kernel's principal directions.
    pub fn second_moments(&self) -> (f64, f64, f64) {
        let c = (self.size / 2) as f64;
        let (mut xx, mut xy, mut yy) = (0.0, 0.0, 0.0);
        for r in 0..self.size {
            for q in 0..self.size {
                let k = self.at(r, q);
                let dx = q as f64 - c;
                let dy = r as f64 - c;
                xx += k * dx * dx;
                xy += k * dx * dy;
                yy += k * dy * dy;
            }
        }
        (xx, xy, yy)
    }

    /// Angle of the principal axis in `[0, pi)`, from the moment matrix.
    pub fn principal_angle(&self) -> f64 {
        let (xx, xy, yy) = self.second_moments();
        let t = 0.5 * (2.0 * xy).atan2(xx - yy);
        t.rem_euclid(PI)
    }
}

/// Discretize the Gaussian described by `p` on an odd `size x size` grid.
pub fn synth_kernel(p: KernelParams, size: usize) -> Result<Kernel> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::Argument(format!("kernel size must be odd, got {size}")));
    }
    let s1 = p.sigma1.max(SIGMA_FLOOR);
    let s2 = p.sigma2.max(SIGMA_FLOOR);
    // Inverse covariance of R(theta) diag(s1^2, s2^2) R(theta)^T, expanded.
    let (sin, cos) = p.theta.sin_cos();
    let a = 1.0 / (s1 * s1);
    let b = 1.0 / (s2 * s2);
    let ixx = a * cos * cos + b * sin * sin;
    let ixy = (a - b) * sin * cos;
    let iyy = a * sin * sin + b * cos * cos;
    let c = (size / 2) as f64;
    let mut taps = Vec::with_capacity(size * size);
    for r in 0..size {
        for q in 0..size {
            let dx = q as f64 - c;
            let dy = r as f64 - c;
            let quad = ixx * dx * dx + 2.0 * ixy * dx * dy + iyy * dy * dy;
            taps.push((-0.5 * quad).exp());
        }
    }
    Kernel::from_taps(size, taps)
}

/// Training-range draw: widths uniform on `[0.175 s, 2.5 s]`, angle uniform
/// on `[0, pi)`.
pub fn sample_training_params(rng: &mut ChaCha12Rng, s: usize) -> KernelParams {
    let lo = 0.175 * s as f64;
    let hi = 2.5 * s as f64;
    let sigma1 = rng.random_range(lo..hi);
    let sigma2 = rng.random_range(lo..hi);
    let theta = rng.random_range(0.0..PI);
    KernelParams { sigma1, sigma2, theta }
}

/// The 9 deduplicated evaluation kernels for a scale factor.
///
/// Widths come from a per-scale set of three values. Since swapping the
/// widths equals rotating by pi/2 and isotropic kernels ignore the angle,
/// the distinct combinations are the 6 ordered pairs at theta = 0 plus the
/// 3 strictly anisotropic pairs again at theta = pi/4.
pub fn eval_kernel_grid(s: usize) -> Result<Vec<KernelParams>> {
    let widths: [f64; 3] = match s {
        2 => [1.0, 3.0, 5.0],
        3 => [1.0, 4.0, 7.0],
        4 => [1.0, 5.0, 9.0],
        _ => {
            return Err(Error::Argument(format!(
                "eval kernel grid defined for scales 2-4, got {s}"
            )))
        }
    };
    let mut out = Vec::with_capacity(9);
    for (i, &w1) in widths.iter().enumerate() {
        for &w2 in &widths[..=i] {
            out.push(KernelParams::new(w1, w2, 0.0)?);
        }
    }
    for (i, &w1) in widths.iter().enumerate() {
        for &w2 in &widths[..i] {
            out.push(KernelParams::new(w1, w2, PI / 4.0)?);
        }
    }
    debug_assert_eq!(out.len(), 9);
    Ok(out)
}

/// Per-patch kernel assignment over an HR extent.
///
/// The grid has `ceil(H/patch)` rows and `ceil(W/patch)` columns; pixel
/// `(r, c)` belongs to patch `(r/patch, c/patch)`.
#[derive(Debug, Clone)]
pub struct KernelField {
    h: usize,
    w: usize,
    patch_size: usize,
    rows: usize,
    cols: usize,
    /// 1-5 per the evaluation protocol; 0 marks a constant field.
    field_type: u8,
    scale: usize,
    params: Vec<KernelParams>,
}

impl KernelField {
    fn grid(h: usize, w: usize, patch_size: usize) -> Result<(usize, usize)> {
        if h == 0 || w == 0 || patch_size == 0 {
            return Err(Error::Argument(format!(
                "kernel field needs positive extent and patch size, got {h}x{w} patch {patch_size}"
            )));
        }
        Ok((h.div_ceil(patch_size), w.div_ceil(patch_size)))
    }

    /// A field where every patch shares one parameter triple.
    pub fn constant(h: usize, w: usize, patch_size: usize, scale: usize, p: KernelParams) -> Result<Self> {
        let (rows, cols) = Self::grid(h, w, patch_size)?;
        Ok(KernelField {
            h,
            w,
            patch_size,
            rows,
            cols,
            field_type: 0,
            scale,
            params: vec![p; rows * cols],
        })
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn patch_grid(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn field_type(&self) -> u8 {
        self.field_type
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn patch_params(&self, row: usize, col: usize) -> KernelParams {
        self.params[row * self.cols + col]
    }

    /// Parameters governing HR pixel `(r, c)`.
    pub fn params_at(&self, r: usize, c: usize) -> KernelParams {
        debug_assert!(r < self.h && c < self.w);
        self.patch_params(r / self.patch_size, c / self.patch_size)
    }
}

/// Build one of the five evaluation fields over an `H x W` HR extent.
///
/// With `a = 2.325 s` and `b = 0.175 s`, and `x`, `y` the patch's column
/// and row fraction in `[0, 1]`:
///
/// 1. `sigma1 = a + b`, `sigma2 = a x + b`, `theta = 0`
/// 2. `sigma1 = a y + b`, `sigma2 = a x + b`, `theta = 0`
/// 3. `sigma1 = a + b`, `sigma2 = b`, `theta = pi x`
/// 4. `sigma1 = a y + b`, `sigma2 = a x + b`, `theta = pi x`
/// 5. widths uniform on `[b, a + b]`, angle uniform on `[0, pi)`, per patch
pub fn make_kernel_field(
    field_type: u8,
    h: usize,
    w: usize,
    patch_size: usize,
    scale: usize,
    rng: &mut ChaCha12Rng,
) -> Result<KernelField> {
    if !(1..=5).contains(&field_type) {
        return Err(Error::Argument(format!(
            "field type must be 1-5, got {field_type}"
        )));
    }
    let (rows, cols) = KernelField::grid(h, w, patch_size)?;
    let a = 2.325 * scale as f64;
    let b = 0.175 * scale as f64;
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let mut params = Vec::with_capacity(rows * cols);
    for row in 0..rows {
        let y = frac(row, rows);
        for col in 0..cols {
            let x = frac(col, cols);
            let p = match field_type {
                1 => KernelParams::new(a + b, a * x + b, 0.0)?,
                2 => KernelParams::new(a * y + b, a * x + b, 0.0)?,
                3 => KernelParams::new(a + b, b, PI * x)?,
                4 => KernelParams::new(a * y + b, a * x + b, PI * x)?,
                5 => {
                    let s1 = rng.random_range(b..a + b);
                    let s2 = rng.random_range(b..a + b);
                    let t = rng.random_range(0.0..PI);
                    KernelParams::new(s1, s2, t)?
                }
                _ => unreachable!(),
            };
            params.push(p);
        }
    }
    Ok(KernelField {
        h,
        w,
        patch_size,
        rows,
        cols,
        field_type,
        scale,
        params,
    })
}

/// Dense per-pixel kernels over an HR extent, stored tap-major:
/// `data[(k * H + r) * W + c]` is tap `k` of pixel `(r, c)`'s kernel.
#[derive(Debug, Clone)]
pub struct KernelMap {
    size: usize,
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl KernelMap {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn extent(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn tap_at(&self, k: usize, r: usize, c: usize) -> f64 {
        self.data[(k * self.h + r) * self.w + c]
    }

    /// Materialize the field: synthesize one kernel per patch, broadcast to
    /// every pixel the patch covers.
    pub fn from_field(field: &KernelField, size: usize) -> Result<KernelMap> {
        let (h, w) = field.extent();
        let (rows, cols) = field.patch_grid();
        let kernels: Vec<Kernel> = (0..rows * cols)
            .map(|i| synth_kernel(field.patch_params(i / cols, i % cols), size))
            .collect::<Result<_>>()?;
        let mut data = vec![0.0; size * size * h * w];
        for (k, plane) in data.chunks_mut(h * w).enumerate() {
            for r in 0..h {
                let pr = r / field.patch_size();
                for c in 0..w {
                    let pc = c / field.patch_size();
                    plane[r * w + c] = kernels[pr * cols + pc].taps()[k];
                }
            }
        }
        Ok(KernelMap { size, h, w, data })
    }

    /// Broadcast a single kernel to every pixel.
    pub fn constant(kernel: &Kernel, h: usize, w: usize) -> KernelMap {
        let size = kernel.size();
        let mut data = vec![0.0; size * size * h * w];
        for (k, plane) in data.chunks_mut(h * w).enumerate() {
            plane.fill(kernel.taps()[k]);
        }
        KernelMap { size, h, w, data }
    }

    /// The uniform-kernel baseline map: every tap `1/size^2` everywhere.
    pub fn uniform(size: usize, h: usize, w: usize) -> Result<KernelMap> {
        Ok(Self::constant(&Kernel::uniform(size)?, h, w))
    }

    /// The kernel at one pixel, gathered across tap planes.
    pub fn kernel_at(&self, r: usize, c: usize) -> Result<Kernel> {
        let taps = (0..self.size * self.size)
            .map(|k| self.tap_at(k, r, c))
            .collect();
        Kernel::from_taps(self.size, taps)
    }

    /// Check that every pixel's kernel is a probability vector: taps
    /// nonnegative (within `-tol`) and summing to 1 within `tol`.
    pub fn validate_probabilities(&self, tol: f64) -> Result<()> {
        let plane = self.h * self.w;
        for p in 0..plane {
            let mut sum = 0.0;
            for k in 0..self.size * self.size {
                let t = self.data[k * plane + p];
                if !t.is_finite() || t < -tol {
                    return Err(Error::Contract(format!(
                        "kernel map tap {k} at pixel {p} is {t}"
                    )));
                }
                sum += t;
            }
            if (sum - 1.0).abs() > tol {
                return Err(Error::Contract(format!(
                    "kernel map at pixel {p} sums to {sum}"
                )));
            }
        }
        Ok(())
    }

    /// View as a `1 x size^2 x H x W` tensor.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let shape = Shape::new(1, self.size * self.size, self.h, self.w);
        let data = self.data.iter().map(|&v| T::from_f64(v)).collect();
        Tensor::from_vec(shape, data)
    }

    /// Reinterpret a `1 x size^2 x H x W` tensor as a map.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, size: usize) -> Result<KernelMap> {
        let s = t.shape();
        if s.n != 1 || s.c != size * size {
            return Err(Error::Dimension(format!(
                "kernel map tensor must be 1x{}xHxW, got {s}",
                size * size
            )));
        }
        Ok(KernelMap {
            size,
            h: s.h,
            w: s.w,
            data: t.data().iter().map(|v| v.as_f64()).collect(),
        })
    }

    pub fn max_abs_diff(&self, other: &KernelMap) -> f64 {
        assert_eq!(self.data.len(), other.data.len());
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}
