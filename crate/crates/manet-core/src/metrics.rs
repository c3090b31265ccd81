//! Fidelity metrics.
//!
//! Kernel estimates are scored indirectly: re-blur the HR image with the
//! estimated per-pixel kernels, decimate, and compare against the noise-free
//! observed LR. A flat patch admits many correct kernels, so comparing
//! kernels directly would punish harmless disagreements; reconstruction
//! fidelity does not.

use crate::degrade::{blur_by_map, decimate};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::kernel::KernelMap;

/// PSNR is capped here; below this MSE two images count as identical.
pub const PSNR_CAP_DB: f64 = 100.0;
const PSNR_MSE_FLOOR: f64 = 1e-10;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_same_extent(a: &Image, b: &Image) -> Result<()> {
    if a.channels() != b.channels() || a.extent() != b.extent() {
        return Err(Error::Dimension(format!(
            "metric inputs disagree: {}ch {:?} vs {}ch {:?}",
            a.channels(),
            a.extent(),
            b.channels(),
            b.extent()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB on `[0, 1]` data, capped at 100.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same_extent(a, b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse < PSNR_MSE_FLOOR {
        Ok(PSNR_CAP_DB)
    } else {
        Ok(10.0 * (1.0 / mse).log10())
    }
}

/// The normalized 11x11 Gaussian window used by SSIM.
fn ssim_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mut sum = 0.0;
    for (i, v) in w.iter_mut().enumerate() {
        let dy = (i / SSIM_WINDOW) as f64 - c;
        let dx = (i % SSIM_WINDOW) as f64 - c;
        *v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

/// Structural similarity, mean over all fully valid 11x11 window positions
/// and channels. Images must be at least 11 pixels in each direction.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same_extent(a, b)?;
    let (h, w) = a.extent();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Dimension(format!(
            "image {h}x{w} too small for an {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let win = ssim_window();
    let c1 = (SSIM_K1) * (SSIM_K1);
    let c2 = (SSIM_K2) * (SSIM_K2);
    let (oh, ow) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let pa = a.plane(ch);
        let pb = b.plane(ch);
        let mut acc = 0.0;
        for y0 in 0..oh {
            for x0 in 0..ow {
                let (mut mx, mut my) = (0.0, 0.0);
                let (mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0);
                for dy in 0..SSIM_WINDOW {
                    let ra = &pa[(y0 + dy) * w + x0..];
                    let rb = &pb[(y0 + dy) * w + x0..];
                    for dx in 0..SSIM_WINDOW {
                        let g = win[dy * SSIM_WINDOW + dx];
                        let (x, y) = (ra[dx], rb[dx]);
                        mx += g * x;
                        my += g * y;
                        xx += g * x * x;
                        yy += g * y * y;
                        xy += g * x * y;
                    }
                }
                let vx = xx - mx * mx;
                let vy = yy - my * my;
                let cov = xy - mx * my;
                acc += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
            }
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / a.channels() as f64)
}

/// HR-scale border width excluded from fidelity metrics: half the 21-tap
/// kernel support, so padding policy cannot leak into scores.
pub const FIDELITY_BORDER_HR: usize = 11;

/// Score a kernel-map estimate by LR reconstruction.
///
/// Re-blurs `img_hr` with the estimated per-pixel kernels, decimates by
/// `s`, crops an 11-HR-pixel border from both sides of the comparison, and
/// returns `(psnr, ssim)` against `img_lr`. Pass the noise-free LR;
/// comparing against a noisy observation would score the noise, not the
/// kernels.
pub fn lr_fidelity(
    img_hr: &Image,
    img_lr: &Image,
    est_map: &KernelMap,
    s: usize,
) -> Result<(f64, f64)> {
    let (h, w) = img_hr.extent();
    if est_map.extent() != (h, w) {
        return Err(Error::Dimension(format!(
            "kernel map extent {:?} does not cover HR image {h}x{w}",
            est_map.extent()
        )));
    }
    if img_lr.extent() != (h / s, w / s) {
        return Err(Error::Dimension(format!(
            "LR image {:?} is not the x{s} decimation of {h}x{w}",
            img_lr.extent()
        )));
    }
    let recon = decimate(&blur_by_map(img_hr, est_map)?, s)?;
    let border = FIDELITY_BORDER_HR.div_ceil(s);
    let (lh, lw) = recon.extent();
    if lh <= 2 * border || lw <= 2 * border {
        return Err(Error::Dimension(format!(
            "LR extent {lh}x{lw} vanishes after cropping a {border}-pixel border"
        )));
    }
    let ra = recon.crop(border, border, lh - 2 * border, lw - 2 * border)?;
    let rb = img_lr.crop(border, border, lh - 2 * border, lw - 2 * border)?;
    Ok((psnr(&ra, &rb)?, ssim(&ra, &rb)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Role;
    use crate::kernel::{synth_kernel, KernelParams};
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect();
        Image::new(1, h, w, Role::Hr, data).unwrap()
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let img = random_image(1, 16, 16);
        assert_eq!(psnr(&img, &img).unwrap(), 100.0);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        let a = Image::constant(1, 8, 8, Role::Hr, 0.4).unwrap();
        let b = Image::constant(1, 8, 8, Role::Hr, 0.5).unwrap();
        // MSE = 0.01, PSNR = 10 log10(100) = 20.
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_orders_by_error_magnitude() {
        let base = random_image(2, 12, 12);
        let bump = |eps: f64| {
            let data = base.data().iter().map(|v| v + eps).collect();
            Image::new(1, 12, 12, Role::Hr, data).unwrap()
        };
        let near = psnr(&base, &bump(0.01)).unwrap();
        let far = psnr(&base, &bump(0.1)).unwrap();
        assert!(near > far);
    }

    #[test]
    fn metrics_reject_extent_mismatch() {
        let a = random_image(3, 8, 8);
        let b = random_image(3, 8, 9);
        assert!(matches!(psnr(&a, &b), Err(Error::Dimension(_))));
        assert!(matches!(ssim(&a, &b), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_needs_a_full_window() {
        let a = random_image(4, 10, 10);
        assert!(matches!(ssim(&a, &a), Err(Error::Dimension(_))));
    }

    #[test]
    fn ssim_window_is_normalized_and_symmetric() {
        let w = ssim_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..w.len() {
            assert!((w[i] - w[w.len() - 1 - i]).abs() < 1e-15);
        }
    }

    #[test]
    fn ssim_penalizes_structure_loss_more_than_psnr_suggests() {
        // A blurred copy keeps the mean but loses structure; SSIM must drop
        // below 1 while staying in range.
        let img = random_image(5, 24, 24);
        let k = synth_kernel(KernelParams::isotropic(2.0).unwrap(), 11).unwrap();
        let blurred = crate::degrade::blur_invariant(&img, &k).unwrap();
        let s = ssim(&img, &blurred).unwrap();
        assert!(s < 0.9 && s > 0.0, "ssim {s}");
    }

    #[test]
    fn ground_truth_map_reconstructs_exactly() {
        let hr = random_image(6, 64, 64);
        let k = synth_kernel(KernelParams::new(3.0, 1.0, 0.7).unwrap(), 21).unwrap();
        let map = KernelMap::constant(&k, 64, 64);
        let lr = decimate(&blur_by_map(&hr, &map).unwrap(), 2).unwrap();
        let (p, s) = lr_fidelity(&hr, &lr, &map, 2).unwrap();
        assert_eq!(p, 100.0);
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_map_scores_below_ground_truth() {
        let hr = random_image(7, 64, 64);
        let k = synth_kernel(KernelParams::new(3.0, 1.0, 0.7).unwrap(), 21).unwrap();
        let gt_map = KernelMap::constant(&k, 64, 64);
        let lr = decimate(&blur_by_map(&hr, &gt_map).unwrap(), 2).unwrap();
        let uniform = KernelMap::uniform(21, 64, 64).unwrap();
        let (p_gt, _) = lr_fidelity(&hr, &lr, &gt_map, 2).unwrap();
        let (p_uni, _) = lr_fidelity(&hr, &lr, &uniform, 2).unwrap();
        assert!(p_uni < p_gt, "uniform {p_uni} vs ground truth {p_gt}");
    }

    #[test]
    fn fidelity_checks_extents() {
        let hr = random_image(8, 64, 64);
        let map = KernelMap::uniform(21, 64, 64).unwrap();
        let wrong_lr = random_image(9, 16, 16);
        assert!(matches!(
            lr_fidelity(&hr, &wrong_lr, &map, 2),
            Err(Error::Dimension(_))
        ));
        let small_map = KernelMap::uniform(21, 32, 32).unwrap();
        let lr = random_image(10, 32, 32);
        assert!(matches!(
            lr_fidelity(&hr, &lr, &small_map, 2),
            Err(Error::Dimension(_))
        ));
    }
}
