//! Procedural HR test images.
//!
//! Desk-scale training cannot ship a photo dataset, so these generators
//! provide structured rasters instead: smooth gradients as background,
//! piecewise-constant convex polygons, oriented edges, and crosses. Corners
//! and edges are what make a blur kernel identifiable; a flat patch could
//! have been blurred by almost anything.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::Result;
use crate::image::{Image, Role};

/// Fill with a smooth two-point linear gradient.
fn gradient_background(rng: &mut ChaCha12Rng, h: usize, w: usize) -> Vec<f64> {
    let g0 = rng.random_range(0.15..0.5);
    let g1 = rng.random_range(0.5..0.85);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (dy, dx) = angle.sin_cos();
    let diag = ((h * h + w * w) as f64).sqrt();
    let mut data = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let t = 0.5 + (r as f64 * dy + c as f64 * dx) / diag;
            data.push(g0 + (g1 - g0) * t.clamp(0.0, 1.0));
        }
    }
    data
}

/// Paint a filled convex polygon given by its vertices (half-plane test).
fn paint_polygon(data: &mut [f64], h: usize, w: usize, verts: &[(f64, f64)], value: f64) {
    let inside = |r: f64, c: f64| {
        let n = verts.len();
        let mut sign = 0.0f64;
        for i in 0..n {
            let (r1, c1) = verts[i];
            let (r2, c2) = verts[(i + 1) % n];
            let cross = (r2 - r1) * (c - c1) - (c2 - c1) * (r - r1);
            if cross.abs() > 1e-12 {
                if sign == 0.0 {
                    sign = cross.signum();
                } else if sign != cross.signum() {
                    return false;
                }
            }
        }
        true
    };
    let r_lo = verts.iter().map(|v| v.0).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
    let r_hi = (verts.iter().map(|v| v.0).fold(f64::MIN, f64::max).ceil() as usize).min(h - 1);
    let c_lo = verts.iter().map(|v| v.1).fold(f64::MAX, f64::min).floor().max(0.0) as usize;
    let c_hi = (verts.iter().map(|v| v.1).fold(f64::MIN, f64::max).ceil() as usize).min(w - 1);
    for r in r_lo..=r_hi {
        for c in c_lo..=c_hi {
            if inside(r as f64, c as f64) {
                data[r * w + c] = value;
            }
        }
    }
}

/// Paint an oriented hard edge: one side of a line gets `value`.
fn paint_edge(data: &mut [f64], h: usize, w: usize, rng: &mut ChaCha12Rng) {
    let r0 = rng.random_range(0.0..h as f64);
    let c0 = rng.random_range(0.0..w as f64);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (ny, nx) = angle.sin_cos();
    let value = rng.random_range(0.0..1.0);
    // Limit the painted half-plane to a band so edges do not wipe the frame.
    let band = rng.random_range(4.0..(h.min(w) as f64 / 2.0).max(5.0));
    for r in 0..h {
        for c in 0..w {
            let d = (r as f64 - r0) * ny + (c as f64 - c0) * nx;
            if d >= 0.0 && d < band {
                data[r * w + c] = value;
            }
        }
    }
}

/// Paint an axis-aligned cross (plus sign) centered at `(r0, c0)`.
fn paint_cross(
    data: &mut [f64],
    h: usize,
    w: usize,
    r0: usize,
    c0: usize,
    arm: usize,
    thickness: usize,
    value: f64,
) {
    let half_t = thickness / 2;
    for r in r0.saturating_sub(arm)..=(r0 + arm).min(h - 1) {
        for c in c0.saturating_sub(half_t)..=(c0 + half_t).min(w - 1) {
            data[r * w + c] = value;
        }
    }
    for c in c0.saturating_sub(arm)..=(c0 + arm).min(w - 1) {
        for r in r0.saturating_sub(half_t)..=(r0 + half_t).min(h - 1) {
            data[r * w + c] = value;
        }
    }
}

/// Generate a structured grayscale HR image.
///
/// `density` scales how many shapes are drawn; any positive value
/// guarantees at least one polygon well inside the frame, so the image is
/// never flat.
pub fn generate(rng: &mut ChaCha12Rng, h: usize, w: usize, density: f64) -> Result<Image> {
    let mut data = gradient_background(rng, h, w);
    if density > 0.0 {
        let base = (h * w) as f64 / 2048.0;
        let shapes = 1 + (density * base) as usize;
        for i in 0..shapes {
            match if i == 0 { 0 } else { rng.random_range(0..3u8) } {
                // Convex quad; the first one is kept inside the frame so
                // structure is guaranteed regardless of the draw sequence.
                0 => {
                    let (rc, cc) = if i == 0 {
                        (h as f64 / 2.0, w as f64 / 2.0)
                    } else {
                        (rng.random_range(0.0..h as f64), rng.random_range(0.0..w as f64))
                    };
                    let rad = rng.random_range(3.0..(h.min(w) as f64 / 3.0).max(4.0));
                    let phase = rng.random_range(0.0..std::f64::consts::FRAC_PI_2);
                    let verts: Vec<(f64, f64)> = (0..4)
                        .map(|k| {
                            let a = phase + k as f64 * std::f64::consts::FRAC_PI_2;
                            (rc + rad * a.sin(), cc + rad * a.cos())
                        })
                        .collect();
                    paint_polygon(&mut data, h, w, &verts, rng.random_range(0.0..1.0));
                }
                1 => paint_edge(&mut data, h, w, rng),
                _ => {
                    let r0 = rng.random_range(0..h);
                    let c0 = rng.random_range(0..w);
                    let arm = rng.random_range(2..(h.min(w) / 4).max(3));
                    paint_cross(&mut data, h, w, r0, c0, arm, arm.div_ceil(3), rng.random_range(0.0..1.0));
                }
            }
        }
    }
    Image::new(1, h, w, Role::Hr, data)
}

/// The probe target: a flat mid-gray frame with one centered dark cross
/// whose arms span `structure` pixels. `structure = 0` gives a flat image.
pub fn cross_target(h: usize, w: usize, structure: usize) -> Result<Image> {
    let mut data = vec![0.5; h * w];
    if structure > 0 {
        let arm = (structure.min(h.min(w)) - 1) / 2;
        let thickness = (structure / 5).max(1);
        paint_cross(&mut data, h, w, h / 2, w / 2, arm, thickness, 0.05);
    }
    Image::new(1, h, w, Role::Hr, data)
}

/// Standard deviation of pixel values; zero means flat.
pub fn contrast(img: &Image) -> f64 {
    let mean = img.mean();
    let var = img
        .data()
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / img.data().len() as f64;
    var.sqrt()
}
