//! Rendering of kernels and kernel maps into grayscale images.

use manet_core::image::{Image, Role};
use manet_core::kernel::{Kernel, KernelMap};
use manet_core::{Error, Result};

/// Border drawn around pasted kernel tiles, in pixels.
const FRAME: usize = 1;

/// Render one kernel with its largest tap at full white.
pub fn kernel_tile(kernel: &Kernel) -> Image {
    let peak = kernel.taps().iter().cloned().fold(0.0, f64::max);
    let scale = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let data = kernel.taps().iter().map(|&t| t * scale).collect();
    Image::new(1, kernel.size(), kernel.size(), Role::Hr, data)
        .expect("tile data matches the kernel extent")
}

/// Grid of per-site kernels from a map, tiles side by side with frames.
pub fn map_grid(map: &KernelMap, rows: usize, cols: usize) -> Result<Image> {
    let size = map.size();
    let cell = size + 2 * FRAME;
    let mut data = vec![1.0; rows * cell * cols * cell];
    for (gi, gj, r, c) in grid_sites(map.extent(), rows, cols) {
        let tile = kernel_tile(&map.kernel_at(r, c)?);
        blit(&mut data, cols * cell, gi * cell + FRAME, gj * cell + FRAME, &tile);
    }
    Image::new(1, rows * cell, cols * cell, Role::Hr, data)
}

/// The LR image nearest-upscaled to the map extent with the kernels at an
/// even-aligned site grid pasted over it.
pub fn montage(lr: &Image, map: &KernelMap, rows: usize, cols: usize) -> Result<Image> {
    let (h, w) = map.extent();
    let (lh, lw) = lr.extent();
    if lh == 0 || h % lh != 0 || w % lw != 0 || h / lh != w / lw {
        return Err(Error::Dimension(format!(
            "map extent {h}x{w} is not an integer upscale of the {lh}x{lw} input"
        )));
    }
    let scale = h / lh;
    let lum = lr.to_luminance();
    let src = lum.plane(0);
    let mut data = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            data[r * w + c] = src[(r / scale) * lw + c / scale];
        }
    }
    let size = map.size();
    for (_, _, r, c) in grid_sites((h, w), rows, cols) {
        let tile = kernel_tile(&map.kernel_at(r, c)?);
        // Top-left corner keeping the frame and tile inside the canvas.
        let half = size / 2 + FRAME;
        let top = r.saturating_sub(half).min(h - size - 2 * FRAME);
        let left = c.saturating_sub(half).min(w - size - 2 * FRAME);
        for fr in 0..size + 2 * FRAME {
            for fc in 0..size + 2 * FRAME {
                data[(top + fr) * w + left + fc] = 1.0;
            }
        }
        blit(&mut data, w, top + FRAME, left + FRAME, &tile);
    }
    Image::new(1, h, w, Role::Hr, data)
}

/// Sample sites `(grid row, grid col, image row, image col)` spread over an
/// extent. Coordinates are snapped to even values so that the period-2
/// structure of the upsampled map cannot alias the selection.
pub fn grid_sites(
    extent: (usize, usize),
    rows: usize,
    cols: usize,
) -> impl Iterator<Item = (usize, usize, usize, usize)> {
    let (h, w) = extent;
    (0..rows).flat_map(move |gi| {
        (0..cols).map(move |gj| {
            let r = (h * (2 * gi + 1) / (2 * rows)) & !1;
            let c = (w * (2 * gj + 1) / (2 * cols)) & !1;
            (gi, gj, r.min(h - 1), c.min(w - 1))
        })
    })
}

fn blit(data: &mut [f64], stride: usize, top: usize, left: usize, tile: &Image) {
    let (th, tw) = tile.extent();
    let src = tile.plane(0);
    for r in 0..th {
        for c in 0..tw {
            data[(top + r) * stride + left + c] = src[r * tw + c];
        }
    }
}
