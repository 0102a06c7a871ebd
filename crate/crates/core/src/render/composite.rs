use rayon::prelude::*;

use super::{ProjectedSplat, RasterConfig};
use crate::raster::{GrayImage, Rgb, RgbImage};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    /// Accumulated opacity, `1 - final transmittance`.
    pub alpha: GrayImage,
    /// Number of splats blended into each pixel.
    pub contributors: Vec<u32>,
}

/// Everything the backward pass needs to replay a forward render.
#[derive(Clone, Debug)]
pub struct RenderContext {
    /// Splats in compositing order.
    pub splats: Vec<ProjectedSplat>,
    pub tiles: Vec<Vec<u32>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    pub cfg: RasterConfig,
}

/// One blended splat at one pixel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Fragment {
    pub slot: u32,
    pub alpha: f64,
    pub gauss: f64,
    pub clamped: bool,
    pub transmittance: f64,
    pub d: [f64; 2],
}

impl RenderContext {
    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.cfg.tile_size) * self.tiles_x + x / self.cfg.tile_size
    }

    /// Front-to-back blend of the splats listed for this pixel's tile.
    /// Calls `visit` for every fragment that contributes and returns the
    /// final transmittance.
    #[inline]
    pub(crate) fn blend_pixel(&self, x: usize, y: usize, mut visit: impl FnMut(Fragment)) -> f64 {
        let cfg = &self.cfg;
        let p = [x as f64 + 0.5, y as f64 + 0.5];
        let mut t = 1.0;
        for &slot in &self.tiles[self.tile_of(x, y)] {
            let s = &self.splats[slot as usize];
            let d = [p[0] - s.splat.center[0], p[1] - s.splat.center[1]];
            let [a, b, c] = s.conic;
            let power = -0.5 * (a * d[0] * d[0] + 2.0 * b * d[0] * d[1] + c * d[1] * d[1]);
            if power > 0.0 {
                continue;
            }
            let gauss = power.exp();
            let raw = s.splat.opacity * gauss;
            let clamped = raw > cfg.alpha_max;
            let alpha = if clamped { cfg.alpha_max } else { raw };
            if alpha < cfg.alpha_min {
                continue;
            }
            visit(Fragment {
                slot,
                alpha,
                gauss,
                clamped,
                transmittance: t,
                d,
            });
            t *= 1.0 - alpha;
            if t < cfg.transmittance_min {
                break;
            }
        }
        t
    }
}

/// Sorts, bins and blends `splats` onto a `width × height` raster.
pub fn composite(
    mut splats: Vec<ProjectedSplat>,
    width: usize,
    height: usize,
    background: Rgb,
    cfg: &RasterConfig,
) -> (RenderOutput, RenderContext) {
    splats.sort_by(|a, b| {
        a.splat
            .depth_key
            .total_cmp(&b.splat.depth_key)
            .then(a.index.cmp(&b.index))
    });
    let ts = cfg.tile_size.max(1);
    let tiles_x = width.div_ceil(ts);
    let tiles_y = height.div_ceil(ts);
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (slot, s) in splats.iter().enumerate() {
        let [cx, cy] = s.splat.center;
        let [ex, ey] = s.extent;
        // pixel centers sit at i + 0.5
        let x0 = (cx - ex - 0.5).ceil().max(0.0);
        let x1 = (cx + ex - 0.5).floor().min(width as f64 - 1.0);
        let y0 = (cy - ey - 0.5).ceil().max(0.0);
        let y1 = (cy + ey - 0.5).floor().min(height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / ts, x1 as usize / ts);
        let (ty0, ty1) = (y0 as usize / ts, y1 as usize / ts);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(slot as u32);
            }
        }
    }
    let ctx = RenderContext {
        splats,
        tiles,
        tiles_x,
        tiles_y,
        width,
        height,
        background,
        cfg: *cfg,
    };

    let mut color = RgbImage::new(width, height);
    let mut alpha = GrayImage::new(width, height);
    let mut contributors = vec![0u32; width * height];
    color
        .data
        .par_chunks_mut(width.max(1))
        .zip(alpha.data.par_chunks_mut(width.max(1)))
        .zip(contributors.par_chunks_mut(width.max(1)))
        .enumerate()
        .for_each(|(y, ((crow, arow), nrow))| {
            for x in 0..width {
                let mut c = [0.0; 3];
                let mut n = 0u32;
                let t = ctx.blend_pixel(x, y, |f| {
                    let s = &ctx.splats[f.slot as usize].splat;
                    let w = f.transmittance * f.alpha;
                    for k in 0..3 {
                        c[k] += w * s.color[k];
                    }
                    n += 1;
                });
                for k in 0..3 {
                    c[k] += t * background[k];
                }
                crow[x] = c;
                arow[x] = 1.0 - t;
                nrow[x] = n;
            }
        });
    (
        RenderOutput {
            color,
            alpha,
            contributors,
        },
        ctx,
    )
}
