//! LoG gradient discrepancy between a render and the captured image, and
//! the seed selection it drives.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::key_region::{lift_sample, sample_triangle, KeyRegionMask, SampleKey, SampledSeed, TriangleMesh2D};
use crate::raster::{GrayImage, Mask, RgbImage};

pub const DEFAULT_GM: f64 = 0.1;

pub fn to_grayscale(img: &RgbImage) -> GrayImage {
    GrayImage {
        width: img.width,
        height: img.height,
        data: img
            .data
            .iter()
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogConfig {
    /// Odd kernel width.
    pub size: usize,
    pub sigma: f64,
}

impl Default for LogConfig {
    fn default() -> Self {
        LogConfig { size: 5, sigma: 1.0 }
    }
}

/// Row-major `size × size` Laplacian-of-Gaussian kernel, shifted to zero sum.
pub fn log_kernel(cfg: &LogConfig) -> Vec<f64> {
    let r = (cfg.size / 2) as i64;
    let s2 = cfg.sigma * cfg.sigma;
    let mut k = Vec::with_capacity(cfg.size * cfg.size);
    for y in -r..=r {
        for x in -r..=r {
            let d2 = (x * x + y * y) as f64;
            k.push((d2 - 2.0 * s2) / (s2 * s2) * (-d2 / (2.0 * s2)).exp());
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    k
}

/// Half-sample symmetric border: `-1 → 0`, `n → n - 1`.
#[inline]
pub fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m < n { m } else { period - 1 - m }) as usize
}

pub type GradientMap = GrayImage;

pub fn log_filter(gray: &GrayImage, cfg: &LogConfig) -> GradientMap {
    let k = log_kernel(cfg);
    let r = (cfg.size / 2) as i64;
    let (w, h) = (gray.width, gray.height);
    let mut out = GrayImage::new(w, h);
    out.data
        .par_chunks_mut(w.max(1))
        .enumerate()
        .for_each(|(y, row)| {
            for (x, slot) in row.iter_mut().enumerate() {
                // the kernel sums to zero, so differences against the center
                // give the same response and exact zeros on flat patches
                let c = gray.data[y * w + x];
                let mut acc = 0.0;
                let mut ki = 0;
                for dy in -r..=r {
                    let yy = reflect(y as i64 + dy, h);
                    for dx in -r..=r {
                        let xx = reflect(x as i64 + dx, w);
                        acc += k[ki] * (gray.data[yy * w + xx] - c);
                        ki += 1;
                    }
                }
                *slot = acc;
            }
        });
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyMap {
    pub diff: GrayImage,
    /// Integration region: `diff > G_m` inside the key region.
    pub region: Mask,
}

pub fn discrepancy_map(
    render: &RgbImage,
    input: &RgbImage,
    mask: &KeyRegionMask,
    gm: f64,
    cfg: &LogConfig,
) -> Result<DiscrepancyMap> {
    if !render.same_shape(input) || render.width != mask.width || render.height != mask.height {
        return Err(Error::DimensionMismatch(format!(
            "render {}x{}, input {}x{}, mask {}x{}",
            render.width, render.height, input.width, input.height, mask.width, mask.height
        )));
    }
    let a = log_filter(&to_grayscale(render), cfg);
    let b = log_filter(&to_grayscale(input), cfg);
    let diff = GrayImage {
        width: a.width,
        height: a.height,
        data: a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).collect(),
    };
    let region = Mask {
        width: diff.width,
        height: diff.height,
        bits: diff
            .data
            .iter()
            .zip(&mask.bits)
            .map(|(&d, &m)| m && d > gm)
            .collect(),
    };
    Ok(DiscrepancyMap { diff, region })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeedingConfig {
    /// Samples drawn per triangle.
    pub h_t: usize,
    pub seed: u64,
    pub frame: u32,
    /// Upper bound on seeds kept for one frame (highest discrepancy first).
    pub cap: usize,
    /// Mean focal length in pixels, converts pixel spacing to scene units.
    pub focal: f64,
}

/// Samples every triangle and keeps the samples landing in the integration
/// region, lifted to 3D. Output is ordered by (triangle, sample index).
pub fn seeds_in_region(mesh: &TriangleMesh2D, region: &DiscrepancyMap, cfg: &SeedingConfig) -> Vec<SampledSeed> {
    if cfg.h_t == 0 || region.region.is_empty() {
        return Vec::new();
    }
    let (w, h) = (region.region.width, region.region.height);
    let per_triangle: Vec<Vec<(f64, SampledSeed)>> = (0..mesh.triangles.len())
        .into_par_iter()
        .map(|t| {
            let key = SampleKey {
                seed: cfg.seed,
                frame: cfg.frame,
                triangle: t as u32,
            };
            sample_triangle(mesh.corners(t), cfg.h_t, key)
                .into_iter()
                .filter_map(|p| {
                    let (x, y) = (p[0].floor(), p[1].floor());
                    if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
                        return None;
                    }
                    let idx = y as usize * w + x as usize;
                    if !region.region.bits[idx] {
                        return None;
                    }
                    let seed = lift_sample(mesh, t, p, cfg.h_t, cfg.focal).ok()?;
                    Some((region.diff.data[idx], seed))
                })
                .collect()
        })
        .collect();
    let mut all: Vec<(usize, f64, SampledSeed)> = per_triangle
        .into_iter()
        .flatten()
        .enumerate()
        .map(|(i, (d, s))| (i, d, s))
        .collect();
    if all.len() > cfg.cap {
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.truncate(cfg.cap);
        all.sort_by_key(|e| e.0);
    }
    all.into_iter().map(|e| e.2).collect()
}
