use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use super::composite::{Fragment, RenderContext};
use super::ProjectedSplat;
use crate::field::{GaussianField, PARAMS_PER_GAUSSIAN};
use crate::raster::RgbImage;

/// Loss gradient for one Gaussian, laid out like `Gaussian::to_params`.
pub type GaussianGrad = [f64; PARAMS_PER_GAUSSIAN];

/// Gradient with respect to one splat's 2D parameters.
#[derive(Clone, Copy, Debug, Default)]
struct SplatGrad {
    center: [f64; 2],
    /// With respect to the conic entries `[a, b, c]` of
    /// `a dx² + 2 b dx dy + c dy²`.
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl SplatGrad {
    fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.center[k] += o.center[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Exact gradient of a scalar loss with respect to every Gaussian parameter,
/// given `d_color = ∂L/∂(rendered color)` per pixel. Gaussians that were
/// culled, or that never contributed to a pixel, get zero gradient.
pub fn backward(ctx: &RenderContext, field: &GaussianField, d_color: &RgbImage) -> Vec<GaussianGrad> {
    assert_eq!((d_color.width, d_color.height), (ctx.width, ctx.height));
    let ts = ctx.cfg.tile_size.max(1);

    // per-tile partial sums, reduced below in fixed tile order
    let partials: Vec<Vec<SplatGrad>> = (0..ctx.tiles.len())
        .into_par_iter()
        .map(|tile| {
            let list = &ctx.tiles[tile];
            let mut local = vec![SplatGrad::default(); list.len()];
            if list.is_empty() {
                return local;
            }
            let (tx, ty) = (tile % ctx.tiles_x, tile / ctx.tiles_x);
            let mut frags: Vec<(usize, Fragment)> = Vec::new();
            for y in ty * ts..((ty + 1) * ts).min(ctx.height) {
                for x in tx * ts..((tx + 1) * ts).min(ctx.width) {
                    let dl = d_color.get(x, y);
                    if dl == [0.0; 3] {
                        continue;
                    }
                    frags.clear();
                    let mut pos = 0usize;
                    let t_final = ctx.blend_pixel(x, y, |f| {
                        while list[pos] != f.slot {
                            pos += 1;
                        }
                        frags.push((pos, f));
                    });
                    let mut suffix = ctx.background.map(|b| b * t_final);
                    for &(pos, f) in frags.iter().rev() {
                        let s = &ctx.splats[f.slot as usize];
                        let g = &mut local[pos];
                        let w = f.transmittance * f.alpha;
                        let mut d_alpha = 0.0;
                        for k in 0..3 {
                            g.color[k] += w * dl[k];
                            d_alpha += dl[k] * (f.transmittance * s.splat.color[k] - suffix[k] / (1.0 - f.alpha));
                            suffix[k] += w * s.splat.color[k];
                        }
                        if f.clamped {
                            continue;
                        }
                        g.opacity += d_alpha * f.gauss;
                        let d_power = d_alpha * s.splat.opacity * f.gauss;
                        let [dx, dy] = f.d;
                        let [a, b, c] = s.conic;
                        g.conic[0] += -0.5 * dx * dx * d_power;
                        g.conic[1] += -dx * dy * d_power;
                        g.conic[2] += -0.5 * dy * dy * d_power;
                        g.center[0] += (a * dx + b * dy) * d_power;
                        g.center[1] += (b * dx + c * dy) * d_power;
                    }
                }
            }
            local
        })
        .collect();

    let mut per_splat = vec![SplatGrad::default(); ctx.splats.len()];
    for (tile, local) in partials.iter().enumerate() {
        for (pos, g) in local.iter().enumerate() {
            per_splat[ctx.tiles[tile][pos] as usize].add(g);
        }
    }

    let mut out = vec![[0.0; PARAMS_PER_GAUSSIAN]; field.len()];
    let chained: Vec<(usize, GaussianGrad)> = ctx
        .splats
        .par_iter()
        .zip(per_splat.par_iter())
        .map(|(s, g)| (s.index, chain_to_gaussian(s, g, &field.gaussians[s.index])))
        .collect();
    for (i, g) in chained {
        out[i] = g;
    }
    out
}

fn chain_to_gaussian(s: &ProjectedSplat, g: &SplatGrad, gauss: &crate::field::Gaussian) -> GaussianGrad {
    let mut out = [0.0; PARAMS_PER_GAUSSIAN];
    let geo = &s.geometry;

    // color: used as-is by the blend
    out[11..14].copy_from_slice(&g.color);

    // opacity = sigmoid(logit)
    let o = s.splat.opacity;
    out[10] = g.opacity * o * (1.0 - o);

    // conic -> 2D covariance: dL/dΣ' = -Q G_Q Q with G_Q the full-matrix gradient
    let q = Matrix2::new(s.conic[0], s.conic[1], s.conic[1], s.conic[2]);
    let gq = Matrix2::new(g.conic[0], 0.5 * g.conic[1], 0.5 * g.conic[1], g.conic[2]);
    let g_cov2 = -(q * gq * q);

    // Σ' = A Σ Aᵀ + dilation
    let a = geo.a;
    let sigma = geo.cov3d;
    let g_sigma: Matrix3<f64> = a.transpose() * g_cov2 * a;
    let g_a: Matrix2x3<f64> = 2.0 * g_cov2 * a * sigma;

    // mean: center moves with A, the pinhole Jacobian also depends on the mean
    let g_center = Vector2::new(g.center[0], g.center[1]);
    let mut g_mean: Vector3<f64> = a.transpose() * g_center;
    if let Some(ph) = &geo.pinhole {
        let w = ph.world_to_cam;
        let g_j = g_a * w.transpose();
        let (x, y, z) = (ph.cam_point.x, ph.cam_point.y, ph.cam_point.z);
        let (fx, fy) = (ph.fx, ph.fy);
        let z2 = z * z;
        let z3 = z2 * z;
        let g_t = Vector3::new(
            g_j[(0, 2)] * (-fx / z2),
            g_j[(1, 2)] * (-fy / z2),
            g_j[(0, 0)] * (-fx / z2)
                + g_j[(0, 2)] * (2.0 * fx * x / z3)
                + g_j[(1, 1)] * (-fy / z2)
                + g_j[(1, 2)] * (2.0 * fy * y / z3),
        );
        g_mean += w.transpose() * g_t;
    }
    out[0..3].copy_from_slice(g_mean.as_slice());

    // Σ = M Mᵀ with M = R S
    let qn = {
        let n = gauss.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
        (gauss.rotation.map(|c| c / n), n)
    };
    let ([w, x, y, z], norm) = qn;
    let r = crate::field::quat_to_rotation(gauss.rotation);
    let scale = gauss.log_scale.map(f64::exp);
    let m = r * Matrix3::from_diagonal(&Vector3::from(scale));
    let g_m = 2.0 * g_sigma * m;
    let mut g_r = g_m;
    for j in 0..3 {
        let mut ds = 0.0;
        for i in 0..3 {
            ds += g_m[(i, j)] * r[(i, j)];
            g_r[(i, j)] = g_m[(i, j)] * scale[j];
        }
        out[3 + j] = ds * scale[j];
    }

    // rotation matrix entries as functions of the unit quaternion
    let gr = |i: usize, j: usize| g_r[(i, j)];
    let gw = 2.0
        * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) - y * gr(2, 0) + x * gr(2, 1));
    let gx = 2.0
        * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) - 2.0 * x * gr(1, 1) - w * gr(1, 2) + z * gr(2, 0)
            + w * gr(2, 1)
            - 2.0 * x * gr(2, 2));
    let gy = 2.0
        * (-2.0 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) + x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0)
            + z * gr(2, 1)
            - 2.0 * y * gr(2, 2));
    let gz = 2.0
        * (-2.0 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) + w * gr(1, 0) - 2.0 * z * gr(1, 1)
            + y * gr(1, 2)
            + x * gr(2, 0)
            + y * gr(2, 1));
    // through q / |q|
    let gq_unit = [gw, gx, gy, gz];
    let qhat = [w, x, y, z];
    let dot: f64 = (0..4).map(|k| gq_unit[k] * qhat[k]).sum();
    for k in 0..4 {
        out[6 + k] = (gq_unit[k] - qhat[k] * dot) / norm;
    }
    out
}
