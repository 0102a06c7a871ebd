//! Online optimization of the Gaussian field.
//!
//! The trainer keeps every registered view (image, pose and key-region
//! mask). An initial fit runs round-robin over the first frames; afterwards
//! each arriving frame is masked, compared against the current render,
//! seeded with new Gaussians where the LoG discrepancy is large, and
//! followed by a short burst of optimization over the most recent views.
//! Younger Gaussians learn faster than older ones.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discrepancy::{discrepancy_map, seeds_in_region, LogConfig, SeedingConfig};
use crate::error::Result;
use crate::field::{GaussianField, PARAMS_PER_GAUSSIAN};
use crate::geometry::visible_reprojections;
use crate::key_region::{build_mesh, rasterize_mask, KeyRegionMask, MeshConfig, TriangleMesh2D};
use crate::raster::{masked_psnr, Mask, Rgb, RgbImage};
use crate::render::{backward, render, GaussianGrad, RasterConfig, RenderOutput, View};
use crate::scene::FrameEvent;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub init_frames: usize,
    pub init_iters: usize,
    pub per_frame_iters: usize,
    /// LoG discrepancy threshold.
    pub gm: f64,
    /// Samples per triangle.
    pub h_t: usize,
    pub seed_cap: usize,
    /// Mean learning rate per unit of scene extent.
    pub lr_mean: f64,
    pub lr_log_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_color: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ssim_weight: f64,
    /// Frames after which a Gaussian's learning rate halves.
    pub lr_decay_halflife: f64,
    pub lr_floor: f64,
    pub local_window: usize,
    pub seed: u64,
    pub prune: bool,
    pub prune_every: usize,
    pub prune_threshold: f64,
    pub mesh: MeshConfig,
    pub log: LogConfig,
    pub raster: RasterConfig,
    /// Background for evaluation renders and discrepancy.
    pub background: Rgb,
    /// Draw a fresh uniform background color for every optimization step,
    /// so opacity cannot be traded for brightness.
    pub random_background: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_frames: 3,
            init_iters: 2000,
            per_frame_iters: 200,
            gm: crate::discrepancy::DEFAULT_GM,
            h_t: 16,
            seed_cap: 50_000,
            lr_mean: 1.6e-4,
            lr_log_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_color: 2.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-15,
            ssim_weight: 0.2,
            lr_decay_halflife: 8.0,
            lr_floor: 0.05,
            local_window: 5,
            seed: 0,
            prune: true,
            prune_every: 10,
            prune_threshold: 0.005,
            mesh: MeshConfig::default(),
            log: LogConfig::default(),
            raster: RasterConfig::default(),
            background: [0.0; 3],
            random_background: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::Config;
        if self.init_frames < 1 || self.h_t < 1 || self.local_window < 1 {
            return Err(Config("init_frames, h_t and local_window must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.ssim_weight) {
            return Err(Config(format!("ssim weight {} outside [0, 1]", self.ssim_weight)));
        }
        if !(self.lr_decay_halflife >= 1.0) {
            return Err(Config("learning-rate halflife must be at least one frame".into()));
        }
        if !(self.gm > 0.0) {
            return Err(Config("G_m must be positive".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// loss

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding.
fn blur(src: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as i64;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as i64 + i as i64 - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * src[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as i64 + i as i64 - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub l1: f64,
    pub ssim: f64,
    /// ∂loss/∂(rendered color); zero outside the mask.
    pub grad: RgbImage,
}

/// `(1 − λ) · L1 + λ · (1 − SSIM)` over masked pixels.
///
/// SSIM is evaluated on mask-multiplied images and averaged over masked
/// window centers, so pixels outside the mask never influence the loss.
/// Returns `None` for an empty mask.
pub fn masked_loss(render: &RgbImage, target: &RgbImage, mask: &KeyRegionMask, ssim_weight: f64) -> Option<LossOutput> {
    assert!(render.same_shape(target) && render.width == mask.width && render.height == mask.height);
    let n = mask.count();
    if n == 0 {
        return None;
    }
    let (w, h) = (render.width, render.height);
    let norm = 1.0 / (3.0 * n as f64);
    let mut grad = RgbImage::new(w, h);

    let mut l1 = 0.0;
    for (i, &m) in mask.bits.iter().enumerate() {
        if !m {
            continue;
        }
        for k in 0..3 {
            let d = render.data[i][k] - target.data[i][k];
            l1 += d.abs();
            grad.data[i][k] = (1.0 - ssim_weight) * norm * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 };
        }
    }
    l1 *= norm;

    let mut ssim_sum = 0.0;
    if ssim_weight > 0.0 {
        let kern = ssim_kernel();
        let mf: Vec<f64> = mask.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let per_channel: Vec<(f64, Vec<f64>)> = (0..3)
            .into_par_iter()
            .map(|k| {
                let x: Vec<f64> = (0..w * h).map(|i| render.data[i][k] * mf[i]).collect();
                let y: Vec<f64> = (0..w * h).map(|i| target.data[i][k] * mf[i]).collect();
                let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
                let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
                let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();
                let mu_x = blur(&x, w, h, &kern);
                let mu_y = blur(&y, w, h, &kern);
                let e_xx = blur(&xx, w, h, &kern);
                let e_yy = blur(&yy, w, h, &kern);
                let e_xy = blur(&xy, w, h, &kern);
                let mut sum = 0.0;
                let mut d_mu = vec![0.0; w * h];
                let mut d_exx = vec![0.0; w * h];
                let mut d_exy = vec![0.0; w * h];
                let wgt = -ssim_weight * norm;
                for i in 0..w * h {
                    if mf[i] == 0.0 {
                        continue;
                    }
                    let (mx, my) = (mu_x[i], mu_y[i]);
                    let a1 = 2.0 * mx * my + SSIM_C1;
                    let a2 = 2.0 * (e_xy[i] - mx * my) + SSIM_C2;
                    let b1 = mx * mx + my * my + SSIM_C1;
                    let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + SSIM_C2;
                    let s = a1 * a2 / (b1 * b2);
                    sum += s;
                    let ds_dmu = (2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * 2.0 * mx * (1.0 / b1 - 1.0 / b2);
                    d_mu[i] = wgt * ds_dmu;
                    d_exx[i] = wgt * (-s / b2);
                    d_exy[i] = wgt * (2.0 * a1 / (b1 * b2));
                }
                let g_mu = blur(&d_mu, w, h, &kern);
                let g_exx = blur(&d_exx, w, h, &kern);
                let g_exy = blur(&d_exy, w, h, &kern);
                let g: Vec<f64> = (0..w * h)
                    .map(|i| mf[i] * (g_mu[i] + 2.0 * x[i] * g_exx[i] + y[i] * g_exy[i]))
                    .collect();
                (sum, g)
            })
            .collect();
        for (k, (s, g)) in per_channel.into_iter().enumerate() {
            ssim_sum += s;
            for i in 0..w * h {
                grad.data[i][k] += g[i];
            }
        }
    }
    let ssim = if ssim_weight > 0.0 { ssim_sum * norm } else { 1.0 };
    Some(LossOutput {
        loss: (1.0 - ssim_weight) * l1 + ssim_weight * (1.0 - ssim),
        l1,
        ssim,
        grad,
    })
}

// ---------------------------------------------------------------------------
// schedules

/// Learning-rate multiplier for a Gaussian created at `created_at`:
/// `2^(−age / halflife)`, floored.
pub fn lr_scale(created_at: u32, current_frame: u32, cfg: &TrainConfig) -> f64 {
    let age = current_frame.saturating_sub(created_at) as f64;
    (-age / cfg.lr_decay_halflife).exp2().max(cfg.lr_floor)
}

/// Views trained in one iteration, as positions into the registered list:
/// the `window` most recent views, newest last, plus one view drawn
/// uniformly from everything older than the window.
pub fn select_local_views(registered: usize, window: usize, rng: &mut impl Rng) -> Vec<usize> {
    if registered == 0 {
        return Vec::new();
    }
    let start = registered.saturating_sub(window.max(1));
    let mut out = Vec::with_capacity(window + 1);
    if start > 0 {
        out.push(rng.gen_range(0..start));
    }
    out.extend(start..registered);
    out
}

// ---------------------------------------------------------------------------
// optimizer

/// One Adam step over the whole field. `lr_mult(i)` scales every learning
/// rate of Gaussian `i`.
pub fn adam_step(
    field: &mut GaussianField,
    grads: &[GaussianGrad],
    cfg: &TrainConfig,
    scene_extent: f64,
    lr_mult: impl Fn(usize) -> f64 + Sync,
) {
    assert_eq!(grads.len(), field.len());
    field.optimizer.step += 1;
    let t = field.optimizer.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let mut lrs = [0.0; PARAMS_PER_GAUSSIAN];
    for (k, lr) in lrs.iter_mut().enumerate() {
        *lr = match k {
            0..=2 => cfg.lr_mean * scene_extent,
            3..=5 => cfg.lr_log_scale,
            6..=9 => cfg.lr_rotation,
            10 => cfg.lr_opacity,
            _ => cfg.lr_color,
        };
    }
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.eps);
    let opt = &mut field.optimizer;
    field
        .gaussians
        .par_iter_mut()
        .zip(opt.m.par_chunks_mut(PARAMS_PER_GAUSSIAN))
        .zip(opt.v.par_chunks_mut(PARAMS_PER_GAUSSIAN))
        .enumerate()
        .for_each(|(i, ((g, m), v))| {
            let mult = lr_mult(i);
            let mut p = g.to_params();
            for k in 0..PARAMS_PER_GAUSSIAN {
                let gr = grads[i][k];
                m[k] = b1 * m[k] + (1.0 - b1) * gr;
                v[k] = b2 * v[k] + (1.0 - b2) * gr * gr;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= lrs[k] * mult * mh / (vh.sqrt() + eps);
            }
            g.set_params(&p);
        });
    field.project_constraints();
}

// ---------------------------------------------------------------------------
// trainer

/// A registered training view.
#[derive(Clone, Debug)]
pub struct TrainingView {
    pub frame_index: usize,
    pub view: View,
    pub image: RgbImage,
    pub mask: KeyRegionMask,
}

/// Per-frame outcome, one JSON-lines record in the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub frame: usize,
    pub seeds_added: usize,
    pub field_size: usize,
    pub iters: usize,
    pub adopt_seconds: f64,
    /// Masked PSNR of the new view after its update.
    pub psnr_new_view: Option<f64>,
    /// Masked PSNR of the new view rendered before seeding.
    #[serde(skip)]
    pub psnr_before: Option<f64>,
    #[serde(skip)]
    pub pruned: usize,
}

/// Per-frame intermediate products, kept for debugging dumps.
#[derive(Clone, Debug)]
pub struct FrameDiagnostics {
    pub mesh: TriangleMesh2D,
    pub mask: KeyRegionMask,
    pub region: Mask,
    pub pre_render: RgbImage,
}

pub struct Trainer {
    pub cfg: TrainConfig,
    pub field: GaussianField,
    pub views: Vec<TrainingView>,
    pub scene_extent: f64,
    rng: ChaCha8Rng,
    frames_streamed: usize,
}

impl Trainer {
    pub fn new(field: GaussianField, cfg: TrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(0x5649_4557);
        Trainer {
            scene_extent: field.scene_diameter,
            field,
            cfg,
            views: Vec::new(),
            rng,
            frames_streamed: 0,
        }
    }

    /// Triangulates the frame's visible reprojections into a key region.
    pub fn key_region(&self, event: &FrameEvent) -> (TriangleMesh2D, KeyRegionMask) {
        let proj = visible_reprojections(event);
        let (w, h) = (event.intrinsics.width, event.intrinsics.height);
        let mesh = build_mesh(&proj, &event.cloud_snapshot, w, h, &self.cfg.mesh);
        let mask = rasterize_mask(&mesh, w, h);
        (mesh, mask)
    }

    pub fn register(&mut self, event: &FrameEvent, mask: KeyRegionMask) {
        self.views.push(TrainingView {
            frame_index: event.frame_index,
            view: View::Perspective {
                pose: event.pose.clone(),
                intrinsics: event.intrinsics,
            },
            image: event.image.clone(),
            mask,
        });
    }

    pub fn render_view(&self, view: &View) -> RenderOutput {
        render(&self.field, view, self.cfg.background, &self.cfg.raster).0
    }

    fn step_background(&mut self) -> Rgb {
        if self.cfg.random_background {
            [self.rng.gen(), self.rng.gen(), self.rng.gen()]
        } else {
            self.cfg.background
        }
    }

    /// Loss and mean gradient over the listed views.
    pub fn gradients(&self, views: &[usize], background: Rgb) -> Option<(f64, Vec<GaussianGrad>)> {
        let mut total = vec![[0.0; PARAMS_PER_GAUSSIAN]; self.field.len()];
        let mut loss = 0.0;
        let mut used = 0usize;
        for &vi in views {
            let v = &self.views[vi];
            let (out, ctx) = render(&self.field, &v.view, background, &self.cfg.raster);
            let Some(l) = masked_loss(&out.color, &v.image, &v.mask, self.cfg.ssim_weight) else {
                continue;
            };
            let g = backward(&ctx, &self.field, &l.grad);
            for (t, gi) in total.iter_mut().zip(&g) {
                for k in 0..PARAMS_PER_GAUSSIAN {
                    t[k] += gi[k];
                }
            }
            loss += l.loss;
            used += 1;
        }
        if used == 0 {
            return None;
        }
        let inv = 1.0 / used as f64;
        total.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v *= inv));
        Some((loss * inv, total))
    }

    /// Round-robin optimization over every registered view at base rates.
    /// Returns the loss of each step that had a usable view.
    pub fn initial_fit(&mut self, iters: usize) -> Vec<f64> {
        let mut losses = Vec::with_capacity(iters);
        if self.views.is_empty() {
            return losses;
        }
        for step in 0..iters {
            let vi = step % self.views.len();
            let bg = self.step_background();
            if let Some((loss, grads)) = self.gradients(&[vi], bg) {
                adam_step(&mut self.field, &grads, &self.cfg, self.scene_extent, |_| 1.0);
                losses.push(loss);
            }
        }
        losses
    }

    /// Seeds, integrates and optimizes for one newly arrived frame.
    pub fn per_frame_update(&mut self, event: &FrameEvent) -> Result<(UpdateReport, FrameDiagnostics)> {
        let started = Instant::now();
        let frame = event.frame_index as u32;
        let (mesh, mask) = self.key_region(event);
        let view = View::Perspective {
            pose: event.pose.clone(),
            intrinsics: event.intrinsics,
        };
        let pre_render = self.render_view(&view).color;
        let psnr_before = masked_psnr(&pre_render, &event.image, &mask);

        let mut seeds_added = 0;
        let mut region = Mask::empty(mask.width, mask.height);
        if !mask.is_empty() {
            let d = discrepancy_map(&pre_render, &event.image, &mask, self.cfg.gm, &self.cfg.log)?;
            let seeding = SeedingConfig {
                h_t: self.cfg.h_t,
                seed: self.cfg.seed,
                frame,
                cap: self.cfg.seed_cap,
                focal: 0.5 * (event.intrinsics.fx + event.intrinsics.fy),
            };
            let seeds = seeds_in_region(&mesh, &d, &seeding);
            seeds_added = self.field.integrate_seeds(&seeds, frame);
            region = d.region;
        }
        self.register(event, mask.clone());

        for _ in 0..self.cfg.per_frame_iters {
            let batch = select_local_views(self.views.len(), self.cfg.local_window, &mut self.rng);
            let bg = self.step_background();
            if let Some((_, grads)) = self.gradients(&batch, bg) {
                let ages: Vec<u32> = self.field.gaussians.iter().map(|g| g.created_at).collect();
                let cfg = &self.cfg;
                adam_step(&mut self.field, &grads, cfg, self.scene_extent, |i| lr_scale(ages[i], frame, cfg));
            }
        }

        self.frames_streamed += 1;
        let mut pruned = 0;
        if self.cfg.prune && self.cfg.prune_every > 0 && self.frames_streamed.is_multiple_of(self.cfg.prune_every) {
            pruned = self.field.prune(self.cfg.prune_threshold);
        }

        let psnr_new_view = masked_psnr(&self.render_view(&view).color, &event.image, &mask);
        let report = UpdateReport {
            frame: event.frame_index,
            seeds_added,
            field_size: self.field.len(),
            iters: self.cfg.per_frame_iters,
            adopt_seconds: started.elapsed().as_secs_f64(),
            psnr_new_view,
            psnr_before,
            pruned,
        };
        Ok((
            report,
            FrameDiagnostics {
                mesh,
                mask,
                region,
                pre_render,
            },
        ))
    }
}
