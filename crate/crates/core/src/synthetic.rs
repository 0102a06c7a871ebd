//! Procedural test scene: a textured ground plane with one box building,
//! photographed by a 3×3 grid of nadir cameras. Images are ray traced, the
//! sparse cloud is sampled from the true surfaces with exact visibility, and
//! the true orthophoto is known in closed form.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};
use crate::scene::{CameraIntrinsics, FramePose, Observation, SparsePoint, SparseScene, TrackEntry};

pub const ROOF_COLOR: Rgb = [0.80, 0.22, 0.18];
pub const FACADE_COLOR: Rgb = [0.15, 0.25, 0.85];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeskConfig {
    pub image_size: usize,
    pub focal: f64,
    pub camera_height: f64,
    /// Distance between neighbouring camera centers.
    pub camera_spacing: f64,
    /// Half-width of the building footprint.
    pub building_half: f64,
    pub building_height: f64,
    pub point_spacing: f64,
    /// Half-width of the square over which ground points are sampled.
    pub ground_half: f64,
    pub supersample: usize,
    pub seed: u64,
}

impl Default for DeskConfig {
    fn default() -> Self {
        DeskConfig {
            image_size: 64,
            focal: 91.0,
            camera_height: 2.0,
            camera_spacing: 0.6,
            building_half: 0.3,
            building_height: 0.5,
            point_spacing: 0.1,
            ground_half: 1.5,
            supersample: 4,
            seed: 7,
        }
    }
}

/// Smooth ground texture.
pub fn ground_color(x: f64, y: f64) -> Rgb {
    [
        0.45 + 0.25 * (2.1 * x + 0.3).sin() * (1.7 * y).cos(),
        0.55 + 0.20 * (1.3 * x - 2.4 * y).cos(),
        0.35 + 0.15 * (3.0 * (x + y)).sin(),
    ]
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Surface {
    Ground,
    Roof,
    Facade,
}

impl DeskConfig {
    pub fn in_footprint(&self, x: f64, y: f64) -> bool {
        x.abs() <= self.building_half && y.abs() <= self.building_half
    }

    /// True nadir color at ground position `(x, y)`.
    pub fn ortho_color(&self, x: f64, y: f64) -> Rgb {
        if self.in_footprint(x, y) {
            ROOF_COLOR
        } else {
            ground_color(x, y)
        }
    }

    fn box_lo(&self) -> [f64; 3] {
        [-self.building_half, -self.building_half, 0.0]
    }

    fn box_hi(&self) -> [f64; 3] {
        [self.building_half, self.building_half, self.building_height]
    }

    /// Entry parameter and axis of a ray hitting the building.
    fn hit_box(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize)> {
        let (lo, hi) = (self.box_lo(), self.box_hi());
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        let mut axis = 0;
        for k in 0..3 {
            if d[k].abs() < 1e-15 {
                if o[k] < lo[k] || o[k] > hi[k] {
                    return None;
                }
                continue;
            }
            let (mut a, mut b) = ((lo[k] - o[k]) / d[k], (hi[k] - o[k]) / d[k]);
            if a > b {
                std::mem::swap(&mut a, &mut b);
            }
            if a > t0 {
                t0 = a;
                axis = k;
            }
            t1 = t1.min(b);
        }
        (t0 <= t1 && t0 > 0.0).then_some((t0, axis))
    }

    fn trace(&self, o: [f64; 3], d: [f64; 3]) -> Option<(f64, Surface, [f64; 3])> {
        let at = |t: f64| [o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2]];
        if let Some((t, axis)) = self.hit_box(o, d) {
            let s = if axis == 2 { Surface::Roof } else { Surface::Facade };
            return Some((t, s, at(t)));
        }
        (d[2] < 0.0).then(|| {
            let t = -o[2] / d[2];
            (t, Surface::Ground, at(t))
        })
    }

    fn shade(&self, s: Surface, p: [f64; 3]) -> Rgb {
        match s {
            Surface::Ground => ground_color(p[0], p[1]),
            Surface::Roof => ROOF_COLOR,
            Surface::Facade => FACADE_COLOR,
        }
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        let n = self.image_size;
        CameraIntrinsics {
            camera_id: 1,
            width: n,
            height: n,
            fx: self.focal,
            fy: self.focal,
            cx: n as f64 / 2.0,
            cy: n as f64 / 2.0,
        }
    }

    /// Camera centers, south row first, west to east within a row.
    pub fn camera_centers(&self) -> Vec<[f64; 3]> {
        let s = self.camera_spacing;
        let mut out = Vec::new();
        for j in -1..=1 {
            for i in -1..=1 {
                out.push([i as f64 * s, j as f64 * s, self.camera_height]);
            }
        }
        out
    }

    /// Looking straight down with image rows pointing south.
    fn pose(&self, id: u32, c: [f64; 3]) -> FramePose {
        // R = diag(1, -1, -1), t = -R c
        FramePose {
            image_id: id,
            rotation: [0.0, 1.0, 0.0, 0.0],
            translation: [-c[0], c[1], c[2]],
            camera_id: 1,
            name: format!("view_{id:02}.png"),
            observations: Vec::new(),
        }
    }

    fn render_view(&self, c: [f64; 3]) -> RgbImage {
        let intr = self.intrinsics();
        let n = self.image_size;
        let ss = self.supersample.max(1);
        let mut img = RgbImage::new(n, n);
        for v in 0..n {
            for u in 0..n {
                let mut acc = [0.0; 3];
                for sv in 0..ss {
                    for su in 0..ss {
                        let pu = u as f64 + (su as f64 + 0.5) / ss as f64;
                        let pv = v as f64 + (sv as f64 + 0.5) / ss as f64;
                        let dc = [(pu - intr.cx) / intr.fx, (pv - intr.cy) / intr.fy, 1.0];
                        // Rᵀ = diag(1, -1, -1)
                        let d = [dc[0], -dc[1], -dc[2]];
                        let col = self
                            .trace(c, d)
                            .map_or([1.0; 3], |(_, s, p)| self.shade(s, p));
                        for k in 0..3 {
                            acc[k] += col[k];
                        }
                    }
                }
                let inv = 1.0 / (ss * ss) as f64;
                img.set(u, v, acc.map(|a| a * inv));
            }
        }
        img
    }

    fn surface_points(&self) -> Vec<([f64; 3], Rgb)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let s = self.point_spacing;
        let jitter = 0.3 * s;
        let mut pts = Vec::new();
        let n = (self.ground_half / s).round() as i64;
        for j in -n..=n {
            for i in -n..=n {
                let x = i as f64 * s + rng.gen_range(-jitter..jitter);
                let y = j as f64 * s + rng.gen_range(-jitter..jitter);
                if x.abs() <= self.building_half + 1e-3 && y.abs() <= self.building_half + 1e-3 {
                    continue;
                }
                pts.push(([x, y, 0.0], ground_color(x, y)));
            }
        }
        let h = self.building_half;
        let m = (2.0 * h / s).round() as i64;
        for j in 0..=m {
            for i in 0..=m {
                let x = -h + i as f64 * 2.0 * h / m as f64;
                let y = -h + j as f64 * 2.0 * h / m as f64;
                pts.push(([x, y, self.building_height], ROOF_COLOR));
            }
        }
        let levels = (self.building_height / s).round() as i64;
        for k in 0..levels {
            let z = (k as f64 + 0.5) * self.building_height / levels as f64;
            for i in 0..=m {
                let a = -h + i as f64 * 2.0 * h / m as f64;
                for p in [[a, -h, z], [a, h, z], [-h, a, z], [h, a, z]] {
                    pts.push((p, FACADE_COLOR));
                }
            }
        }
        pts
    }

    fn visible(&self, c: [f64; 3], p: [f64; 3]) -> Option<[f64; 2]> {
        let intr = self.intrinsics();
        let pc = [p[0] - c[0], -(p[1] - c[1]), -(p[2] - c[2])];
        if pc[2] <= 1e-9 {
            return None;
        }
        let u = intr.fx * pc[0] / pc[2] + intr.cx;
        let v = intr.fy * pc[1] / pc[2] + intr.cy;
        if !(0.0..intr.width as f64).contains(&u) || !(0.0..intr.height as f64).contains(&v) {
            return None;
        }
        let d = [p[0] - c[0], p[1] - c[1], p[2] - c[2]];
        if let Some((t, _)) = self.hit_box(c, d) {
            if t < 1.0 - 1e-6 {
                return None;
            }
        }
        Some([u, v])
    }

    /// Builds the reconstruction and its images. Points seen by fewer than
    /// two cameras are dropped.
    pub fn generate(&self) -> DeskScene {
        let intr = self.intrinsics();
        let centers = self.camera_centers();
        let mut images: Vec<FramePose> = centers
            .iter()
            .enumerate()
            .map(|(i, &c)| self.pose(i as u32 + 1, c))
            .collect();
        let mut points = BTreeMap::new();
        let mut next_id = 1u64;
        for (p, color) in self.surface_points() {
            let seen: Vec<(usize, [f64; 2])> = centers
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| self.visible(c, p).map(|uv| (i, uv)))
                .collect();
            if seen.len() < 2 {
                continue;
            }
            let id = next_id;
            next_id += 1;
            let mut track = Vec::new();
            for (i, uv) in seen {
                let im = &mut images[i];
                track.push(TrackEntry {
                    image_id: im.image_id,
                    point2d_idx: im.observations.len() as u32,
                });
                im.observations.push(Observation {
                    u: uv[0],
                    v: uv[1],
                    point3d_id: Some(id),
                });
            }
            points.insert(
                id,
                SparsePoint {
                    point3d_id: id,
                    position: p,
                    // the text format stores 8-bit colors
                    color: color.map(|c| (c * 255.0).round() / 255.0),
                    error: 0.5,
                    track,
                },
            );
        }
        let renders = images
            .iter()
            .zip(&centers)
            .map(|(im, &c)| (im.name.clone(), self.render_view(c)))
            .collect();
        DeskScene {
            scene: SparseScene {
                cameras: BTreeMap::from([(intr.camera_id, intr)]),
                images,
                points,
            },
            images: renders,
        }
    }

    /// Area-averaged true orthophoto over a raster whose upper-left pixel
    /// center is `origin`.
    pub fn ground_truth_ortho(&self, origin: [f64; 2], gsd: f64, width: usize, height: usize) -> RgbImage {
        let ss = self.supersample.max(1);
        let mut img = RgbImage::new(width, height);
        for row in 0..height {
            for col in 0..width {
                let mut acc = [0.0; 3];
                for sy in 0..ss {
                    for sx in 0..ss {
                        let fx = (sx as f64 + 0.5) / ss as f64 - 0.5;
                        let fy = (sy as f64 + 0.5) / ss as f64 - 0.5;
                        let x = origin[0] + (col as f64 + fx) * gsd;
                        let y = origin[1] - (row as f64 + fy) * gsd;
                        let c = self.ortho_color(x, y);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                let inv = 1.0 / (ss * ss) as f64;
                img.set(col, row, acc.map(|a| a * inv));
            }
        }
        img
    }
}

/// Generated reconstruction plus its rendered images.
#[derive(Clone, Debug)]
pub struct DeskScene {
    pub scene: SparseScene,
    pub images: Vec<(String, RgbImage)>,
}

impl DeskScene {
    /// Writes `<dir>/sparse/*.txt` and `<dir>/images/*.png`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.scene.save(&dir.join("sparse"))?;
        let images = dir.join("images");
        fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for (name, img) in &self.images {
            img.save_png(&images.join(name))?;
        }
        Ok(())
    }
}
