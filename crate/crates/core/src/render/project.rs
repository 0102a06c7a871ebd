use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix4, Vector3};
use rayon::prelude::*;

use super::{RasterConfig, Splat2D};
use crate::error::{Error, Result};
use crate::field::{quat_to_rotation, Gaussian, GaussianField};
use crate::scene::{CameraIntrinsics, FramePose};

/// World axis treated as vertical by the orthographic view.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum UpAxis {
    X,
    Y,
    #[default]
    Z,
}

impl UpAxis {
    /// Rows map world coordinates to (east, north, up), right-handed.
    pub fn basis(self) -> Matrix3<f64> {
        match self {
            UpAxis::Z => Matrix3::identity(),
            UpAxis::Y => Matrix3::new(0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0),
            UpAxis::X => Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0),
        }
    }

    pub fn to_local(self, p: &[f64; 3]) -> [f64; 3] {
        match self {
            UpAxis::Z => *p,
            UpAxis::Y => [p[2], p[0], p[1]],
            UpAxis::X => [p[1], p[2], p[0]],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UpAxis::X => "x",
            UpAxis::Y => "y",
            UpAxis::Z => "z",
        }
    }
}

impl std::str::FromStr for UpAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(UpAxis::X),
            "y" => Ok(UpAxis::Y),
            "z" => Ok(UpAxis::Z),
            _ => Err(Error::Config(format!("unknown up axis `{s}`"))),
        }
    }
}

/// Orthographic viewing box in (east, north, up) coordinates of `up`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrthoViewBox {
    pub l: f64,
    pub r: f64,
    pub b: f64,
    pub t: f64,
    pub z_n: f64,
    pub z_f: f64,
    pub up: UpAxis,
}

impl OrthoViewBox {
    pub fn validate(&self) -> Result<()> {
        let ok = |lo: f64, hi: f64| lo.is_finite() && hi.is_finite() && hi > lo;
        if ok(self.l, self.r) && ok(self.b, self.t) && ok(self.z_n, self.z_f) {
            Ok(())
        } else {
            Err(Error::InvalidViewBox(format!("{self:?}")))
        }
    }
}

/// Maps the view box onto the clip cube `[-1, 1]³`.
pub fn ortho_matrix(vb: &OrthoViewBox) -> Result<Matrix4<f64>> {
    vb.validate()?;
    let (l, r, b, t, n, f) = (vb.l, vb.r, vb.b, vb.t, vb.z_n, vb.z_f);
    Ok(Matrix4::new(
        2.0 / (r - l),
        0.0,
        0.0,
        -(r + l) / (r - l),
        0.0,
        2.0 / (t - b),
        0.0,
        -(t + b) / (t - b),
        0.0,
        0.0,
        2.0 / (f - n),
        -(f + n) / (f - n),
        0.0,
        0.0,
        0.0,
        1.0,
    ))
}

/// Linear map from (east, north, up) offsets to pixel offsets: the
/// orthographic Jacobian (third row zero, so height never moves a splat)
/// followed by the clip-to-pixel viewport with rows growing southwards.
fn ortho_pixel_jacobian(vb: &OrthoViewBox, width: usize, height: usize) -> Matrix2x3<f64> {
    let jx = 2.0 / (vb.r - vb.l);
    let jy = 2.0 / (vb.t - vb.b);
    Matrix2x3::new(
        0.5 * width as f64 * jx,
        0.0,
        0.0,
        0.0,
        -0.5 * height as f64 * jy,
        0.0,
    )
}

/// 2D pixel covariance of a covariance given in (east, north, up) coordinates.
pub fn ortho_cov(cov: &Matrix3<f64>, vb: &OrthoViewBox, width: usize, height: usize, dilation: f64) -> Matrix2<f64> {
    let a = ortho_pixel_jacobian(vb, width, height);
    let m = a * cov * a.transpose();
    let xy = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Matrix2::new(m[(0, 0)] + dilation, xy, xy, m[(1, 1)] + dilation)
}

/// Extra data kept for a splat so the backward pass can reach the Gaussian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplatGeometry {
    /// Pixel Jacobian of the projection at the mean, with respect to world coordinates.
    pub a: Matrix2x3<f64>,
    pub cov3d: Matrix3<f64>,
    pub pinhole: Option<PinholeState>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PinholeState {
    pub cam_point: Vector3<f64>,
    pub world_to_cam: Matrix3<f64>,
    pub fx: f64,
    pub fy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedSplat {
    /// Index of the source Gaussian in the field.
    pub index: usize,
    pub splat: Splat2D,
    /// Inverse covariance `[xx, xy, yy]`.
    pub conic: [f64; 3],
    /// Half-width of the footprint's bounding box, px. Outside it the splat's
    /// alpha is below the blend cutoff.
    pub extent: [f64; 2],
    pub geometry: SplatGeometry,
}

pub(crate) fn covariance_of(g: &Gaussian) -> Matrix3<f64> {
    let m = quat_to_rotation(g.rotation) * Matrix3::from_diagonal(&Vector3::from(g.log_scale.map(f64::exp)));
    m * m.transpose()
}

fn finish(
    index: usize,
    g: &Gaussian,
    center: [f64; 2],
    depth_key: f64,
    geometry: SplatGeometry,
    cfg: &RasterConfig,
) -> Option<ProjectedSplat> {
    let cov = geometry.a * geometry.cov3d * geometry.a.transpose();
    let (xx, xy, yy) = (cov[(0, 0)] + cfg.dilation, cov[(0, 1)], cov[(1, 1)] + cfg.dilation);
    let det = xx * yy - xy * xy;
    if !(det > 0.0) || !det.is_finite() || !center[0].is_finite() || !center[1].is_finite() {
        return None;
    }
    let opacity = g.opacity();
    if opacity < cfg.alpha_min {
        return None;
    }
    // Mahalanobis radius at which opacity * G falls to alpha_min
    let k = (2.0 * (opacity / cfg.alpha_min).ln() + 1e-6).sqrt();
    Some(ProjectedSplat {
        index,
        splat: Splat2D {
            center,
            cov2d: [[xx, xy], [xy, yy]],
            depth_key,
            opacity,
            color: g.color,
        },
        conic: [yy / det, -xy / det, xx / det],
        extent: [k * xx.sqrt(), k * yy.sqrt()],
        geometry,
    })
}

/// Pinhole EWA projection of every Gaussian in front of the near plane.
pub fn project_splats_perspective(
    field: &GaussianField,
    pose: &FramePose,
    intr: &CameraIntrinsics,
    cfg: &RasterConfig,
) -> Vec<ProjectedSplat> {
    let w = pose.rotation_matrix();
    let t = pose.translation_vector();
    field
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let pc = w * Vector3::from(g.mean) + t;
            if !(pc.z > cfg.near) {
                return None;
            }
            let (x, y, z) = (pc.x, pc.y, pc.z);
            let j = Matrix2x3::new(
                intr.fx / z,
                0.0,
                -intr.fx * x / (z * z),
                0.0,
                intr.fy / z,
                -intr.fy * y / (z * z),
            );
            let geometry = SplatGeometry {
                a: j * w,
                cov3d: covariance_of(g),
                pinhole: Some(PinholeState {
                    cam_point: pc,
                    world_to_cam: w,
                    fx: intr.fx,
                    fy: intr.fy,
                }),
            };
            let center = [intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy];
            finish(i, g, center, z, geometry, cfg)
        })
        .collect()
}

/// Orthographic projection onto a `width × height` raster spanning the view
/// box. Higher points get smaller depth keys so they composite first.
pub fn project_splats_ortho(
    field: &GaussianField,
    vb: &OrthoViewBox,
    width: usize,
    height: usize,
    cfg: &RasterConfig,
) -> Vec<ProjectedSplat> {
    let Ok(p) = ortho_matrix(vb) else {
        return Vec::new();
    };
    let basis = vb.up.basis();
    let a = ortho_pixel_jacobian(vb, width, height) * basis;
    field
        .gaussians
        .par_iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let [e, n, u] = vb.up.to_local(&g.mean);
            if u < vb.z_n || u > vb.z_f {
                return None;
            }
            let clip_x = p[(0, 0)] * e + p[(0, 3)];
            let clip_y = p[(1, 1)] * n + p[(1, 3)];
            let center = [
                (clip_x + 1.0) * 0.5 * width as f64,
                (1.0 - clip_y) * 0.5 * height as f64,
            ];
            let geometry = SplatGeometry {
                a,
                cov3d: covariance_of(g),
                pinhole: None,
            };
            finish(i, g, center, -u, geometry, cfg)
        })
        .collect()
}
