//! The Gaussian scene representation and its checkpoint format.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::key_region::SampledSeed;
use crate::raster::Rgb;
use crate::scene::SparsePoint;

pub const PARAMS_PER_GAUSSIAN: usize = 14;
pub const MIN_SCALE: f64 = 1e-7;
pub const INIT_OPACITY: f64 = 0.1;
const CHECKPOINT_TAG: &str = "orthosplat-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const PLY_PROPERTIES: [&str; 15] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red", "green",
    "blue", "created_at",
];

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Rotation matrix of the normalized quaternion `(w, x, y, z)`.
pub fn quat_to_rotation(q: [f64; 4]) -> Matrix3<f64> {
    let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub mean: [f64; 3],
    pub log_scale: [f64; 3],
    /// `(w, x, y, z)`, kept at unit norm by the optimizer.
    pub rotation: [f64; 4],
    pub opacity_logit: f64,
    pub color: Rgb,
    pub created_at: u32,
}

impl Gaussian {
    pub fn isotropic(mean: [f64; 3], scale: f64, color: Rgb, created_at: u32) -> Self {
        let ls = scale.ln();
        Gaussian {
            mean,
            log_scale: [ls; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: logit(INIT_OPACITY),
            color,
            created_at,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_rotation(self.rotation)
    }

    /// `R · diag(s²) · Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let m = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale().into());
        m * m.transpose()
    }

    pub fn to_params(&self) -> [f64; PARAMS_PER_GAUSSIAN] {
        let mut p = [0.0; PARAMS_PER_GAUSSIAN];
        p[0..3].copy_from_slice(&self.mean);
        p[3..6].copy_from_slice(&self.log_scale);
        p[6..10].copy_from_slice(&self.rotation);
        p[10] = self.opacity_logit;
        p[11..14].copy_from_slice(&self.color);
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        self.mean.copy_from_slice(&p[0..3]);
        self.log_scale.copy_from_slice(&p[3..6]);
        self.rotation.copy_from_slice(&p[6..10]);
        self.opacity_logit = p[10];
        self.color.copy_from_slice(&p[11..14]);
    }
}

/// First and second moment estimates, `PARAMS_PER_GAUSSIAN` slots per Gaussian.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianField {
    pub gaussians: Vec<Gaussian>,
    pub optimizer: OptimizerState,
    /// Upper bound on per-axis scale.
    pub scene_diameter: f64,
}

fn bbox_diameter<'a>(pts: impl Iterator<Item = &'a [f64; 3]>) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in pts {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let d = (0..3).map(|k| (hi[k] - lo[k]).powi(2)).sum::<f64>().sqrt();
    if d.is_finite() && d > 1e-9 {
        d
    } else {
        1.0
    }
}

impl GaussianField {
    pub fn empty(scene_diameter: f64) -> Self {
        GaussianField {
            gaussians: Vec::new(),
            optimizer: OptimizerState::default(),
            scene_diameter,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    fn clamp_log_scale(&self, ls: f64) -> f64 {
        ls.clamp(MIN_SCALE.ln(), self.scene_diameter.ln())
    }

    /// One isotropic Gaussian per sparse point, sized by the mean distance
    /// to its three nearest neighbours.
    pub fn init_from_cloud(points: &[SparsePoint], created_at: u32) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let diameter = bbox_diameter(points.iter().map(|p| &p.position));
        let mut field = GaussianField::empty(diameter);
        let k = 3.min(points.len() - 1);
        let mut dists: Vec<f64> = Vec::with_capacity(points.len());
        for (i, p) in points.iter().enumerate() {
            let scale = if k == 0 {
                1e-2 * diameter
            } else {
                dists.clear();
                dists.extend(points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| {
                    (0..3).map(|a| (p.position[a] - q.position[a]).powi(2)).sum::<f64>().sqrt()
                }));
                dists.select_nth_unstable_by(k - 1, f64::total_cmp);
                dists[..k].iter().sum::<f64>() / k as f64
            };
            let mut g = Gaussian::isotropic(p.position, 1.0, p.color, created_at);
            g.log_scale = [field.clamp_log_scale(scale.max(MIN_SCALE).ln()); 3];
            field.gaussians.push(g);
        }
        field.reset_optimizer_tail(0);
        Ok(field)
    }

    fn reset_optimizer_tail(&mut self, from: usize) {
        let n = self.gaussians.len() * PARAMS_PER_GAUSSIAN;
        let keep = from * PARAMS_PER_GAUSSIAN;
        self.optimizer.m.truncate(keep);
        self.optimizer.v.truncate(keep);
        self.optimizer.m.resize(n, 0.0);
        self.optimizer.v.resize(n, 0.0);
    }

    /// Appends a Gaussian with fresh optimizer state.
    pub fn push(&mut self, g: Gaussian) {
        self.gaussians.push(g);
        self.reset_optimizer_tail(self.gaussians.len() - 1);
    }

    /// Appends one Gaussian per seed; existing entries are left untouched.
    pub fn integrate_seeds(&mut self, seeds: &[SampledSeed], frame: u32) -> usize {
        let before = self.gaussians.len();
        for s in seeds {
            let footprint = (s.spacing_px * s.units_per_px).max(MIN_SCALE);
            let mut g = Gaussian::isotropic(s.position, 1.0, s.color, frame);
            g.log_scale = [self.clamp_log_scale(footprint.ln()); 3];
            self.gaussians.push(g);
        }
        self.reset_optimizer_tail(before);
        seeds.len()
    }

    /// Removes Gaussians whose opacity fell below `threshold`, together with
    /// their optimizer slots. Returns the number removed.
    pub fn prune(&mut self, threshold: f64) -> usize {
        let before = self.gaussians.len();
        let keep: Vec<bool> = self.gaussians.iter().map(|g| g.opacity() >= threshold).collect();
        let mut m = Vec::with_capacity(self.optimizer.m.len());
        let mut v = Vec::with_capacity(self.optimizer.v.len());
        for (i, &k) in keep.iter().enumerate() {
            if k {
                let r = i * PARAMS_PER_GAUSSIAN..(i + 1) * PARAMS_PER_GAUSSIAN;
                m.extend_from_slice(&self.optimizer.m[r.clone()]);
                v.extend_from_slice(&self.optimizer.v[r]);
            }
        }
        let mut it = keep.iter();
        self.gaussians.retain(|_| *it.next().unwrap());
        self.optimizer.m = m;
        self.optimizer.v = v;
        before - self.gaussians.len()
    }

    /// Renormalizes quaternions and clamps scales and colors into range.
    pub fn project_constraints(&mut self) {
        let (lo, hi) = (MIN_SCALE.ln(), self.scene_diameter.ln());
        for g in &mut self.gaussians {
            let n = g.rotation.iter().map(|c| c * c).sum::<f64>().sqrt();
            if n > 1e-12 && n.is_finite() {
                g.rotation = g.rotation.map(|c| c / n);
            } else {
                g.rotation = [1.0, 0.0, 0.0, 0.0];
            }
            g.log_scale = g.log_scale.map(|s| s.clamp(lo, hi));
            g.color = g.color.map(|c| c.clamp(0.0, 1.0));
        }
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::with_capacity(256 + self.len() * PLY_PROPERTIES.len() * 8);
        buf.extend_from_slice(b"ply\nformat binary_little_endian 1.0\n");
        buf.extend_from_slice(format!("comment {CHECKPOINT_TAG} {CHECKPOINT_VERSION}\n").as_bytes());
        buf.extend_from_slice(format!("comment scene_diameter {:?}\n", self.scene_diameter).as_bytes());
        buf.extend_from_slice(format!("element vertex {}\n", self.len()).as_bytes());
        for p in PLY_PROPERTIES {
            buf.extend_from_slice(format!("property double {p}\n").as_bytes());
        }
        buf.extend_from_slice(b"end_header\n");
        for g in &self.gaussians {
            for v in g.to_params().iter().chain(std::iter::once(&(g.created_at as f64))) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("ply.tmp");
        let write = || -> std::io::Result<()> {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
            fs::rename(&tmp, path)
        };
        write().map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        let mut next_line = |r: &mut BufReader<fs::File>| -> Result<String> {
            line.clear();
            let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                return Err(bad("truncated header".into()));
            }
            Ok(line.trim_end().to_string())
        };
        if next_line(&mut r)? != "ply" {
            return Err(bad("not a PLY file".into()));
        }
        if next_line(&mut r)? != "format binary_little_endian 1.0" {
            return Err(bad("expected binary_little_endian 1.0".into()));
        }
        let mut version = None;
        let mut diameter = None;
        let mut count = None;
        let mut props = Vec::new();
        loop {
            let l = next_line(&mut r)?;
            let toks: Vec<&str> = l.split_whitespace().collect();
            match toks.as_slice() {
                ["end_header"] => break,
                ["comment", tag, v] if *tag == CHECKPOINT_TAG => version = v.parse::<u32>().ok(),
                ["comment", "scene_diameter", v] => diameter = v.parse::<f64>().ok(),
                ["comment", ..] => {}
                ["element", "vertex", n] => {
                    count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad vertex count `{n}`")))?)
                }
                ["property", "double", name] => props.push(name.to_string()),
                _ => return Err(bad(format!("unexpected header line `{l}`"))),
            }
        }
        match version {
            Some(CHECKPOINT_VERSION) => {}
            Some(v) => return Err(bad(format!("unsupported checkpoint version {v}"))),
            None => return Err(bad("missing checkpoint version".into())),
        }
        if props != PLY_PROPERTIES {
            return Err(bad(format!("unexpected vertex properties {props:?}")));
        }
        let count = count.ok_or_else(|| bad("missing vertex element".into()))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let stride = PLY_PROPERTIES.len() * 8;
        if body.len() != count * stride {
            return Err(bad(format!(
                "expected {} bytes of vertex data, found {}",
                count * stride,
                body.len()
            )));
        }
        let mut field = GaussianField::empty(diameter.unwrap_or(1.0));
        for rec in body.chunks_exact(stride) {
            let vals: Vec<f64> = rec
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let mut g = Gaussian::isotropic([0.0; 3], 1.0, [0.0; 3], 0);
            g.set_params(&vals[..PARAMS_PER_GAUSSIAN]);
            g.created_at = vals[PARAMS_PER_GAUSSIAN] as u32;
            field.gaussians.push(g);
        }
        field.reset_optimizer_tail(0);
        Ok(field)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::key_region::BarycentricWeights;
    use crate::scene::TrackEntry;

    fn pt(id: u64, position: [f64; 3], color: Rgb) -> SparsePoint {
        SparsePoint {
            point3d_id: id,
            position,
            color,
            error: 0.0,
            track: vec![TrackEntry { image_id: 1, point2d_idx: 0 }],
        }
    }

    #[test]
    fn single_point_init() {
        let f = GaussianField::init_from_cloud(&[pt(1, [0.0; 3], [1.0, 0.0, 0.0])], 0).unwrap();
        assert_eq!(f.len(), 1);
        let g = f.gaussians[0];
        assert_eq!(g.mean, [0.0; 3]);
        assert_eq!(g.color, [1.0, 0.0, 0.0]);
        assert_eq!(g.rotation, [1.0, 0.0, 0.0, 0.0]);
        assert!((g.opacity() - 0.1).abs() < 1e-9);
        assert!(matches!(GaussianField::init_from_cloud(&[], 0), Err(Error::EmptyCloud)));
    }

    #[test]
    fn tetrahedron_knn_scale_is_one() {
        // regular tetrahedron with unit edges
        let s = 1.0 / 8f64.sqrt();
        let verts = [[s, s, s], [s, -s, -s], [-s, s, -s], [-s, -s, s]];
        let pts: Vec<_> = verts.iter().enumerate().map(|(i, &v)| pt(i as u64, v, [0.5; 3])).collect();
        let f = GaussianField::init_from_cloud(&pts, 0).unwrap();
        for g in &f.gaussians {
            for ls in g.log_scale {
                assert!(ls.abs() < 1e-12, "{ls}");
            }
            assert!((g.opacity() - 0.1).abs() < 1e-9);
        }
    }

    fn seed(position: [f64; 3], spacing_px: f64, units_per_px: f64) -> SampledSeed {
        SampledSeed {
            pixel: [0.0; 2],
            weights: BarycentricWeights { l1: 1.0, l2: 0.0, l3: 0.0 },
            position,
            color: [0.2, 0.3, 0.4],
            triangle: 0,
            spacing_px,
            units_per_px,
        }
    }

    #[test]
    fn integrate_appends_only() {
        let pts: Vec<_> = (0..5).map(|i| pt(i, [i as f64, 0.0, 0.0], [0.5; 3])).collect();
        let mut f = GaussianField::init_from_cloud(&pts, 0).unwrap();
        let before = f.gaussians.clone();
        assert_eq!(f.integrate_seeds(&[], 3), 0);
        assert_eq!(f.gaussians, before);
        let seeds: Vec<_> = (0..100).map(|i| seed([i as f64 * 0.01, 1.0, 0.0], 4.0, 0.05)).collect();
        assert_eq!(f.integrate_seeds(&seeds, 3), 100);
        assert_eq!(f.len(), 105);
        assert_eq!(&f.gaussians[..5], &before[..]);
        assert_eq!(f.optimizer.m.len(), 105 * PARAMS_PER_GAUSSIAN);
        let g = f.gaussians[5];
        assert_eq!(g.created_at, 3);
        // 4 px spacing at 0.05 units/px
        assert!((g.scale()[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.ply");
        let pts: Vec<_> = (0..7).map(|i| pt(i, [i as f64 * 0.3, -0.1, 2.0], [0.1, 0.2, 0.9])).collect();
        let mut f = GaussianField::init_from_cloud(&pts, 2).unwrap();
        f.gaussians[3].rotation = [0.5, 0.5, 0.5, 0.5];
        f.gaussians[4].opacity_logit = 1.234_567_890_123;
        f.save_checkpoint(&path).unwrap();
        let back = GaussianField::load_checkpoint(&path).unwrap();
        assert_eq!(back.gaussians, f.gaussians);
        assert_eq!(back.scene_diameter, f.scene_diameter);

        let bytes = fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ply");
        fs::write(&cut, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(GaussianField::load_checkpoint(&cut), Err(Error::Checkpoint { .. })));

        let mut v2 = bytes.clone();
        let pos = v2.windows(23).position(|w| w == b"orthosplat-checkpoint 1").unwrap();
        v2[pos + 22] = b'9';
        let bad = dir.path().join("v9.ply");
        fs::write(&bad, &v2).unwrap();
        let err = GaussianField::load_checkpoint(&bad).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");

        let empty = GaussianField::empty(1.0);
        let ep = dir.path().join("e.ply");
        empty.save_checkpoint(&ep).unwrap();
        assert!(GaussianField::load_checkpoint(&ep).unwrap().is_empty());
    }

    #[test]
    fn prune_keeps_alignment() {
        let pts: Vec<_> = (0..4).map(|i| pt(i, [i as f64, 0.0, 0.0], [0.5; 3])).collect();
        let mut f = GaussianField::init_from_cloud(&pts, 0).unwrap();
        f.gaussians[1].opacity_logit = -10.0;
        for (i, m) in f.optimizer.m.iter_mut().enumerate() {
            *m = (i / PARAMS_PER_GAUSSIAN) as f64;
        }
        assert_eq!(f.prune(0.005), 1);
        assert_eq!(f.len(), 3);
        assert_eq!(f.optimizer.m[PARAMS_PER_GAUSSIAN], 2.0);
    }
}
