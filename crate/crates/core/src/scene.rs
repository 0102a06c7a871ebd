//! Sparse reconstruction text export: parsing, writing and online replay.
//!
//! A reconstruction is three text files (`cameras.txt`, `images.txt`,
//! `points3D.txt`) plus a directory of images. [`SceneStream`] reveals the
//! posed images one at a time, together with every sparse point whose track
//! touches an already revealed image, the way an incremental SfM front end
//! would hand them over.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::raster::{Rgb, RgbImage};

const CAMERAS: &str = "cameras.txt";
const IMAGES: &str = "images.txt";
const POINTS: &str = "points3D.txt";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub camera_id: u32,
    pub width: usize,
    pub height: usize,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.width < 1 || self.height < 1 {
            return Err("image size must be at least 1x1".into());
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if !(0.0..self.width as f64).contains(&self.cx) || !(0.0..self.height as f64).contains(&self.cy)
        {
            return Err("principal point outside the image".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub u: f64,
    pub v: f64,
    pub point3d_id: Option<u64>,
}

/// World-to-camera pose of one registered image.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePose {
    pub image_id: u32,
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    pub camera_id: u32,
    pub name: String,
    pub observations: Vec<Observation>,
}

impl FramePose {
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let [w, x, y, z] = self.rotation;
        UnitQuaternion::new_unchecked(Quaternion::new(w, x, y, z)).to_rotation_matrix().into_inner()
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Camera center in world coordinates, `-Rᵀ t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation_matrix().transpose() * self.translation_vector())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TrackEntry {
    pub image_id: u32,
    pub point2d_idx: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SparsePoint {
    pub point3d_id: u64,
    pub position: [f64; 3],
    pub color: Rgb,
    pub error: f64,
    pub track: Vec<TrackEntry>,
}

impl SparsePoint {
    pub fn observed_by(&self, image_id: u32) -> bool {
        self.track.iter().any(|t| t.image_id == image_id)
    }
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn num<T: std::str::FromStr>(file: &'static str, line: usize, tok: Option<&str>, what: &str) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::parse(file, line, format!("missing {what}")))?;
    tok.parse()
        .map_err(|_| Error::parse(file, line, format!("invalid {what} `{tok}`")))
}

pub fn parse_cameras(text: &str) -> Result<BTreeMap<u32, CameraIntrinsics>> {
    let mut out = BTreeMap::new();
    for (ln, line) in data_lines(text) {
        let mut it = line.split_whitespace();
        let camera_id: u32 = num(CAMERAS, ln, it.next(), "camera id")?;
        let model = it
            .next()
            .ok_or_else(|| Error::parse(CAMERAS, ln, "missing camera model"))?;
        let width: usize = num(CAMERAS, ln, it.next(), "width")?;
        let height: usize = num(CAMERAS, ln, it.next(), "height")?;
        let params = it
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::parse(CAMERAS, ln, format!("invalid parameter `{t}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (fx, fy, cx, cy) = match (model, params.as_slice()) {
            ("PINHOLE", &[fx, fy, cx, cy]) => (fx, fy, cx, cy),
            ("SIMPLE_PINHOLE", &[f, cx, cy]) => (f, f, cx, cy),
            ("PINHOLE" | "SIMPLE_PINHOLE", p) => {
                return Err(Error::parse(
                    CAMERAS,
                    ln,
                    format!("{model} expects {} parameters, got {}", if model == "PINHOLE" { 4 } else { 3 }, p.len()),
                ))
            }
            (other, _) => return Err(Error::UnsupportedModel(other.to_string())),
        };
        let cam = CameraIntrinsics {
            camera_id,
            width,
            height,
            fx,
            fy,
            cx,
            cy,
        };
        cam.validate().map_err(|m| Error::parse(CAMERAS, ln, m))?;
        out.insert(camera_id, cam);
    }
    Ok(out)
}

pub fn parse_images(text: &str) -> Result<Vec<FramePose>> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    while let Some((ln, line)) = lines.next() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let image_id: u32 = num(IMAGES, ln, it.next(), "image id")?;
        let mut q = [0.0; 4];
        for (k, slot) in q.iter_mut().enumerate() {
            *slot = num(IMAGES, ln, it.next(), &format!("quaternion component {k}"))?;
        }
        let mut t = [0.0; 3];
        for (k, slot) in t.iter_mut().enumerate() {
            *slot = num(IMAGES, ln, it.next(), &format!("translation component {k}"))?;
        }
        let camera_id: u32 = num(IMAGES, ln, it.next(), "camera id")?;
        let name = it.collect::<Vec<_>>().join(" ");
        if name.is_empty() {
            return Err(Error::parse(IMAGES, ln, "missing image name"));
        }
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        if !(norm >= 1e-6) {
            return Err(Error::parse(IMAGES, ln, format!("quaternion norm {norm:e} too small")));
        }
        let rotation = q.map(|c| c / norm);

        let (oln, obs_line) = lines
            .next()
            .ok_or_else(|| Error::parse(IMAGES, ln, "odd line count: missing observation line"))?;
        let toks: Vec<&str> = obs_line.split_whitespace().collect();
        if !toks.len().is_multiple_of(3) {
            return Err(Error::parse(IMAGES, oln, "observations must be X Y POINT3D_ID triples"));
        }
        let observations = toks
            .chunks(3)
            .map(|c| {
                let u: f64 = num(IMAGES, oln, Some(c[0]), "observation x")?;
                let v: f64 = num(IMAGES, oln, Some(c[1]), "observation y")?;
                let id: i64 = num(IMAGES, oln, Some(c[2]), "point id")?;
                Ok(Observation {
                    u,
                    v,
                    point3d_id: if id < 0 { None } else { Some(id as u64) },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(FramePose {
            image_id,
            rotation,
            translation: t,
            camera_id,
            name,
            observations,
        });
    }
    Ok(out)
}

/// Parsed point set plus the number of points dropped for having an empty track.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedPoints {
    pub points: BTreeMap<u64, SparsePoint>,
    pub skipped_empty_tracks: usize,
}

pub fn parse_points3d(text: &str) -> Result<ParsedPoints> {
    let mut out = ParsedPoints::default();
    for (ln, line) in data_lines(text) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 8 {
            return Err(Error::parse(POINTS, ln, "expected at least 8 fields"));
        }
        let point3d_id: u64 = num(POINTS, ln, Some(toks[0]), "point id")?;
        let mut position = [0.0; 3];
        for k in 0..3 {
            position[k] = num(POINTS, ln, Some(toks[1 + k]), "coordinate")?;
        }
        let mut color = [0.0; 3];
        for k in 0..3 {
            let c: f64 = num(POINTS, ln, Some(toks[4 + k]), "color")?;
            color[k] = (c / 255.0).clamp(0.0, 1.0);
        }
        let error: f64 = num(POINTS, ln, Some(toks[7]), "reprojection error")?;
        let rest = &toks[8..];
        if !rest.len().is_multiple_of(2) {
            return Err(Error::parse(POINTS, ln, "track has odd length"));
        }
        let mut track: Vec<TrackEntry> = Vec::with_capacity(rest.len() / 2);
        for pair in rest.chunks(2) {
            let image_id: u32 = num(POINTS, ln, Some(pair[0]), "track image id")?;
            let point2d_idx: u32 = num(POINTS, ln, Some(pair[1]), "track point index")?;
            if !track.iter().any(|t| t.image_id == image_id) {
                track.push(TrackEntry { image_id, point2d_idx });
            }
        }
        if track.is_empty() {
            out.skipped_empty_tracks += 1;
            continue;
        }
        out.points.insert(
            point3d_id,
            SparsePoint {
                point3d_id,
                position,
                color,
                error,
                track,
            },
        );
    }
    if out.skipped_empty_tracks > 0 {
        log::warn!("skipped {} points with empty tracks", out.skipped_empty_tracks);
    }
    Ok(out)
}

pub fn write_cameras(cameras: &BTreeMap<u32, CameraIntrinsics>) -> String {
    let mut s = String::from("# CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]\n");
    for c in cameras.values() {
        let _ = writeln!(
            s,
            "{} PINHOLE {} {} {:?} {:?} {:?} {:?}",
            c.camera_id, c.width, c.height, c.fx, c.fy, c.cx, c.cy
        );
    }
    s
}

pub fn write_images(images: &[FramePose]) -> String {
    let mut s = String::from(
        "# IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME\n# POINTS2D[] as (X, Y, POINT3D_ID)\n",
    );
    for im in images {
        let [qw, qx, qy, qz] = im.rotation;
        let [tx, ty, tz] = im.translation;
        let _ = writeln!(
            s,
            "{} {qw:?} {qx:?} {qy:?} {qz:?} {tx:?} {ty:?} {tz:?} {} {}",
            im.image_id, im.camera_id, im.name
        );
        let obs: Vec<String> = im
            .observations
            .iter()
            .map(|o| {
                let id = o.point3d_id.map_or(-1, |v| v as i64);
                format!("{:?} {:?} {id}", o.u, o.v)
            })
            .collect();
        let _ = writeln!(s, "{}", obs.join(" "));
    }
    s
}

pub fn write_points3d(points: &BTreeMap<u64, SparsePoint>) -> String {
    let mut s = String::from("# POINT3D_ID X Y Z R G B ERROR TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    for p in points.values() {
        let [x, y, z] = p.position;
        let [r, g, b] = p.color.map(|c| (c * 255.0).round() as u8);
        let _ = write!(s, "{} {x:?} {y:?} {z:?} {r} {g} {b} {:?}", p.point3d_id, p.error);
        for t in &p.track {
            let _ = write!(s, " {} {}", t.image_id, t.point2d_idx);
        }
        s.push('\n');
    }
    s
}

/// A fully parsed reconstruction.
#[derive(Clone, Debug)]
pub struct SparseScene {
    pub cameras: BTreeMap<u32, CameraIntrinsics>,
    pub images: Vec<FramePose>,
    pub points: BTreeMap<u64, SparsePoint>,
}

impl SparseScene {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::io(p, e))
        };
        let cameras = parse_cameras(&read(CAMERAS)?)?;
        let images = parse_images(&read(IMAGES)?)?;
        let points = parse_points3d(&read(POINTS)?)?.points;
        let scene = SparseScene {
            cameras,
            images,
            points,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(p, e))
        };
        write(CAMERAS, write_cameras(&self.cameras))?;
        write(IMAGES, write_images(&self.images))?;
        write(POINTS, write_points3d(&self.points))
    }

    fn validate(&self) -> Result<()> {
        for im in &self.images {
            if !self.cameras.contains_key(&im.camera_id) {
                return Err(Error::parse(
                    IMAGES,
                    0,
                    format!("image {} references unknown camera {}", im.image_id, im.camera_id),
                ));
            }
            for o in &im.observations {
                if let Some(id) = o.point3d_id {
                    if !self.points.contains_key(&id) {
                        return Err(Error::parse(
                            IMAGES,
                            0,
                            format!("image {} observes unknown point {id}", im.image_id),
                        ));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One revealed image together with everything known at that moment.
#[derive(Clone, Debug)]
pub struct FrameEvent {
    pub frame_index: usize,
    pub pose: FramePose,
    pub intrinsics: CameraIntrinsics,
    pub image: RgbImage,
    /// Sorted by point id.
    pub cloud_snapshot: Vec<SparsePoint>,
}

/// Replays a [`SparseScene`] frame by frame.
pub struct SceneStream {
    scene: SparseScene,
    images_dir: PathBuf,
    order: Vec<usize>,
    cursor: usize,
    by_image: HashMap<u32, Vec<u64>>,
    revealed: BTreeSet<u64>,
}

impl SceneStream {
    /// Replay in ascending image id order.
    pub fn new(scene: SparseScene, images_dir: impl Into<PathBuf>) -> Self {
        let mut order: Vec<usize> = (0..scene.images.len()).collect();
        order.sort_by_key(|&i| scene.images[i].image_id);
        Self::with_order(scene, images_dir.into(), order)
    }

    /// Replay in the order of a manifest listing one image name per line.
    pub fn with_manifest(scene: SparseScene, images_dir: impl Into<PathBuf>, manifest: &str) -> Result<Self> {
        let by_name: HashMap<&str, usize> = scene
            .images
            .iter()
            .enumerate()
            .map(|(i, im)| (im.name.as_str(), i))
            .collect();
        let mut order = Vec::new();
        for (ln, name) in data_lines(manifest) {
            let idx = by_name
                .get(name)
                .ok_or_else(|| Error::parse("manifest", ln, format!("unknown image `{name}`")))?;
            if !order.contains(idx) {
                order.push(*idx);
            }
        }
        Ok(Self::with_order(scene, images_dir.into(), order))
    }

    fn with_order(scene: SparseScene, images_dir: PathBuf, order: Vec<usize>) -> Self {
        let mut by_image: HashMap<u32, Vec<u64>> = HashMap::new();
        for p in scene.points.values() {
            for t in &p.track {
                by_image.entry(t.image_id).or_default().push(p.point3d_id);
            }
        }
        SceneStream {
            scene,
            images_dir,
            order,
            cursor: 0,
            by_image,
            revealed: BTreeSet::new(),
        }
    }

    pub fn scene(&self) -> &SparseScene {
        &self.scene
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.order.len() - self.cursor
    }

    /// Returns the next frame, or `None` once every image was replayed.
    pub fn replay_next(&mut self) -> Result<Option<FrameEvent>> {
        let Some(&idx) = self.order.get(self.cursor) else {
            return Ok(None);
        };
        let pose = self.scene.images[idx].clone();
        let intrinsics = self.scene.cameras[&pose.camera_id];
        let path = self.images_dir.join(&pose.name);
        let image = RgbImage::load(&path)?;
        if image.width != intrinsics.width || image.height != intrinsics.height {
            return Err(Error::Stream {
                path,
                msg: format!(
                    "image is {}x{} but camera {} is {}x{}",
                    image.width, image.height, intrinsics.camera_id, intrinsics.width, intrinsics.height
                ),
            });
        }
        if let Some(ids) = self.by_image.get(&pose.image_id) {
            self.revealed.extend(ids.iter().copied());
        }
        let cloud_snapshot = self
            .revealed
            .iter()
            .map(|id| self.scene.points[id].clone())
            .collect();
        let event = FrameEvent {
            frame_index: self.cursor,
            pose,
            intrinsics,
            image,
            cloud_snapshot,
        };
        self.cursor += 1;
        Ok(Some(event))
    }
}

impl Iterator for SceneStream {
    type Item = Result<FrameEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        self.replay_next().transpose()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinhole_and_simple_pinhole() {
        let cams = parse_cameras("# c\n1 PINHOLE 640 480 500 500 320 240\n2 SIMPLE_PINHOLE 640 480 500 320 240\n").unwrap();
        let c1 = cams[&1];
        assert_eq!((c1.fx, c1.fy, c1.cx, c1.cy), (500.0, 500.0, 320.0, 240.0));
        let c2 = cams[&2];
        assert_eq!((c2.fx, c2.fy), (500.0, 500.0));
    }

    #[test]
    fn radial_is_unsupported() {
        match parse_cameras("1 RADIAL 640 480 500 320 240 0.1 0.01") {
            Err(Error::UnsupportedModel(m)) => assert_eq!(m, "RADIAL"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_camera_names_line() {
        let err = parse_cameras("# header\n1 PINHOLE 640 abc 1 1 1 1").unwrap_err();
        assert!(err.to_string().contains(":2:"), "{err}");
    }

    #[test]
    fn images_identity_and_sentinel() {
        let text = "1 1 0 0 0 0 0 0 1 a.png\n100.5 200.5 -1 3 4 7\n";
        let ims = parse_images(text).unwrap();
        assert_eq!(ims[0].rotation, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(ims[0].rotation_matrix(), Matrix3::identity());
        assert_eq!(
            ims[0].observations[0],
            Observation { u: 100.5, v: 200.5, point3d_id: None }
        );
        assert_eq!(ims[0].observations[1].point3d_id, Some(7));
    }

    #[test]
    fn images_file_order_and_errors() {
        let text = "3 1 0 0 0 0 0 0 1 c.png\n\n1 1 0 0 0 0 0 0 1 a.png\n\n2 1 0 0 0 0 0 0 1 b.png\n\n";
        let ids: Vec<u32> = parse_images(text).unwrap().iter().map(|i| i.image_id).collect();
        assert_eq!(ids, vec![3, 1, 2]);

        assert!(parse_images("1 1 0 0 0 0 0 0 1 a.png").is_err());
        assert!(parse_images("1 1 0 0 0 0 0 0 1 a.png\n1 2\n").is_err());
        assert!(parse_images("1 0 0 0 0 0 0 0 1 a.png\n\n").is_err());
        assert!(parse_images("1 x 0 0 0 0 0 0 1 a.png\n\n").is_err());
    }

    #[test]
    fn points_mapping_rescale_dedup() {
        let p = parse_points3d("7 1 2 3 255 0 0 0.5 1 0 2 5\n8 0 0 0 128 128 128 0.1 1 0 1 4\n").unwrap();
        let a = &p.points[&7];
        assert_eq!(a.position, [1.0, 2.0, 3.0]);
        assert_eq!(a.color, [1.0, 0.0, 0.0]);
        assert_eq!(a.track.iter().map(|t| t.image_id).collect::<Vec<_>>(), vec![1, 2]);
        let b = &p.points[&8];
        assert_eq!(b.color, [128.0 / 255.0; 3]);
        assert_eq!(b.track.len(), 1);
    }

    #[test]
    fn points_odd_track_and_empty_track() {
        assert!(parse_points3d("7 1 2 3 255 0 0 0.5 1 0 2").is_err());
        let p = parse_points3d("7 1 2 3 255 0 0 0.5\n").unwrap();
        assert!(p.points.is_empty());
        assert_eq!(p.skipped_empty_tracks, 1);
    }
}
