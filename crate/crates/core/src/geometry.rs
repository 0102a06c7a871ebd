//! Pinhole projection and visibility.

use nalgebra::Vector3;

use crate::scene::{CameraIntrinsics, FrameEvent, FramePose};

/// Points at or closer than this camera depth are treated as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedPoint {
    pub point3d_id: u64,
    pub pixel: [f64; 2],
    pub depth: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible { pixel: [f64; 2], depth: f64 },
    Behind,
}

pub fn world_to_camera(position: &[f64; 3], pose: &FramePose) -> Vector3<f64> {
    pose.rotation_matrix() * Vector3::from(*position) + pose.translation_vector()
}

pub fn project(position: &[f64; 3], pose: &FramePose, intr: &CameraIntrinsics) -> Projection {
    let pc = world_to_camera(position, pose);
    if pc.z <= MIN_DEPTH {
        return Projection::Behind;
    }
    Projection::Visible {
        pixel: [intr.fx * pc.x / pc.z + intr.cx, intr.fy * pc.y / pc.z + intr.cy],
        depth: pc.z,
    }
}

/// Inverse of [`project`]: the world point at `depth` along the ray through `pixel`.
pub fn lift(pixel: [f64; 2], depth: f64, pose: &FramePose, intr: &CameraIntrinsics) -> [f64; 3] {
    let pc = Vector3::new(
        (pixel[0] - intr.cx) / intr.fx * depth,
        (pixel[1] - intr.cy) / intr.fy * depth,
        depth,
    );
    let pw = pose.rotation_matrix().transpose() * (pc - pose.translation_vector());
    [pw.x, pw.y, pw.z]
}

/// Snapshot points tracked by this frame that land in front of the camera
/// and inside the image, sorted by point id.
pub fn visible_reprojections(event: &FrameEvent) -> Vec<ProjectedPoint> {
    let w = event.intrinsics.width as f64;
    let h = event.intrinsics.height as f64;
    let mut out: Vec<ProjectedPoint> = event
        .cloud_snapshot
        .iter()
        .filter(|p| p.observed_by(event.pose.image_id))
        .filter_map(|p| match project(&p.position, &event.pose, &event.intrinsics) {
            Projection::Visible { pixel, depth }
                if (0.0..w).contains(&pixel[0]) && (0.0..h).contains(&pixel[1]) =>
            {
                Some(ProjectedPoint {
                    point3d_id: p.point3d_id,
                    pixel,
                    depth,
                })
            }
            _ => None,
        })
        .collect();
    out.sort_by_key(|p| p.point3d_id);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::RgbImage;
    use crate::scene::{SparsePoint, TrackEntry};

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics {
            camera_id: 1,
            width: 100,
            height: 100,
            fx: 100.0,
            fy: 100.0,
            cx: 50.0,
            cy: 50.0,
        }
    }

    fn identity_pose() -> FramePose {
        FramePose {
            image_id: 1,
            rotation: [1.0, 0.0, 0.0, 0.0],
            translation: [0.0; 3],
            camera_id: 1,
            name: "a.png".into(),
            observations: vec![],
        }
    }

    #[test]
    fn axis_maps_to_principal_point() {
        assert_eq!(
            project(&[0.0, 0.0, 1.0], &identity_pose(), &intr()),
            Projection::Visible { pixel: [50.0, 50.0], depth: 1.0 }
        );
        assert_eq!(project(&[0.0, 0.0, -1.0], &identity_pose(), &intr()), Projection::Behind);
        // u = 100 * 0.5 / 1 + 50
        assert_eq!(
            project(&[0.5, 0.0, 1.0], &identity_pose(), &intr()),
            Projection::Visible { pixel: [100.0, 50.0], depth: 1.0 }
        );
    }

    fn point(id: u64, pos: [f64; 3], images: &[u32]) -> SparsePoint {
        SparsePoint {
            point3d_id: id,
            position: pos,
            color: [0.5; 3],
            error: 0.0,
            track: images
                .iter()
                .map(|&image_id| TrackEntry { image_id, point2d_idx: 0 })
                .collect(),
        }
    }

    #[test]
    fn visibility_rules() {
        let mut snapshot = vec![
            point(9, [0.1, 0.0, 1.0], &[1]),
            point(3, [0.0, 0.1, 1.0], &[1, 2]),
            point(4, [0.0, 0.0, 1.0], &[2]),        // not tracked by frame 1
            point(5, [-0.53, 0.0, 1.0], &[1]),      // u = -3
            point(6, [0.0, 0.0, -2.0], &[1]),       // behind
            point(1, [0.2, 0.2, 2.0], &[1]),
            point(2, [-0.2, 0.2, 2.0], &[1]),
            point(7, [0.0, -0.3, 1.5], &[1]),
        ];
        snapshot.sort_by_key(|p| p.point3d_id);
        let event = FrameEvent {
            frame_index: 0,
            pose: identity_pose(),
            intrinsics: intr(),
            image: RgbImage::new(100, 100),
            cloud_snapshot: snapshot,
        };
        let ids: Vec<u64> = visible_reprojections(&event).iter().map(|p| p.point3d_id).collect();
        assert_eq!(ids, vec![1, 2, 3, 7, 9]);
    }

    #[test]
    fn lift_inverts_projection() {
        let pose = FramePose {
            rotation: {
                let n = (0.9f64 * 0.9 + 0.1 * 0.1 + 0.3 * 0.3 + 0.2 * 0.2).sqrt();
                [0.9 / n, 0.1 / n, -0.3 / n, 0.2 / n]
            },
            translation: [0.3, -0.2, 4.0],
            ..identity_pose()
        };
        let x = [0.4, -0.7, 0.25];
        let Projection::Visible { pixel, depth } = project(&x, &pose, &intr()) else {
            panic!("behind");
        };
        let back = lift(pixel, depth, &pose, &intr());
        for k in 0..3 {
            assert!((back[k] - x[k]).abs() <= 1e-6 * x[k].abs().max(1.0));
        }
    }
}
