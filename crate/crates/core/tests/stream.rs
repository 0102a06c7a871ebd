use std::fs;

use orthosplat::geometry::visible_reprojections;
use orthosplat::scene::{SceneStream, SparseScene};
use orthosplat::synthetic::DeskConfig;
use orthosplat::Error;

fn desk() -> (tempfile::TempDir, SparseScene) {
    let dir = tempfile::tempdir().unwrap();
    DeskConfig::default().generate().write(dir.path()).unwrap();
    let scene = SparseScene::load(&dir.path().join("sparse")).unwrap();
    (dir, scene)
}

#[test]
fn replay_reveals_points_incrementally() {
    let (dir, scene) = desk();
    let seen_by_first: Vec<u64> = scene
        .points
        .values()
        .filter(|p| p.observed_by(1))
        .map(|p| p.point3d_id)
        .collect();
    let mut stream = SceneStream::new(scene, dir.path().join("images"));
    assert_eq!(stream.len(), 9);

    let first = stream.replay_next().unwrap().unwrap();
    assert_eq!(first.frame_index, 0);
    assert_eq!(first.pose.image_id, 1);
    let ids: Vec<u64> = first.cloud_snapshot.iter().map(|p| p.point3d_id).collect();
    assert_eq!(ids, seen_by_first);

    let mut sizes = vec![ids.len()];
    let mut count = 1;
    while let Some(e) = stream.replay_next().unwrap() {
        assert_eq!(e.frame_index, count);
        assert!(e.cloud_snapshot.windows(2).all(|w| w[0].point3d_id < w[1].point3d_id));
        sizes.push(e.cloud_snapshot.len());
        count += 1;
    }
    assert_eq!(count, 9);
    assert!(sizes.windows(2).all(|w| w[0] <= w[1]));
    assert!(stream.replay_next().unwrap().is_none());
    assert_eq!(stream.remaining(), 0);
}

#[test]
fn every_observation_is_a_visible_reprojection() {
    let (dir, scene) = desk();
    for event in SceneStream::new(scene, dir.path().join("images")) {
        let event = event.unwrap();
        let proj = visible_reprojections(&event);
        let observed = event.pose.observations.len();
        assert_eq!(proj.len(), observed);
        assert!(proj.windows(2).all(|w| w[0].point3d_id < w[1].point3d_id));
    }
}

#[test]
fn manifest_controls_order() {
    let (dir, scene) = desk();
    let manifest = "# reverse\nview_09.png\nview_05.png\n\nview_01.png\n";
    let stream = SceneStream::with_manifest(scene.clone(), dir.path().join("images"), manifest).unwrap();
    let ids: Vec<u32> = stream.map(|e| e.unwrap().pose.image_id).collect();
    assert_eq!(ids, vec![9, 5, 1]);

    let err = SceneStream::with_manifest(scene, dir.path().join("images"), "nope.png\n");
    assert!(matches!(err, Err(Error::Parse { .. })));
}

#[test]
fn missing_image_is_a_stream_error() {
    let (dir, scene) = desk();
    fs::remove_file(dir.path().join("images/view_02.png")).unwrap();
    let mut stream = SceneStream::new(scene, dir.path().join("images"));
    assert!(stream.replay_next().unwrap().is_some());
    match stream.replay_next() {
        Err(Error::Stream { path, .. }) => assert!(path.ends_with("view_02.png")),
        other => panic!("expected a stream error, got {other:?}"),
    }
}

#[test]
fn scene_round_trips_through_text() {
    let (dir, scene) = desk();
    let again = dir.path().join("again");
    scene.save(&again).unwrap();
    let reloaded = SparseScene::load(&again).unwrap();
    assert_eq!(reloaded.cameras, scene.cameras);
    assert_eq!(reloaded.images, scene.images);
    assert_eq!(reloaded.points, scene.points);
}
