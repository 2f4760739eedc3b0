//! Loading the synthetic bundle from disk and pushing it through the
//! library entry points.

use freeview_core::graph::{build_view_graph, ViewGraph};
use freeview_core::grid::{build_certainty_grid, CertaintyGrid};
use freeview_core::scene::{apply_default_clip, compute_bounds, load_cameras, load_gaussian_ply, CameraFormat, ViewKind};
use freeview_core::synthetic::{synthetic_cameras, synthetic_scene, write_synthetic_bundle, SYNTHETIC_PRIMITIVES, SYNTHETIC_SEED};
use freeview_core::trajectory::{candidates_from_json, candidates_to_json, generate_candidate_pool, PlacementConfig};

#[test]
fn bundle_round_trips_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_synthetic_bundle(dir.path(), SYNTHETIC_SEED).unwrap();
    let scene = load_gaussian_ply(&dir.path().join("scene.ply")).unwrap();
    assert_eq!(scene.count(), SYNTHETIC_PRIMITIVES);
    let original = synthetic_scene(SYNTHETIC_SEED);
    for i in 0..scene.count() {
        assert!((scene.centers[i] - original.centers[i]).norm() < 1e-5);
        assert!((scene.opacities[i] - original.opacities[i]).abs() < 1e-5);
    }
    let cameras = load_cameras(&dir.path().join("transforms.json"), CameraFormat::TransformsJson).unwrap();
    let expected = synthetic_cameras();
    assert_eq!(cameras.len(), expected.len());
    for (a, b) in cameras.iter().zip(&expected) {
        assert_eq!(a.kind, ViewKind::Training);
        assert!((a.center() - b.center()).norm() < 1e-6);
        assert!((a.forward() - b.forward()).norm() < 1e-6);
    }
}

#[test]
fn sidecars_reload_identically() {
    let dir = tempfile::tempdir().unwrap();
    let scene = synthetic_scene(SYNTHETIC_SEED);
    let bounds = compute_bounds(&scene, 0.01, 0.99, 0.05).unwrap();
    let grid = build_certainty_grid(&scene, &bounds, 32, 1e-8).unwrap();
    let path = dir.path().join("grid.bin");
    grid.write_binary(&path).unwrap();
    let back = CertaintyGrid::read_binary(&path).unwrap();
    assert_eq!(back.cells(), grid.cells());
    assert_eq!(back.bounds(), grid.bounds());

    let mut training = synthetic_cameras();
    apply_default_clip(&mut training, grid.bounds());
    let config = PlacementConfig { num_anchors: 3, frames_per_traj: 6, ..PlacementConfig::default() };
    let pool = generate_candidate_pool(&training, &grid, &config).unwrap();
    assert_eq!(pool.len(), 3 * 10 * 6);
    assert_eq!(candidates_from_json(&candidates_to_json(&pool)).unwrap(), pool);

    let mut poses = training.clone();
    poses.extend(pool.iter().map(|c| c.pose.clone()));
    let graph = build_view_graph(&poses, &grid, 0.05).unwrap();
    let reloaded = ViewGraph::from_json(&graph.to_json()).unwrap();
    assert_eq!(reloaded.node_ids(), graph.node_ids());
    assert_eq!(reloaded.edge_count(), graph.edge_count());
    for id in graph.node_ids() {
        assert_eq!(reloaded.neighbors(id), graph.neighbors(id));
    }
}
