//! Shared fixtures for the criterion benches.

use freeview_core::geometry::{Quat, Vec3};
use freeview_core::grid::{build_certainty_grid, CertaintyGrid};
use freeview_core::scene::{apply_default_clip, compute_bounds, CameraPose, GaussianScene};
use freeview_core::synthetic::{synthetic_cameras, synthetic_scene, SYNTHETIC_SEED};
use freeview_core::trajectory::{generate_candidate_pool, CandidatePose, PlacementConfig};

/// Additive-recurrence point in the unit cube (golden-ratio style), so
/// fixtures need no RNG.
fn quasi(i: usize) -> Vec3 {
    const A: [f64; 3] = [0.819_172_513_396_164_4, 0.671_043_606_703_789_2, 0.549_700_477_901_970_5];
    let f = |k: usize| (0.5 + A[k] * i as f64).fract();
    Vec3::new(f(0), f(1), f(2))
}

/// `n` small primitives filling the synthetic room volume.
pub fn scatter_scene(n: usize) -> GaussianScene {
    let centers: Vec<Vec3> = (0..n).map(|i| quasi(i).component_mul(&Vec3::new(8.0, 8.0, 3.0)) - Vec3::new(4.0, 4.0, 0.0)).collect();
    let log_scales = (0..n).map(|i| Vec3::repeat(-3.0 + quasi(i + n).x)).collect();
    let rotations = vec![Quat::identity(); n];
    let opacities = (0..n).map(|i| 0.3 + 0.7 * quasi(i + 2 * n).y).collect();
    let colors = (0..n).map(|i| {
        let c = quasi(i + 3 * n);
        [c.x, c.y, c.z]
    });
    GaussianScene::new(centers, log_scales, rotations, opacities, colors.collect()).expect("valid fixture")
}

pub struct Fixture {
    pub scene: GaussianScene,
    pub grid: CertaintyGrid,
    pub training: Vec<CameraPose>,
    pub pool: Vec<CandidatePose>,
}

/// Scene, grid at `resolution`, clipped training ring and the default pool.
pub fn fixture(scene: GaussianScene, resolution: u32) -> Fixture {
    let bounds = compute_bounds(&scene, 0.01, 0.99, 0.05).expect("non-empty scene");
    let grid = build_certainty_grid(&scene, &bounds, resolution, 1e-8).expect("valid grid");
    let mut training = synthetic_cameras();
    apply_default_clip(&mut training, grid.bounds());
    let pool = generate_candidate_pool(&training, &grid, &PlacementConfig::default()).expect("pool");
    Fixture { scene, grid, training, pool }
}

pub fn synthetic_fixture() -> Fixture {
    fixture(synthetic_scene(SYNTHETIC_SEED), 128)
}
