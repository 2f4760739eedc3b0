//! Procedural test scene: a closed room of flat splats around a cluster of
//! small opaque primitives, seen by a ring of inward-looking cameras. Z is up.

use std::f64::consts::TAU;
use std::path::Path;

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{look_at_rotation, Quat, Vec3};
use crate::scene::{write_gaussian_ply, write_transforms_json, CameraPose, GaussianScene, Intrinsics, SceneError, ViewKind};

pub const SYNTHETIC_PRIMITIVES: usize = 200;
pub const SYNTHETIC_CAMERAS: usize = 48;
pub const SYNTHETIC_SEED: u64 = 7;

/// Room half-width and height.
const HALF: f64 = 4.0;
const HEIGHT: f64 = 3.0;

struct Builder {
    rng: ChaCha8Rng,
    centers: Vec<Vec3>,
    log_scales: Vec<Vec3>,
    rotations: Vec<Quat>,
    opacities: Vec<f64>,
    colors: Vec<[f64; 3]>,
}

impl Builder {
    fn push(&mut self, center: Vec3, scales: Vec3, rotation: Quat, opacity: f64, color: [f64; 3]) {
        self.centers.push(center);
        self.log_scales.push(scales.map(f64::ln));
        self.rotations.push(rotation);
        self.opacities.push(opacity);
        self.colors.push(color.map(|c| c.clamp(0.0, 1.0)));
    }

    fn tint(&mut self, base: [f64; 3], spread: f64) -> [f64; 3] {
        base.map(|c| c + self.rng.random_range(-spread..spread))
    }

    /// `nu × nv` flat splats tiling the rectangle `origin + [0,1]u + [0,1]v`.
    fn panel(&mut self, origin: Vec3, u: Vec3, v: Vec3, nu: usize, nv: usize, base: [f64; 3]) {
        let normal = u.cross(&v).normalize();
        let (lu, lv) = (u.norm() / nu as f64, v.norm() / nv as f64);
        let frame = crate::geometry::rotation_from_axes(&u.normalize(), &v.normalize(), &normal).inverse();
        for i in 0..nu {
            for j in 0..nv {
                let jitter = (self.rng.random_range(-0.15..0.15), self.rng.random_range(-0.15..0.15));
                let c = origin + u * ((i as f64 + 0.5 + jitter.0) / nu as f64) + v * ((j as f64 + 0.5 + jitter.1) / nv as f64);
                let checker = if (i + j) % 2 == 0 { 0.12 } else { -0.12 };
                let color = self.tint(base.map(|b| b + checker), 0.1);
                let spin = UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(normal), self.rng.random_range(0.0..TAU));
                let opacity = self.rng.random_range(0.85..1.0);
                self.push(c, Vec3::new(0.45 * lu, 0.45 * lv, 0.02), spin * frame, opacity, color);
            }
        }
    }
}

/// Room splats plus an object cluster; exactly [`SYNTHETIC_PRIMITIVES`].
pub fn synthetic_scene(seed: u64) -> GaussianScene {
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        centers: Vec::new(),
        log_scales: Vec::new(),
        rotations: Vec::new(),
        opacities: Vec::new(),
        colors: Vec::new(),
    };
    let (h, z) = (HALF, HEIGHT);
    b.panel(Vec3::new(-h, -h, 0.0), Vec3::new(2.0 * h, 0.0, 0.0), Vec3::new(0.0, 2.0 * h, 0.0), 6, 6, [0.45, 0.35, 0.25]);
    b.panel(Vec3::new(-h, h, z), Vec3::new(2.0 * h, 0.0, 0.0), Vec3::new(0.0, -2.0 * h, 0.0), 6, 6, [0.8, 0.8, 0.75]);
    let walls = [
        (Vec3::new(-h, -h, 0.0), Vec3::new(2.0 * h, 0.0, 0.0), [0.6, 0.3, 0.3]),
        (Vec3::new(h, -h, 0.0), Vec3::new(0.0, 2.0 * h, 0.0), [0.3, 0.55, 0.35]),
        (Vec3::new(h, h, 0.0), Vec3::new(-2.0 * h, 0.0, 0.0), [0.3, 0.35, 0.6]),
        (Vec3::new(-h, h, 0.0), Vec3::new(0.0, -2.0 * h, 0.0), [0.6, 0.55, 0.3]),
    ];
    for (o, u, base) in walls {
        b.panel(o, u, Vec3::new(0.0, 0.0, z), 6, 3, base);
    }
    // object: a clustered blob of small primitives on the floor center
    while b.centers.len() < SYNTHETIC_PRIMITIVES {
        let dir = crate::geometry::random_unit_vector(&mut b.rng).into_inner();
        let r = 0.6 * b.rng.random::<f64>().cbrt();
        let c = Vec3::new(0.0, 0.0, 0.8) + Vec3::new(dir.x, dir.y, 0.8 * dir.z) * r;
        let s = Vec3::new(b.rng.random_range(0.06..0.16), b.rng.random_range(0.06..0.16), b.rng.random_range(0.04..0.12));
        let rot = UnitQuaternion::from_axis_angle(&crate::geometry::random_unit_vector(&mut b.rng), b.rng.random_range(0.0..TAU));
        let color = [b.rng.random_range(0.05..0.95), b.rng.random_range(0.05..0.95), b.rng.random_range(0.05..0.95)];
        let opacity = b.rng.random_range(0.7..1.0);
        b.push(c, s, rot, opacity, color);
    }
    GaussianScene::new(b.centers, b.log_scales, b.rotations, b.opacities, b.colors).expect("generator emits valid primitives")
}

/// Intrinsics shared by the synthetic training views.
pub fn synthetic_intrinsics() -> Intrinsics {
    Intrinsics { fx: 300.0, fy: 300.0, cx: 256.0, cy: 192.0, width: 512, height: 384 }
}

/// Ring of [`SYNTHETIC_CAMERAS`] views at radius 2.5 with a gentle height
/// wave, all aimed at the object.
pub fn synthetic_cameras() -> Vec<CameraPose> {
    let target = Vec3::new(0.0, 0.0, 0.8);
    (0..SYNTHETIC_CAMERAS)
        .map(|i| {
            let th = i as f64 / SYNTHETIC_CAMERAS as f64 * TAU;
            let c = Vec3::new(2.5 * th.cos(), 2.5 * th.sin(), 1.5 + 0.3 * (3.0 * th).sin());
            let r = look_at_rotation(&c, &target, &Vec3::z()).expect("camera is off target");
            CameraPose::from_center(i as u32, ViewKind::Training, r, c, synthetic_intrinsics(), 0.01, 100.0)
        })
        .collect()
}

/// Writes `scene.ply` and `transforms.json` into `dir`.
pub fn write_synthetic_bundle(dir: &Path, seed: u64) -> Result<(), SceneError> {
    std::fs::create_dir_all(dir)?;
    write_gaussian_ply(&synthetic_scene(seed), &dir.join("scene.ply"))?;
    write_transforms_json(&synthetic_cameras(), &dir.join("transforms.json"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{load_cameras, load_gaussian_ply, CameraFormat};

    #[test]
    fn counts_and_determinism() {
        let a = synthetic_scene(SYNTHETIC_SEED);
        assert_eq!(a.count(), SYNTHETIC_PRIMITIVES);
        assert_eq!(a, synthetic_scene(SYNTHETIC_SEED));
        assert_ne!(a.centers, synthetic_scene(SYNTHETIC_SEED + 1).centers);
        let cams = synthetic_cameras();
        assert_eq!(cams.len(), SYNTHETIC_CAMERAS);
        for c in &cams {
            let p = c.project(&Vec3::new(0.0, 0.0, 0.8)).unwrap();
            assert!((p.u - 256.0).abs() < 1e-9 && (p.v - 192.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bundle_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_synthetic_bundle(dir.path(), SYNTHETIC_SEED).unwrap();
        let scene = load_gaussian_ply(&dir.path().join("scene.ply")).unwrap();
        assert_eq!(scene.count(), SYNTHETIC_PRIMITIVES);
        let cams = load_cameras(&dir.path().join("transforms.json"), CameraFormat::TransformsJson).unwrap();
        for (a, b) in cams.iter().zip(synthetic_cameras()) {
            assert!((a.center() - b.center()).norm() < 1e-9);
        }
    }
}
