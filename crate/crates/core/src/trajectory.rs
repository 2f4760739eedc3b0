//! Candidate camera placement: anchor selection, ten parametric trajectory
//! modes, certainty-aimed look-at points and pose jitter.

use std::f64::consts::{FRAC_PI_2, TAU};

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{look_at_rotation, random_unit_vector, slerp, Quat, Vec3};
use crate::grid::{CertaintyGrid, GridError, DEFAULT_CENTRAL_FRACTION};
use crate::scene::{CameraPose, PoseRecord, SceneError, ViewKind};
use crate::seed::derive_indexed;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("look-at point coincides with a trajectory position")]
    DegenerateLookAt,
    #[error("invalid placement config: {0}")]
    InvalidConfig(String),
    #[error("no training poses")]
    EmptyTraining,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryMode {
    Orbit,
    Spiral,
    Lemniscate,
    Interpolation,
    MoveUp,
    MoveDown,
    MoveLeft,
    MoveRight,
    DollyzoomIn,
    DollyzoomOut,
}

impl TrajectoryMode {
    pub const ALL: [TrajectoryMode; 10] = [
        Self::Orbit,
        Self::Spiral,
        Self::Lemniscate,
        Self::Interpolation,
        Self::MoveUp,
        Self::MoveDown,
        Self::MoveLeft,
        Self::MoveRight,
        Self::DollyzoomIn,
        Self::DollyzoomOut,
    ];

    /// Modes aimed at a sampled look-at point rather than the anchor heading.
    pub fn is_object_centric(self) -> bool {
        matches!(self, Self::Orbit | Self::Spiral | Self::Lemniscate | Self::Interpolation)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Orbit => "orbit",
            Self::Spiral => "spiral",
            Self::Lemniscate => "lemniscate",
            Self::Interpolation => "interpolation",
            Self::MoveUp => "move_up",
            Self::MoveDown => "move_down",
            Self::MoveLeft => "move_left",
            Self::MoveRight => "move_right",
            Self::DollyzoomIn => "dollyzoom_in",
            Self::DollyzoomOut => "dollyzoom_out",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorMethod {
    Kmeans,
    FarthestPoint,
}

/// Candidate placement knobs. Position sigmas are upper bounds: each jittered
/// pose draws its own sigma uniformly from `[0, bound]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementConfig {
    pub num_anchors: usize,
    pub frames_per_traj: usize,
    pub anchor_method: AnchorMethod,
    pub anchor_pos_sigma: f64,
    pub anchor_rot_jitter_deg: f64,
    pub pool_pos_sigma: f64,
    pub pool_rot_jitter_deg: f64,
    pub jitter_fraction: f64,
    pub central_fraction: f64,
    /// Move/dolly step as a fraction of the bounds diagonal.
    pub step_fraction: f64,
    pub seed: u64,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        Self {
            num_anchors: 10,
            frames_per_traj: 20,
            anchor_method: AnchorMethod::Kmeans,
            anchor_pos_sigma: 0.1,
            anchor_rot_jitter_deg: 20.0,
            pool_pos_sigma: 0.5,
            pool_rot_jitter_deg: 30.0,
            jitter_fraction: 0.5,
            central_fraction: DEFAULT_CENTRAL_FRACTION,
            step_fraction: 0.02,
            seed: 0,
        }
    }
}

impl PlacementConfig {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let bad = |m: &str| Err(TrajectoryError::InvalidConfig(m.to_string()));
        if self.num_anchors == 0 {
            return bad("num_anchors must be at least 1");
        }
        if self.frames_per_traj < 2 {
            return bad("frames_per_traj must be at least 2");
        }
        if !(self.anchor_pos_sigma >= 0.0 && self.pool_pos_sigma >= 0.0) {
            return bad("position sigmas must be non-negative");
        }
        if !(self.anchor_rot_jitter_deg >= 0.0 && self.pool_rot_jitter_deg >= 0.0) {
            return bad("rotation jitter must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.jitter_fraction) {
            return bad("jitter_fraction must lie in [0, 1]");
        }
        if !(self.central_fraction > 0.0 && self.central_fraction <= 1.0) {
            return bad("central_fraction must lie in (0, 1]");
        }
        if !(self.step_fraction > 0.0) {
            return bad("step_fraction must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePose {
    pub pose: CameraPose,
    pub mode: TrajectoryMode,
    pub anchor_id: u32,
    pub frame_index: usize,
    pub lookat: Option<Vec3>,
    pub jittered: bool,
}

/// Everything one trajectory needs besides its mode and length.
#[derive(Clone, Debug)]
pub struct TrajectoryContext<'a> {
    pub anchor: &'a CameraPose,
    /// Endpoint for `Interpolation`; when absent the anchor is blended toward
    /// its quarter-orbit pose around the look-at point.
    pub partner: Option<&'a CameraPose>,
    pub lookat: Vec3,
    pub up: Vec3,
    /// Move/dolly displacement per frame.
    pub step: f64,
}

fn center_distance(a: &CameraPose, b: &CameraPose) -> f64 {
    (a.center() - b.center()).norm()
}

/// Training index nearest `point`, ties broken by the lower pose id.
fn nearest_index(training: &[CameraPose], point: &Vec3, exclude: &[bool]) -> Option<usize> {
    let mut best: Option<(f64, u32, usize)> = None;
    for (i, pose) in training.iter().enumerate() {
        if exclude[i] {
            continue;
        }
        let d = (pose.center() - point).norm_squared();
        if best.is_none_or(|(bd, bid, _)| d < bd || (d == bd && pose.id < bid)) {
            best = Some((d, pose.id, i));
        }
    }
    best.map(|b| b.2)
}

fn kmeans_centroids(points: &[Vec3], k: usize, seed: u64) -> Vec<Vec3> {
    const RESTARTS: u64 = 10;
    const ITERS: usize = 50;
    let mut best: Option<(f64, Vec<Vec3>)> = None;
    for restart in 0..RESTARTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(seed, restart));
        // k-means++ seeding
        let mut centroids = vec![points[rng.random_range(0..points.len())]];
        while centroids.len() < k {
            let d2: Vec<f64> = points
                .iter()
                .map(|p| centroids.iter().map(|c| (p - c).norm_squared()).fold(f64::INFINITY, f64::min))
                .collect();
            let total: f64 = d2.iter().sum();
            if total <= 0.0 {
                centroids.push(points[rng.random_range(0..points.len())]);
                continue;
            }
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if target < acc {
                    pick = i;
                    break;
                }
            }
            centroids.push(points[pick]);
        }
        let mut assignment = vec![usize::MAX; points.len()];
        for _ in 0..ITERS {
            let mut changed = false;
            for (i, p) in points.iter().enumerate() {
                let mut best_c = 0;
                let mut best_d = f64::INFINITY;
                for (c, centroid) in centroids.iter().enumerate() {
                    let d = (p - centroid).norm_squared();
                    if d < best_d {
                        best_d = d;
                        best_c = c;
                    }
                }
                if assignment[i] != best_c {
                    assignment[i] = best_c;
                    changed = true;
                }
            }
            let mut sums = vec![Vec3::zeros(); k];
            let mut counts = vec![0usize; k];
            for (p, &a) in points.iter().zip(&assignment) {
                sums[a] += p;
                counts[a] += 1;
            }
            for c in 0..k {
                if counts[c] > 0 {
                    centroids[c] = sums[c] / counts[c] as f64;
                }
            }
            if !changed {
                break;
            }
        }
        let inertia: f64 = points.iter().zip(&assignment).map(|(p, &a)| (p - centroids[a]).norm_squared()).sum();
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, centroids));
        }
    }
    best.map(|b| b.1).unwrap_or_default()
}

/// Picks `min(num_anchors, |training|)` distinct anchor poses, returned in
/// ascending id order.
pub fn select_anchors(training: &[CameraPose], config: &PlacementConfig) -> Vec<CameraPose> {
    let k = config.num_anchors.min(training.len());
    if k == 0 {
        return Vec::new();
    }
    if k == training.len() {
        return training.to_vec();
    }
    let centers: Vec<Vec3> = training.iter().map(CameraPose::center).collect();
    let mut taken = vec![false; training.len()];
    let mut chosen = Vec::with_capacity(k);
    match config.anchor_method {
        AnchorMethod::Kmeans => {
            for centroid in kmeans_centroids(&centers, k, config.seed) {
                if let Some(i) = nearest_index(training, &centroid, &taken) {
                    taken[i] = true;
                    chosen.push(i);
                }
            }
        }
        AnchorMethod::FarthestPoint => {
            // The pose nearest the centroid seeds the distances but is only
            // kept if it later wins on its own.
            let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
            let seed_idx = nearest_index(training, &mean, &taken).expect("non-empty training set");
            let mut min_d: Vec<f64> = centers.iter().map(|c| (c - centers[seed_idx]).norm()).collect();
            while chosen.len() < k {
                let mut best: Option<usize> = None;
                for i in 0..training.len() {
                    if taken[i] {
                        continue;
                    }
                    let better = match best {
                        None => true,
                        Some(b) => min_d[i] > min_d[b] || (min_d[i] == min_d[b] && training[i].id < training[b].id),
                    };
                    if better {
                        best = Some(i);
                    }
                }
                let b = best.expect("k <= |training|");
                taken[b] = true;
                chosen.push(b);
                for i in 0..training.len() {
                    min_d[i] = min_d[i].min((centers[i] - centers[b]).norm());
                }
            }
        }
    }
    let mut anchors: Vec<CameraPose> = chosen.into_iter().map(|i| training[i].clone()).collect();
    anchors.sort_by_key(|p| p.id);
    anchors
}

/// World up axis: normal of the best-fit plane through the camera centers,
/// signed to agree with the cameras' mean up vector. Falls back to the mean
/// up vector and then to +y when either is ill-defined.
pub fn world_up(training: &[CameraPose]) -> Vec3 {
    let mean_up: Vec3 = training.iter().map(|p| -p.down()).sum();
    let mean_up_dir = if mean_up.norm() > 1e-6 * training.len().max(1) as f64 {
        Some(mean_up.normalize())
    } else {
        None
    };
    if training.len() >= 3 {
        let centers: Vec<Vec3> = training.iter().map(CameraPose::center).collect();
        let mean = centers.iter().sum::<Vec3>() / centers.len() as f64;
        let mut cov = Matrix3::zeros();
        for c in &centers {
            let d = c - mean;
            cov += d * d.transpose();
        }
        let eig = SymmetricEigen::new(cov);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let (lmin, lmid) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        if lmid > 0.0 && lmin < 0.25 * lmid {
            let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
            let reference = mean_up_dir.unwrap_or(Vec3::y());
            if normal.dot(&reference) < 0.0 {
                normal = -normal;
            }
            return normal;
        }
    }
    mean_up_dir.unwrap_or(Vec3::y())
}

fn candidate(
    anchor: &CameraPose,
    mode: TrajectoryMode,
    frame_index: usize,
    rotation: Quat,
    position: Vec3,
    lookat: Option<Vec3>,
) -> CandidatePose {
    let pose = CameraPose::from_center(anchor.id, ViewKind::Candidate, rotation, position, anchor.intrinsics, anchor.near, anchor.far);
    CandidatePose { pose, mode, anchor_id: anchor.id, frame_index, lookat, jittered: false }
}

/// Orbit-plane frame around the look-at point: (plane center, radial unit,
/// tangent unit, horizontal radius, height of the anchor above the look-at).
fn orbit_frame(anchor_center: &Vec3, lookat: &Vec3, up: &Vec3) -> Result<(Vec3, Vec3, Vec3, f64, f64), TrajectoryError> {
    let r = (anchor_center - lookat).norm();
    let height = (anchor_center - lookat).dot(up);
    let plane_center = lookat + up * height;
    let radial = anchor_center - plane_center;
    let rho = radial.norm();
    if !(r > 0.0) || rho <= 1e-9 * r {
        return Err(TrajectoryError::DegenerateLookAt);
    }
    let e1 = radial / rho;
    let e2 = up.cross(&e1);
    Ok((plane_center, e1, e2, rho, height))
}

fn aimed(anchor: &CameraPose, mode: TrajectoryMode, i: usize, p: Vec3, lookat: &Vec3, up: &Vec3, scale: f64) -> Result<CandidatePose, TrajectoryError> {
    if (p - lookat).norm() <= 1e-9 * scale.max(1e-12) {
        return Err(TrajectoryError::DegenerateLookAt);
    }
    let rot = look_at_rotation(&p, lookat, up).ok_or(TrajectoryError::DegenerateLookAt)?;
    Ok(candidate(anchor, mode, i, rot, p, Some(*lookat)))
}

/// Generates `length` frames of one trajectory mode.
///
/// * orbit: circle through the anchor, perpendicular to `up`, around the
///   look-at point; angles `2πi/L`.
/// * spiral: orbit with horizontal radius shrinking to half and a vertical
///   offset `0.2 r sin(2πi/(L-1))`.
/// * lemniscate: Bernoulli figure-eight with `a = r` in the orbit plane,
///   centered on the anchor (lobes along the orbit tangent).
/// * interpolation: slerp / linear blend from anchor to partner, `t = i/(L-1)`.
/// * move_*: anchor-frame translation by `step · i`, fixed orientation.
/// * dollyzoom_*: forward/backward translation with focal scaled by `d_i / d_0`.
pub fn generate_trajectory(
    mode: TrajectoryMode,
    ctx: &TrajectoryContext<'_>,
    length: usize,
) -> Result<Vec<CandidatePose>, TrajectoryError> {
    if length < 2 {
        return Err(TrajectoryError::InvalidConfig("trajectory length must be at least 2".into()));
    }
    let anchor = ctx.anchor;
    let a_c = anchor.center();
    let up = ctx.up.normalize();
    let lookat = ctx.lookat;
    let r = (a_c - lookat).norm();
    let last = (length - 1) as f64;
    let mut out = Vec::with_capacity(length);
    match mode {
        TrajectoryMode::Orbit => {
            let (pc, e1, e2, rho, _) = orbit_frame(&a_c, &lookat, &up)?;
            for i in 0..length {
                let th = TAU * i as f64 / length as f64;
                let p = pc + (e1 * th.cos() + e2 * th.sin()) * rho;
                out.push(aimed(anchor, mode, i, p, &lookat, &up, r)?);
            }
        }
        TrajectoryMode::Spiral => {
            let (_, e1, e2, rho, height) = orbit_frame(&a_c, &lookat, &up)?;
            for i in 0..length {
                let th = TAU * i as f64 / length as f64;
                let s = i as f64 / last;
                let radius = rho * (1.0 - 0.5 * s);
                let h = height + 0.2 * r * (TAU * s).sin();
                let p = lookat + up * h + (e1 * th.cos() + e2 * th.sin()) * radius;
                out.push(aimed(anchor, mode, i, p, &lookat, &up, r)?);
            }
        }
        TrajectoryMode::Lemniscate => {
            let (_, e1, e2, _, _) = orbit_frame(&a_c, &lookat, &up)?;
            for i in 0..length {
                let th = FRAC_PI_2 + TAU * i as f64 / length as f64;
                let denom = 1.0 + th.sin().powi(2);
                let x = r * th.cos() / denom;
                let y = r * th.sin() * th.cos() / denom;
                let p = a_c + e2 * x + e1 * y;
                out.push(aimed(anchor, mode, i, p, &lookat, &up, r)?);
            }
        }
        TrajectoryMode::Interpolation => {
            let fallback;
            let partner = match ctx.partner {
                Some(p) => p,
                None => {
                    let (pc, _, e2, rho, _) = orbit_frame(&a_c, &lookat, &up)?;
                    let p = pc + e2 * rho;
                    let rot = look_at_rotation(&p, &lookat, &up).ok_or(TrajectoryError::DegenerateLookAt)?;
                    fallback = CameraPose::from_center(anchor.id, ViewKind::Candidate, rot, p, anchor.intrinsics, anchor.near, anchor.far);
                    &fallback
                }
            };
            let p_c = partner.center();
            for i in 0..length {
                let t = i as f64 / last;
                let mut c = candidate(anchor, mode, i, slerp(&anchor.rotation, &partner.rotation, t), a_c * (1.0 - t) + p_c * t, Some(lookat));
                if i == 0 {
                    c.pose.translation = anchor.translation;
                    c.pose.rotation = anchor.rotation;
                } else if i == length - 1 {
                    c.pose.translation = partner.translation;
                    c.pose.rotation = partner.rotation;
                }
                out.push(c);
            }
        }
        TrajectoryMode::MoveUp | TrajectoryMode::MoveDown | TrajectoryMode::MoveLeft | TrajectoryMode::MoveRight => {
            let dir = match mode {
                TrajectoryMode::MoveUp => -anchor.down(),
                TrajectoryMode::MoveDown => anchor.down(),
                TrajectoryMode::MoveLeft => -anchor.right(),
                _ => anchor.right(),
            };
            for i in 0..length {
                out.push(candidate(anchor, mode, i, anchor.rotation, a_c + dir * (ctx.step * i as f64), None));
            }
        }
        TrajectoryMode::DollyzoomIn | TrajectoryMode::DollyzoomOut => {
            let forward = anchor.forward();
            let travel = ctx.step * last;
            // focus distance along the anchor heading; dolly-in must stop short of it
            let d0 = r.max(2.0 * travel);
            let sign = if mode == TrajectoryMode::DollyzoomIn { 1.0 } else { -1.0 };
            for i in 0..length {
                let offset = sign * ctx.step * i as f64;
                let mut c = candidate(anchor, mode, i, anchor.rotation, a_c + forward * offset, None);
                let scale = (d0 - offset) / d0;
                c.pose.intrinsics.fx = anchor.intrinsics.fx * scale;
                c.pose.intrinsics.fy = anchor.intrinsics.fy * scale;
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Dolly focus distance used by [`generate_trajectory`] for a given anchor,
/// look-at and step: frames keep `focal / (d0 - travel)` constant.
pub fn dolly_focus_distance(anchor: &CameraPose, lookat: &Vec3, step: f64, length: usize) -> f64 {
    (anchor.center() - lookat).norm().max(2.0 * step * (length.saturating_sub(1)) as f64)
}

/// Perturbs the camera center by `N(0, pos_sigma² I)` and rotates the camera
/// about its center by a random axis and an angle uniform in ±`rot_jitter_deg`.
pub fn jitter_pose(pose: &CameraPose, pos_sigma: f64, rot_jitter_deg: f64, rng_seed: u64) -> CameraPose {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    jitter_pose_with(pose, pos_sigma, rot_jitter_deg, &mut rng)
}

pub fn jitter_pose_with<R: Rng + ?Sized>(pose: &CameraPose, pos_sigma: f64, rot_jitter_deg: f64, rng: &mut R) -> CameraPose {
    if pos_sigma == 0.0 && rot_jitter_deg == 0.0 {
        return pose.clone();
    }
    let normal = Normal::new(0.0, pos_sigma.max(0.0)).expect("finite sigma");
    let noise = Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
    let axis = random_unit_vector(rng);
    let bound = rot_jitter_deg.max(0.0).to_radians();
    let angle = if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let rotation = Quat::from_axis_angle(&axis, angle) * pose.rotation;
    let rotation = Quat::new_normalize(rotation.into_inner());
    let mut out = pose.clone();
    out.rotation = rotation;
    out.translation = -(rotation * (pose.center() + noise));
    out
}

/// Builds the full pool: every mode × anchor × frame, in that canonical order.
///
/// Candidate ids start one past the largest training id.
pub fn generate_candidate_pool(
    training: &[CameraPose],
    grid: &CertaintyGrid,
    config: &PlacementConfig,
) -> Result<Vec<CandidatePose>, TrajectoryError> {
    config.validate()?;
    if training.is_empty() {
        return Err(TrajectoryError::EmptyTraining);
    }
    if grid.is_empty() {
        return Err(GridError::EmptyGrid.into());
    }
    let anchors = select_anchors(training, config);
    let up = world_up(training);
    let diag = grid.bounds().diagonal();
    let step = config.step_fraction * diag;
    let first_id = training.iter().map(|p| p.id).max().unwrap_or(0) + 1;

    let partners: Vec<Option<usize>> = (0..anchors.len())
        .map(|a| {
            (0..anchors.len())
                .filter(|&b| b != a)
                .min_by(|&x, &y| {
                    center_distance(&anchors[a], &anchors[x])
                        .total_cmp(&center_distance(&anchors[a], &anchors[y]))
                        .then(anchors[x].id.cmp(&anchors[y].id))
                })
        })
        .collect();

    let pairs: Vec<(usize, usize)> =
        (0..TrajectoryMode::ALL.len()).flat_map(|m| (0..anchors.len()).map(move |a| (m, a))).collect();
    let trajectories: Vec<Vec<CandidatePose>> = pairs
        .par_iter()
        .map(|&(m, a)| {
            let mode = TrajectoryMode::ALL[m];
            let pair_seed = derive_indexed(config.seed, (m * anchors.len() + a) as u64 + 1);
            let mut rng = ChaCha8Rng::seed_from_u64(pair_seed);
            let sigma = rng.random::<f64>() * config.anchor_pos_sigma;
            let anchor = jitter_pose_with(&anchors[a], sigma, config.anchor_rot_jitter_deg, &mut rng);
            let partner = partners[a].map(|p| &anchors[p]);

            let mut frames = None;
            for _ in 0..8 {
                let lookat = grid.sample_lookat_with(config.central_fraction, &mut rng)?;
                let ctx = TrajectoryContext { anchor: &anchor, partner, lookat, up, step };
                match generate_trajectory(mode, &ctx, config.frames_per_traj) {
                    Ok(f) => {
                        frames = Some(f);
                        break;
                    }
                    Err(TrajectoryError::DegenerateLookAt) => continue,
                    Err(e) => return Err(e),
                }
            }
            let mut frames = match frames {
                Some(f) => f,
                None => {
                    // aim a quarter diagonal ahead, nudged off the up axis
                    let mut ahead = anchor.forward() - up * anchor.forward().dot(&up);
                    if ahead.norm() < 1e-6 {
                        ahead = anchor.right();
                    }
                    let lookat = anchor.center() + ahead.normalize() * (0.25 * diag);
                    let ctx = TrajectoryContext { anchor: &anchor, partner, lookat, up, step };
                    generate_trajectory(mode, &ctx, config.frames_per_traj)?
                }
            };
            for f in &mut frames {
                f.anchor_id = anchors[a].id;
                if rng.random::<f64>() < config.jitter_fraction {
                    let sigma = rng.random::<f64>() * config.pool_pos_sigma;
                    f.pose = jitter_pose_with(&f.pose, sigma, config.pool_rot_jitter_deg, &mut rng);
                    f.jittered = true;
                }
            }
            Ok(frames)
        })
        .collect::<Result<_, TrajectoryError>>()?;

    let mut pool: Vec<CandidatePose> = trajectories.into_iter().flatten().collect();
    for (i, c) in pool.iter_mut().enumerate() {
        c.pose.id = first_id + i as u32;
        c.pose.kind = ViewKind::Candidate;
    }
    Ok(pool)
}

/// One entry of the candidate pool sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub id: u32,
    pub mode: TrajectoryMode,
    pub anchor_id: u32,
    pub frame_index: usize,
    pub lookat: Option<[f64; 3]>,
    pub jittered: bool,
    pub pose: PoseRecord,
}

impl From<&CandidatePose> for CandidateRecord {
    fn from(c: &CandidatePose) -> Self {
        Self {
            id: c.pose.id,
            mode: c.mode,
            anchor_id: c.anchor_id,
            frame_index: c.frame_index,
            lookat: c.lookat.map(|l| [l.x, l.y, l.z]),
            jittered: c.jittered,
            pose: PoseRecord::from(&c.pose),
        }
    }
}

impl TryFrom<&CandidateRecord> for CandidatePose {
    type Error = SceneError;

    fn try_from(r: &CandidateRecord) -> Result<Self, SceneError> {
        let pose = CameraPose::try_from(&r.pose)?;
        if pose.id != r.id {
            return Err(SceneError::MalformedFile(format!("candidate {}: pose id {} differs", r.id, pose.id)));
        }
        Ok(Self {
            pose,
            mode: r.mode,
            anchor_id: r.anchor_id,
            frame_index: r.frame_index,
            lookat: r.lookat.map(Vec3::from),
            jittered: r.jittered,
        })
    }
}

pub fn candidates_to_json(pool: &[CandidatePose]) -> String {
    let records: Vec<CandidateRecord> = pool.iter().map(CandidateRecord::from).collect();
    serde_json::to_string_pretty(&records).expect("candidate records serialize")
}

pub fn candidates_from_json(text: &str) -> Result<Vec<CandidatePose>, SceneError> {
    let records: Vec<CandidateRecord> =
        serde_json::from_str(text).map_err(|e| SceneError::MalformedFile(e.to_string()))?;
    records.iter().map(CandidatePose::try_from).collect()
}
