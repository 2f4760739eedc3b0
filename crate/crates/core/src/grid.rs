//! Sparse voxel certainty grid.
//!
//! Each Gaussian contributes `opacity / (volume + epsilon)` to the voxel
//! containing its center; voxels with no contribution are not stored.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::Vec3;
use crate::scene::{GaussianScene, SceneBounds};

pub const DEFAULT_RESOLUTION: u32 = 128;
pub const DEFAULT_EPSILON: f64 = 1e-8;
pub const DEFAULT_CENTRAL_FRACTION: f64 = 0.5;
/// Linear indices are `u32`, so R³ must fit.
pub const MAX_RESOLUTION: u32 = 1024;

const MAGIC: &[u8; 4] = b"FVCG";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid resolution {0} is below 2 or above {MAX_RESOLUTION}")]
    ResolutionTooSmall(u32),
    #[error("degenerate bounds")]
    DegenerateBounds,
    #[error("certainty grid has no occupied voxels")]
    EmptyGrid,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed grid file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type VoxelIndex = [u32; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct CertaintyGrid {
    bounds: SceneBounds,
    resolution: u32,
    epsilon: f64,
    /// (linear index, certainty), sorted by linear index, certainty > 0.
    cells: Vec<(u32, f64)>,
}

/// Per-Gaussian certainty contribution.
pub fn primitive_certainty(scene: &GaussianScene, i: usize, epsilon: f64) -> f64 {
    scene.opacities[i] / (scene.volume(i) + epsilon)
}

pub fn build_certainty_grid(
    scene: &GaussianScene,
    bounds: &SceneBounds,
    resolution: u32,
    epsilon: f64,
) -> Result<CertaintyGrid, GridError> {
    if !(2..=MAX_RESOLUTION).contains(&resolution) {
        return Err(GridError::ResolutionTooSmall(resolution));
    }
    if !(epsilon > 0.0) {
        return Err(GridError::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let extent = bounds.extent();
    if (0..3).any(|k| !(extent[k] > 0.0) || !extent[k].is_finite()) {
        return Err(GridError::DegenerateBounds);
    }
    let mut grid = CertaintyGrid { bounds: *bounds, resolution, epsilon, cells: Vec::new() };

    let mut contributions: Vec<(u32, f64)> = (0..scene.count())
        .into_par_iter()
        .filter_map(|i| {
            let voxel = grid.voxel_of(&scene.centers[i])?;
            let c = primitive_certainty(scene, i, epsilon);
            (c > 0.0).then(|| (grid.linear(voxel), c))
        })
        .collect();
    // stable: equal voxels keep primitive order, so the sums below are
    // reduced in a fixed order regardless of the worker count
    contributions.par_sort_by_key(|&(idx, _)| idx);

    let mut cells: Vec<(u32, f64)> = Vec::new();
    for (idx, c) in contributions {
        match cells.last_mut() {
            Some((last, sum)) if *last == idx => *sum += c,
            _ => cells.push((idx, c)),
        }
    }
    grid.cells = cells;
    Ok(grid)
}

impl CertaintyGrid {
    /// Assembles a grid from explicit cells; used by importers and tests.
    pub fn from_cells(
        bounds: SceneBounds,
        resolution: u32,
        epsilon: f64,
        mut cells: Vec<(VoxelIndex, f64)>,
    ) -> Result<Self, GridError> {
        if !(2..=MAX_RESOLUTION).contains(&resolution) {
            return Err(GridError::ResolutionTooSmall(resolution));
        }
        let r = resolution;
        if cells.iter().any(|(v, c)| v.iter().any(|&k| k >= r) || !(*c > 0.0) || !c.is_finite()) {
            return Err(GridError::InvalidArgument("cell index out of range or non-positive certainty".into()));
        }
        cells.sort_by_key(|(v, _)| (v[0], v[1], v[2]));
        if cells.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(GridError::InvalidArgument("duplicate cell".into()));
        }
        let mut grid = Self { bounds, resolution, epsilon, cells: Vec::new() };
        grid.cells = cells.into_iter().map(|(v, c)| (grid.linear(v), c)).collect();
        Ok(grid)
    }

    pub fn bounds(&self) -> &SceneBounds {
        &self.bounds
    }

    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Occupied cells as (linear index, certainty), ascending by index.
    pub fn cells(&self) -> &[(u32, f64)] {
        &self.cells
    }

    pub fn total_certainty(&self) -> f64 {
        self.cells.iter().map(|c| c.1).sum()
    }

    pub fn linear(&self, v: VoxelIndex) -> u32 {
        let r = self.resolution;
        (v[0] * r + v[1]) * r + v[2]
    }

    pub fn unlinear(&self, idx: u32) -> VoxelIndex {
        let r = self.resolution;
        [idx / (r * r), (idx / r) % r, idx % r]
    }

    /// Certainty of a voxel, 0 when unoccupied.
    pub fn certainty(&self, v: VoxelIndex) -> f64 {
        let idx = self.linear(v);
        self.cells.binary_search_by_key(&idx, |c| c.0).map(|i| self.cells[i].1).unwrap_or(0.0)
    }

    /// Half-open voxel lookup; `None` outside [min, max).
    pub fn voxel_of(&self, p: &Vec3) -> Option<VoxelIndex> {
        let mut out = [0u32; 3];
        let r = self.resolution as f64;
        for k in 0..3 {
            let lo = self.bounds.min_corner[k];
            let hi = self.bounds.max_corner[k];
            if !(p[k] >= lo && p[k] < hi) {
                return None;
            }
            let f = ((p[k] - lo) / (hi - lo) * r).floor();
            out[k] = (f as u32).min(self.resolution - 1);
        }
        Some(out)
    }

    pub fn voxel_center(&self, v: VoxelIndex) -> Vec3 {
        let size = self.voxel_size();
        let min = self.bounds.min();
        Vec3::new(
            min.x + (v[0] as f64 + 0.5) * size.x,
            min.y + (v[1] as f64 + 0.5) * size.y,
            min.z + (v[2] as f64 + 0.5) * size.z,
        )
    }

    pub fn voxel_size(&self) -> Vec3 {
        self.bounds.extent() / self.resolution as f64
    }

    /// Certainty-weighted look-at point from the central region of the grid.
    pub fn sample_lookat(&self, central_fraction: f64, rng_seed: u64) -> Result<Vec3, GridError> {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        self.sample_lookat_with(central_fraction, &mut rng)
    }

    /// Same as [`Self::sample_lookat`] drawing from a caller-owned generator.
    ///
    /// Voxels qualify when every index lies in the central `central_fraction`
    /// of its axis; if none do, the whole grid is used.
    pub fn sample_lookat_with<R: Rng + ?Sized>(&self, central_fraction: f64, rng: &mut R) -> Result<Vec3, GridError> {
        if self.cells.is_empty() {
            return Err(GridError::EmptyGrid);
        }
        if !(central_fraction > 0.0 && central_fraction <= 1.0) {
            return Err(GridError::InvalidArgument(format!("central_fraction {central_fraction} not in (0, 1]")));
        }
        let r = self.resolution as f64;
        let lo = (r * (1.0 - central_fraction) / 2.0).floor() as u32;
        let hi = (r * (1.0 + central_fraction) / 2.0).ceil() as u32;
        let central: Vec<(u32, f64)> = self
            .cells
            .iter()
            .copied()
            .filter(|&(idx, _)| self.unlinear(idx).iter().all(|&k| k >= lo && k < hi))
            .collect();
        let pool = if central.is_empty() { &self.cells[..] } else { &central[..] };
        let total: f64 = pool.iter().map(|c| c.1).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = pool[pool.len() - 1].0;
        for &(idx, c) in pool {
            acc += c;
            if target < acc {
                chosen = idx;
                break;
            }
        }
        Ok(self.voxel_center(self.unlinear(chosen)))
    }

    /// Binary sidecar: magic, version, bounds, R, epsilon, cell count, then
    /// (u32 linear index, f64 certainty) pairs; all little-endian.
    pub fn write_binary(&self, path: &Path) -> Result<(), GridError> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for v in self.bounds.min_corner.iter().chain(&self.bounds.max_corner) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&self.resolution.to_le_bytes())?;
        w.write_all(&self.epsilon.to_le_bytes())?;
        w.write_all(&(self.cells.len() as u64).to_le_bytes())?;
        for &(idx, c) in &self.cells {
            w.write_all(&idx.to_le_bytes())?;
            w.write_all(&c.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self, GridError> {
        let mut r = BufReader::new(File::open(path)?);
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        let mut cursor = Cursor { buf: &buf, pos: 0 };
        if cursor.take(4)? != MAGIC {
            return Err(GridError::Malformed("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(GridError::Malformed(format!("unsupported version {version}")));
        }
        let mut corners = [0f64; 6];
        for c in &mut corners {
            *c = cursor.f64()?;
        }
        let bounds = SceneBounds::new(
            Vec3::new(corners[0], corners[1], corners[2]),
            Vec3::new(corners[3], corners[4], corners[5]),
        )
        .map_err(|_| GridError::DegenerateBounds)?;
        let resolution = cursor.u32()?;
        if !(2..=MAX_RESOLUTION).contains(&resolution) {
            return Err(GridError::ResolutionTooSmall(resolution));
        }
        let epsilon = cursor.f64()?;
        let count = cursor.u64()? as usize;
        let max_index = resolution.pow(3);
        let mut cells = Vec::with_capacity(count.min(buf.len() / 12));
        for _ in 0..count {
            let idx = cursor.u32()?;
            let c = cursor.f64()?;
            if idx >= max_index || !(c > 0.0) {
                return Err(GridError::Malformed(format!("bad cell ({idx}, {c})")));
            }
            if cells.last().is_some_and(|&(prev, _)| prev >= idx) {
                return Err(GridError::Malformed("cells not strictly ascending".into()));
            }
            cells.push((idx, c));
        }
        if cursor.pos != buf.len() {
            return Err(GridError::Malformed("trailing bytes".into()));
        }
        Ok(Self { bounds, resolution, epsilon, cells })
    }

    /// Human-readable dump for debugging.
    pub fn to_json(&self) -> serde_json::Value {
        #[derive(Serialize)]
        struct Cell {
            index: VoxelIndex,
            certainty: f64,
        }
        let cells: Vec<Cell> =
            self.cells.iter().map(|&(idx, certainty)| Cell { index: self.unlinear(idx), certainty }).collect();
        serde_json::json!({
            "bounds": self.bounds,
            "resolution": self.resolution,
            "epsilon": self.epsilon,
            "occupied": self.cells.len(),
            "total_certainty": self.total_certainty(),
            "cells": cells,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GridError> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(GridError::Malformed("truncated".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GridError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, GridError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, GridError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;

    fn unit_bounds() -> SceneBounds {
        SceneBounds::new(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)).unwrap()
    }

    fn scene(centers: Vec<Vec3>, opacities: Vec<f64>, log_scales: Vec<Vec3>) -> GaussianScene {
        let n = centers.len();
        GaussianScene::new(centers, log_scales, vec![Quat::identity(); n], opacities, vec![[0.5; 3]; n]).unwrap()
    }

    fn random_scene(n: usize, seed: u64) -> GaussianScene {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = (0..n).map(|_| Vec3::new(rng.random_range(-0.1..1.1), rng.random(), rng.random())).collect();
        let ops = (0..n).map(|_| rng.random()).collect();
        let scales =
            (0..n).map(|_| Vec3::new(rng.random_range(-5.0..0.5), rng.random_range(-5.0..0.5), rng.random_range(-5.0..0.5))).collect();
        scene(centers, ops, scales)
    }

    #[test]
    fn single_unit_volume_gaussian() {
        let s = scene(vec![Vec3::new(0.3, 0.3, 0.3)], vec![1.0], vec![Vec3::zeros()]);
        let g = build_certainty_grid(&s, &unit_bounds(), 4, 1e-8).unwrap();
        assert_eq!(g.occupied_count(), 1);
        assert_eq!(g.certainty([1, 1, 1]), 1.0 / (1.0 + 1e-8));
    }

    #[test]
    fn two_gaussians_share_a_voxel() {
        let s = scene(
            vec![Vec3::new(0.3, 0.3, 0.3), Vec3::new(0.31, 0.29, 0.3)],
            vec![0.5, 0.5],
            vec![Vec3::zeros(); 2],
        );
        let g = build_certainty_grid(&s, &unit_bounds(), 4, 1e-8).unwrap();
        assert_eq!(g.occupied_count(), 1);
        assert!((g.certainty([1, 1, 1]) - 1.0 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn matches_dense_triple_loop() {
        let s = random_scene(500, 3);
        let r = 8u32;
        let g = build_certainty_grid(&s, &unit_bounds(), r, 1e-8).unwrap();
        // oracle: dense array, voxel search by looping over all cells
        let mut dense = vec![0.0f64; (r * r * r) as usize];
        for j in 0..s.count() {
            let p = s.centers[j];
            for x in 0..r {
                for y in 0..r {
                    for z in 0..r {
                        let inside = [x, y, z].iter().enumerate().all(|(k, &i)| {
                            let lo = i as f64 / r as f64;
                            let hi = (i + 1) as f64 / r as f64;
                            p[k] >= lo && p[k] < hi
                        });
                        if inside {
                            let vol = s.log_scales[j].x.exp() * s.log_scales[j].y.exp() * s.log_scales[j].z.exp();
                            dense[((x * r + y) * r + z) as usize] += s.opacities[j] / (vol + 1e-8);
                        }
                    }
                }
            }
        }
        for x in 0..r {
            for y in 0..r {
                for z in 0..r {
                    let d = dense[((x * r + y) * r + z) as usize];
                    assert!((g.certainty([x, y, z]) - d).abs() <= 1e-9 * (1.0 + d));
                }
            }
        }
        assert!(g.occupied_count() <= s.count().min((r * r * r) as usize));
    }

    #[test]
    fn rejects_bad_arguments() {
        let s = random_scene(10, 1);
        assert!(matches!(build_certainty_grid(&s, &unit_bounds(), 1, 1e-8), Err(GridError::ResolutionTooSmall(1))));
        assert!(build_certainty_grid(&s, &unit_bounds(), 4, 0.0).is_err());
    }

    #[test]
    fn voxel_lookup_conventions() {
        let s = random_scene(10, 1);
        let g = build_certainty_grid(&s, &unit_bounds(), 128, 1e-8).unwrap();
        assert_eq!(g.voxel_of(&Vec3::zeros()), Some([0, 0, 0]));
        assert_eq!(g.voxel_of(&Vec3::new(1.0, 1.0, 1.0)), None);
        assert_eq!(g.voxel_of(&Vec3::new(0.5, 0.5, 0.5)), Some([64, 64, 64]));
        assert_eq!(g.voxel_of(&Vec3::new(0.5, 1.0, 0.5)), None);
        assert_eq!(g.voxel_of(&Vec3::new(-1e-12, 0.5, 0.5)), None);
        let v = [3, 7, 100];
        assert_eq!(g.unlinear(g.linear(v)), v);
        assert_eq!(g.voxel_of(&g.voxel_center(v)), Some(v));
    }

    #[test]
    fn lookat_sampling() {
        let b = unit_bounds();
        let single = CertaintyGrid::from_cells(b, 4, 1e-8, vec![([0, 0, 3], 2.0)]).unwrap();
        for seed in 0..5 {
            assert_eq!(single.sample_lookat(0.5, seed).unwrap(), single.voxel_center([0, 0, 3]));
        }
        let two = CertaintyGrid::from_cells(b, 4, 1e-8, vec![([1, 1, 1], 3.0), ([2, 2, 2], 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let first = two.voxel_center([1, 1, 1]);
        let n = 100_000;
        let hits = (0..n).filter(|_| two.sample_lookat_with(1.0, &mut rng).unwrap() == first).count();
        let freq = hits as f64 / n as f64;
        assert!((freq - 0.75).abs() < 0.01, "frequency {freq}");

        let empty = CertaintyGrid::from_cells(b, 4, 1e-8, vec![]).unwrap();
        assert!(matches!(empty.sample_lookat(0.5, 0), Err(GridError::EmptyGrid)));
    }

    #[test]
    fn central_region_restricts_sampling() {
        let b = unit_bounds();
        let g = CertaintyGrid::from_cells(b, 8, 1e-8, vec![([0, 0, 0], 100.0), ([4, 4, 4], 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            assert_eq!(g.sample_lookat_with(0.5, &mut rng).unwrap(), g.voxel_center([4, 4, 4]));
        }
        // nothing central: falls back to everything
        let edge = CertaintyGrid::from_cells(b, 8, 1e-8, vec![([0, 0, 0], 1.0)]).unwrap();
        assert_eq!(edge.sample_lookat(0.5, 3).unwrap(), edge.voxel_center([0, 0, 0]));
    }

    #[test]
    fn refinement_children_sum_to_parent() {
        let s = random_scene(400, 9);
        let coarse = build_certainty_grid(&s, &unit_bounds(), 4, 1e-8).unwrap();
        let fine = build_certainty_grid(&s, &unit_bounds(), 8, 1e-8).unwrap();
        for &(idx, c) in coarse.cells() {
            let [x, y, z] = coarse.unlinear(idx);
            let mut sum = 0.0;
            for d in 0..8u32 {
                sum += fine.certainty([2 * x + (d & 1), 2 * y + ((d >> 1) & 1), 2 * z + ((d >> 2) & 1)]);
            }
            assert!((sum - c).abs() <= 1e-9 * c.max(1.0));
        }
    }

    #[test]
    fn binary_sidecar_round_trip_and_corruption() {
        let s = random_scene(300, 4);
        let g = build_certainty_grid(&s, &unit_bounds(), 16, 1e-8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.bin");
        g.write_binary(&path).unwrap();
        assert_eq!(CertaintyGrid::read_binary(&path).unwrap(), g);
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(CertaintyGrid::read_binary(&path), Err(GridError::Malformed(_))));
        let json = g.to_json();
        assert_eq!(json["occupied"], g.occupied_count());
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let s = random_scene(5000, 12);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| build_certainty_grid(&s, &unit_bounds(), 8, 1e-8).unwrap());
        let b = four.install(|| build_certainty_grid(&s, &unit_bounds(), 8, 1e-8).unwrap());
        assert_eq!(a.cells(), b.cells());
    }

    proptest::proptest! {
        #[test]
        fn conservation_and_monotonicity(seed in 0u64..1000, bump in 0.0f64..1.0, grow in 0.01f64..2.0) {
            let s = random_scene(200, seed);
            let g = build_certainty_grid(&s, &unit_bounds(), 8, 1e-8).unwrap();
            let direct: f64 = (0..s.count())
                .filter(|&j| unit_bounds().contains(&s.centers[j]) && (0..3).all(|k| s.centers[j][k] < 1.0))
                .map(|j| primitive_certainty(&s, j, 1e-8))
                .sum();
            proptest::prop_assert!((g.total_certainty() - direct).abs() <= 1e-6 * direct.max(1e-300));
            proptest::prop_assert!(g.cells().iter().all(|c| c.1 > 0.0));

            let j = (seed as usize) % s.count();
            if let Some(v) = g.voxel_of(&s.centers[j]) {
                let mut more_opaque = s.clone();
                more_opaque.opacities[j] = (s.opacities[j] + bump).min(1.0);
                let g2 = build_certainty_grid(&more_opaque, &unit_bounds(), 8, 1e-8).unwrap();
                proptest::prop_assert!(g2.certainty(v) >= g.certainty(v));
                let mut bigger = s.clone();
                bigger.log_scales[j].y += grow;
                let g3 = build_certainty_grid(&bigger, &unit_bounds(), 8, 1e-8).unwrap();
                proptest::prop_assert!(g3.certainty(v) <= g.certainty(v));
            }
        }
    }
}
