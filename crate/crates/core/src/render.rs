//! CPU splat rasterizer and the render-based quality gate.
//!
//! Primitives are projected with the usual EWA linearization, sorted front to
//! back by camera-space depth and alpha-composited per pixel over a black
//! background. Pixel `(x, y)` samples the image plane at `(x + 0.5, y + 0.5)`.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::{quantile_sorted, Vec3};
use crate::grid::{primitive_certainty, DEFAULT_EPSILON};
use crate::image::{filter_same, gaussian_kernel, write_pfm, RgbImage};
use crate::scene::{CameraPose, GaussianScene};

/// Isotropic screen-space dilation added to every projected covariance (px²).
pub const COVARIANCE_DILATION: f64 = 0.3;
/// Compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-4;
const MIN_SPLAT_ALPHA: f64 = 1.0 / 255.0;
const ROW_BAND: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOutput {
    pub color: RgbImage,
    /// Alpha-weighted mean camera-space depth; 0 where nothing was hit.
    pub depth: Vec<f32>,
    pub alpha: Vec<f32>,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn write_files(&self, color_png: &Path, depth_pfm: &Path, alpha_pfm: Option<&Path>) -> std::io::Result<()> {
        self.color.write_png(color_png)?;
        write_pfm(depth_pfm, self.width(), self.height(), &self.depth)?;
        if let Some(p) = alpha_pfm {
            write_pfm(p, self.width(), self.height(), &self.alpha)?;
        }
        Ok(())
    }
}

struct Splat {
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
    depth: f64,
    sort_key: [f64; 9],
    x_range: (usize, usize),
    y_range: (usize, usize),
}

fn project_splat(scene: &GaussianScene, i: usize, pose: &CameraPose) -> Option<Splat> {
    let k = &pose.intrinsics;
    let (w, h) = (k.width as usize, k.height as usize);
    let opacity = scene.opacities[i];
    if opacity < MIN_SPLAT_ALPHA {
        return None;
    }
    let t = pose.to_camera(&scene.centers[i]);
    if !(t.z > pose.near && t.z < pose.far) {
        return None;
    }
    let rot_w2c = pose.rotation.to_rotation_matrix().into_inner();
    let rot_g = scene.rotations[i].to_rotation_matrix().into_inner();
    let s = scene.log_scales[i].map(f64::exp);
    let m = rot_w2c * rot_g * nalgebra::Matrix3::from_diagonal(&s);
    let cov_cam = m * m.transpose();
    let (x, y, z) = (t.x, t.y, t.z);
    // the linearization degrades off-axis; clamp to 1.3× the half field of view
    let lim_x = 1.3 * k.cx.max(k.width as f64 - k.cx) / k.fx;
    let lim_y = 1.3 * k.cy.max(k.height as f64 - k.cy) / k.fy;
    let (jx, jy) = ((x / z).clamp(-lim_x, lim_x) * z, (y / z).clamp(-lim_y, lim_y) * z);
    let j = nalgebra::Matrix2x3::new(k.fx / z, 0.0, -k.fx * jx / (z * z), 0.0, k.fy / z, -k.fy * jy / (z * z));
    let cov = j * cov_cam * j.transpose();
    let (a, b, c) = (cov[(0, 0)] + COVARIANCE_DILATION, cov[(0, 1)], cov[(1, 1)] + COVARIANCE_DILATION);
    let det = a * c - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = [c / det, -b / det, a / det];
    let mean = [k.fx * x / z + k.cx, k.fy * y / z + k.cy];
    // footprint where opacity·exp(-q/2) stays above the skip threshold
    let q_max = 2.0 * (opacity / MIN_SPLAT_ALPHA).ln();
    let rx = (q_max * a).sqrt();
    let ry = (q_max * c).sqrt();
    let lo_x = (mean[0] - rx - 0.5).floor().max(0.0);
    let hi_x = (mean[0] + rx - 0.5).ceil() + 1.0;
    let lo_y = (mean[1] - ry - 0.5).floor().max(0.0);
    let hi_y = (mean[1] + ry - 0.5).ceil() + 1.0;
    if !(hi_x > 0.0 && hi_y > 0.0 && lo_x < w as f64 && lo_y < h as f64) {
        return None;
    }
    let x_range = (lo_x as usize, (hi_x as usize).min(w));
    let y_range = (lo_y as usize, (hi_y as usize).min(h));
    let color = scene.dc_colors[i];
    let ls = scene.log_scales[i];
    Some(Splat {
        mean,
        conic,
        opacity,
        color,
        depth: z,
        sort_key: [z, x, y, opacity, color[0], color[1], color[2], ls.x, ls.y + ls.z],
        x_range,
        y_range,
    })
}

/// Indices of the `max_count` highest-certainty primitives (all when
/// `max_count` is 0 or at least the scene size), ties to the lower index.
pub fn primitive_budget(scene: &GaussianScene, max_count: usize) -> Vec<usize> {
    let n = scene.count();
    if max_count == 0 || max_count >= n {
        return (0..n).collect();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let cert: Vec<f64> = (0..n).map(|i| primitive_certainty(scene, i, DEFAULT_EPSILON)).collect();
    idx.sort_by(|&a, &b| cert[b].total_cmp(&cert[a]).then(a.cmp(&b)));
    idx.truncate(max_count);
    idx.sort_unstable();
    idx
}

/// Renders color, depth and alpha. `max_count = 0` considers every primitive.
pub fn render(scene: &GaussianScene, pose: &CameraPose, max_count: usize) -> RenderOutput {
    let (w, h) = (pose.intrinsics.width as usize, pose.intrinsics.height as usize);
    let mut splats: Vec<Splat> =
        primitive_budget(scene, max_count).into_iter().filter_map(|i| project_splat(scene, i, pose)).collect();
    splats.sort_by(|a, b| {
        a.sort_key.iter().zip(&b.sort_key).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut color = vec![[0.0f32; 3]; w * h];
    let mut depth = vec![0.0f32; w * h];
    let mut alpha = vec![0.0f32; w * h];
    let band_len = ROW_BAND * w.max(1);
    color
        .par_chunks_mut(band_len)
        .zip(depth.par_chunks_mut(band_len))
        .zip(alpha.par_chunks_mut(band_len))
        .enumerate()
        .for_each(|(band, ((color, depth), alpha))| {
            let y0 = band * ROW_BAND;
            let y1 = (y0 + ROW_BAND).min(h);
            let local: Vec<&Splat> = splats.iter().filter(|s| s.y_range.0 < y1 && s.y_range.1 > y0).collect();
            for y in y0..y1 {
                let py = y as f64 + 0.5;
                for x in 0..w {
                    let px = x as f64 + 0.5;
                    let mut t = 1.0f64;
                    let mut rgb = [0.0f64; 3];
                    let mut z_acc = 0.0;
                    let mut saturated = false;
                    for s in &local {
                        if x < s.x_range.0 || x >= s.x_range.1 || y < s.y_range.0 || y >= s.y_range.1 {
                            continue;
                        }
                        let dx = px - s.mean[0];
                        let dy = py - s.mean[1];
                        let power = -0.5 * (s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy);
                        if power > 0.0 {
                            continue;
                        }
                        let a = (s.opacity * power.exp()).min(1.0);
                        if a < MIN_SPLAT_ALPHA {
                            continue;
                        }
                        let weight = a * t;
                        for c in 0..3 {
                            rgb[c] += s.color[c] * weight;
                        }
                        z_acc += s.depth * weight;
                        t *= 1.0 - a;
                        if t < TRANSMITTANCE_CUTOFF {
                            saturated = true;
                            break;
                        }
                    }
                    let i = (y - y0) * w + x;
                    let acc = 1.0 - t;
                    // a saturated pixel counts as fully opaque, which keeps
                    // accumulated alpha monotone in the primitive set
                    alpha[i] = if saturated { 1.0 } else { acc.clamp(0.0, 1.0) as f32 };
                    if acc > 1e-6 {
                        depth[i] = (z_acc / acc) as f32;
                    }
                    color[i] = rgb.map(|c| c.clamp(0.0, 1.0) as f32);
                }
            }
        });
    RenderOutput { color: RgbImage { width: w, height: h, pixels: color }, depth, alpha }
}

/// Fraction of pixels whose accumulated alpha is below `alpha_floor`.
pub fn black_pixel_ratio(out: &RenderOutput, alpha_floor: f64) -> f64 {
    if out.alpha.is_empty() {
        return 1.0;
    }
    out.alpha.iter().filter(|&&a| (a as f64) < alpha_floor).count() as f64 / out.alpha.len() as f64
}

/// Central-crop depth spread `(P_hi - P_lo) / scene_diag`; 0 when under 1% of
/// the crop carries depth.
pub fn depth_range_score(out: &RenderOutput, crop: f64, lo: f64, hi: f64, scene_diag: f64) -> f64 {
    let (w, h) = (out.width(), out.height());
    let cw = ((w as f64 * crop).round() as usize).clamp(1, w.max(1));
    let ch = ((h as f64 * crop).round() as usize).clamp(1, h.max(1));
    let (x0, y0) = ((w - cw) / 2, (h - ch) / 2);
    let mut valid = Vec::with_capacity(cw * ch);
    for y in y0..y0 + ch {
        for x in x0..x0 + cw {
            let d = out.depth[y * w + x] as f64;
            if d > 0.0 {
                valid.push(d);
            }
        }
    }
    if valid.is_empty() || (valid.len() as f64) < 0.01 * (cw * ch) as f64 || !(scene_diag > 0.0) {
        return 0.0;
    }
    valid.sort_by(f64::total_cmp);
    (quantile_sorted(&valid, hi / 100.0) - quantile_sorted(&valid, lo / 100.0)).max(0.0) / scene_diag
}

/// Pluggable no-reference quality score in [0, 1], lower is better.
pub trait QualityScorer: Send + Sync {
    fn score(&self, image: &RgbImage) -> f64;
    fn name(&self) -> &'static str;
}

/// Default scorer: `1 - clamp(0.6·sharpness + 0.4·naturalness)`.
///
/// Sharpness is the Laplacian variance of luma mapped through
/// `v / (v + sharpness_scale)`. Naturalness is `exp(-|κ - 3| / kurtosis_tolerance)`
/// for the kurtosis κ of mean-subtracted contrast-normalized luma (7×7
/// Gaussian, σ = 7/6, stabilizer 1/255); a structureless image scores 0 on both.
///
/// The defaults are calibrated on 256×192 splat renders, which are far
/// smoother than photographs: a typical room view lands near the 0.5 gate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NaturalnessScorer {
    pub sharpness_scale: f64,
    pub kurtosis_tolerance: f64,
}

impl Default for NaturalnessScorer {
    fn default() -> Self {
        Self { sharpness_scale: 5e-6, kurtosis_tolerance: 6.0 }
    }
}

impl NaturalnessScorer {
    pub fn sharpness(&self, luma: &[f64], w: usize, h: usize) -> f64 {
        if w < 3 || h < 3 {
            return 0.0;
        }
        let mut lap = Vec::with_capacity((w - 2) * (h - 2));
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let c = luma[y * w + x];
                lap.push(luma[y * w + x - 1] + luma[y * w + x + 1] + luma[(y - 1) * w + x] + luma[(y + 1) * w + x] - 4.0 * c);
            }
        }
        let mean = lap.iter().sum::<f64>() / lap.len() as f64;
        let var = lap.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / lap.len() as f64;
        var / (var + self.sharpness_scale)
    }

    pub fn naturalness(&self, luma: &[f64], w: usize, h: usize) -> f64 {
        let k = gaussian_kernel(7, 7.0 / 6.0);
        let mu = filter_same(luma, w, h, &k);
        let sq: Vec<f64> = luma.iter().map(|v| v * v).collect();
        let mu_sq = filter_same(&sq, w, h, &k);
        let mscn: Vec<f64> = (0..luma.len())
            .map(|i| (luma[i] - mu[i]) / ((mu_sq[i] - mu[i] * mu[i]).abs().sqrt() + 1.0 / 255.0))
            .collect();
        let n = mscn.len() as f64;
        let mean = mscn.iter().sum::<f64>() / n;
        let m2 = mscn.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if m2 < 1e-12 {
            return 0.0;
        }
        let m4 = mscn.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        let kurt = m4 / (m2 * m2);
        (-(kurt - 3.0).abs() / self.kurtosis_tolerance).exp()
    }
}

impl QualityScorer for NaturalnessScorer {
    fn score(&self, image: &RgbImage) -> f64 {
        if image.pixels.is_empty() {
            return 1.0;
        }
        let luma = image.luminance();
        let s = self.sharpness(&luma, image.width, image.height);
        let n = self.naturalness(&luma, image.width, image.height);
        1.0 - (0.6 * s + 0.4 * n).clamp(0.0, 1.0)
    }

    fn name(&self) -> &'static str {
        "naturalness"
    }
}

/// Convenience wrapper around the default scorer.
pub fn quality_score(image: &RgbImage) -> f64 {
    NaturalnessScorer::default().score(image)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub black_pixel_ratio: f64,
    pub depth_range_score: f64,
    pub quality_score: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GateConfig {
    pub quality_max: f64,
    pub depth_range_min: f64,
    pub black_ratio_max: f64,
    pub alpha_floor: f64,
    pub depth_crop: f64,
    pub depth_lo_percentile: f64,
    pub depth_hi_percentile: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self {
            quality_max: 0.5,
            depth_range_min: 0.1,
            black_ratio_max: 0.15,
            alpha_floor: 0.05,
            depth_crop: 0.7,
            depth_lo_percentile: 5.0,
            depth_hi_percentile: 95.0,
        }
    }
}

pub fn assess(out: &RenderOutput, scene_diag: f64, scorer: &dyn QualityScorer, gate: &GateConfig) -> QualityReport {
    let black = black_pixel_ratio(out, gate.alpha_floor);
    let depth =
        depth_range_score(out, gate.depth_crop, gate.depth_lo_percentile, gate.depth_hi_percentile, scene_diag);
    let quality = scorer.score(&out.color);
    QualityReport {
        black_pixel_ratio: black,
        depth_range_score: depth,
        quality_score: quality,
        passed: quality < gate.quality_max && depth > gate.depth_range_min && black < gate.black_ratio_max,
    }
}

/// Pixel of maximal alpha, ties to the first in row-major order.
pub fn alpha_argmax(out: &RenderOutput) -> (usize, usize) {
    let mut best = 0;
    for (i, a) in out.alpha.iter().enumerate() {
        if *a > out.alpha[best] {
            best = i;
        }
    }
    (best % out.width(), best / out.width())
}

/// Camera-space depth of a world point.
pub fn camera_depth(pose: &CameraPose, p: &Vec3) -> f64 {
    pose.to_camera(p).z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Quat;
    use crate::scene::{Intrinsics, ViewKind};
    use proptest::prelude::*;

    fn cam(w: u32, h: u32) -> CameraPose {
        let k = Intrinsics { fx: 100.0, fy: 100.0, cx: w as f64 / 2.0, cy: h as f64 / 2.0, width: w, height: h };
        CameraPose::from_center(0, ViewKind::Training, Quat::identity(), Vec3::zeros(), k, 0.01, 100.0)
    }

    fn scene(items: &[(Vec3, f64, f64, [f64; 3])]) -> GaussianScene {
        GaussianScene::new(
            items.iter().map(|i| i.0).collect(),
            items.iter().map(|i| Vec3::repeat(i.1.ln())).collect(),
            vec![Quat::identity(); items.len()],
            items.iter().map(|i| i.2).collect(),
            items.iter().map(|i| i.3).collect(),
        )
        .unwrap()
    }

    #[test]
    fn on_axis_gaussian_peaks_at_principal_point() {
        let s = scene(&[(Vec3::new(0.0, 0.0, 5.0), 0.05, 0.9, [1.0, 0.5, 0.2])]);
        let out = render(&s, &cam(64, 48), 0);
        let (x, y) = alpha_argmax(&out);
        assert!((x as f64 + 0.5 - 32.0).abs() <= 1.0 && (y as f64 + 0.5 - 24.0).abs() <= 1.0);
        assert!((out.depth[y * 64 + x] as f64 - 5.0).abs() < 1e-3);
        assert!(out.alpha.iter().all(|a| (0.0..=1.0).contains(a)));
    }

    #[test]
    fn front_gaussian_occludes() {
        let s = scene(&[
            (Vec3::new(0.0, 0.0, 8.0), 0.5, 1.0, [0.0, 0.0, 1.0]),
            (Vec3::new(0.0, 0.0, 4.0), 0.5, 1.0, [1.0, 0.0, 0.0]),
        ]);
        let mut pose = cam(32, 32);
        // principal point on a pixel center so the peak opacity is exactly 1
        pose.intrinsics.cx = 16.5;
        pose.intrinsics.cy = 16.5;
        let out = render(&s, &pose, 0);
        let i = 16 * 32 + 16;
        assert_eq!(out.alpha[i], 1.0);
        assert!((out.color.pixels[i][0] - 1.0).abs() < 1e-4 && out.color.pixels[i][2] < 1e-4);
        assert!((out.depth[i] - 4.0).abs() < 1e-3);
    }

    #[test]
    fn empty_view_is_black() {
        let s = scene(&[(Vec3::new(0.0, 0.0, -5.0), 0.5, 1.0, [1.0; 3])]);
        let out = render(&s, &cam(16, 12), 0);
        assert!(out.alpha.iter().all(|&a| a == 0.0));
        assert_eq!(black_pixel_ratio(&out, 0.05), 1.0);
        assert_eq!(depth_range_score(&out, 0.7, 5.0, 95.0, 1.0), 0.0);
    }

    fn synthetic_output(w: usize, h: usize, alpha: impl Fn(usize, usize) -> f32, depth: impl Fn(usize, usize) -> f32) -> RenderOutput {
        let mut a = Vec::new();
        let mut d = Vec::new();
        for y in 0..h {
            for x in 0..w {
                a.push(alpha(x, y));
                d.push(depth(x, y));
            }
        }
        RenderOutput { color: RgbImage::new(w, h), depth: d, alpha: a }
    }

    #[test]
    fn black_ratio_counts() {
        let full = synthetic_output(10, 8, |_, _| 1.0, |_, _| 1.0);
        assert_eq!(black_pixel_ratio(&full, 0.05), 0.0);
        let half = synthetic_output(10, 8, |x, _| if x < 5 { 1.0 } else { 0.0 }, |_, _| 1.0);
        let oracle = half.alpha.iter().filter(|&&a| a < 0.05).count() as f64 / 80.0;
        assert!((black_pixel_ratio(&half, 0.05) - oracle).abs() < 1.0 / 80.0);
        assert!((black_pixel_ratio(&half, 0.05) - 0.5).abs() < 1.0 / 80.0);
    }

    #[test]
    fn depth_range_on_ramp() {
        let diag = 4.0;
        let (w, h) = (200, 100);
        let out = synthetic_output(w, h, |_, _| 1.0, |x, y| {
            // crop-local ramp covering [0, diag] over the 70% window
            let (x0, y0, cw, ch) = (30usize, 15usize, 140usize, 70usize);
            if x < x0 || y < y0 || x >= x0 + cw || y >= y0 + ch {
                return 0.0;
            }
            let k = (y - y0) * cw + (x - x0);
            (diag * (k as f64 + 0.5) / (cw * ch) as f64) as f32
        });
        let score = depth_range_score(&out, 0.7, 5.0, 95.0, diag);
        assert!((score - 0.9).abs() < 0.02, "{score}");
        let flat = synthetic_output(w, h, |_, _| 1.0, |_, _| 2.0);
        assert_eq!(depth_range_score(&flat, 0.7, 5.0, 95.0, diag), 0.0);
    }

    fn checkerboard(n: usize, cell: usize) -> RgbImage {
        RgbImage::from_fn(n, n, |x, y| if (x / cell + y / cell) % 2 == 0 { [0.9; 3] } else { [0.1; 3] })
    }

    fn box_blur(img: &RgbImage, r: isize) -> RgbImage {
        RgbImage::from_fn(img.width, img.height, |x, y| {
            let mut acc = [0.0f32; 3];
            let mut n = 0.0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let xx = (x as isize + dx).clamp(0, img.width as isize - 1) as usize;
                    let yy = (y as isize + dy).clamp(0, img.height as isize - 1) as usize;
                    let p = img.get(xx, yy);
                    for c in 0..3 {
                        acc[c] += p[c];
                    }
                    n += 1.0;
                }
            }
            acc.map(|v| v / n)
        })
    }

    #[test]
    fn quality_heuristic_contract() {
        let gray = RgbImage::from_fn(32, 32, |_, _| [0.5; 3]);
        assert!(quality_score(&gray) >= 0.9);
        let sharp = checkerboard(64, 8);
        assert_eq!(quality_score(&sharp), quality_score(&sharp.clone()));
        let blurred = box_blur(&sharp, 4);
        assert!(quality_score(&sharp) < quality_score(&blurred));
    }

    #[test]
    fn gate_invariant() {
        let out = synthetic_output(8, 8, |_, _| 1.0, |x, _| 1.0 + x as f32);
        let r = assess(&out, 4.0, &NaturalnessScorer::default(), &GateConfig::default());
        assert_eq!(r.passed, r.quality_score < 0.5 && r.depth_range_score > 0.1 && r.black_pixel_ratio < 0.15);
    }

    #[test]
    fn budget_keeps_highest_certainty() {
        let s = scene(&[
            (Vec3::new(0.0, 0.0, 5.0), 1.0, 0.5, [1.0; 3]),
            (Vec3::new(0.0, 0.0, 6.0), 0.1, 0.5, [1.0; 3]),
            (Vec3::new(0.0, 0.0, 7.0), 0.5, 0.5, [1.0; 3]),
        ]);
        assert_eq!(primitive_budget(&s, 2), vec![1, 2]);
        assert_eq!(primitive_budget(&s, 0), vec![0, 1, 2]);
    }

    fn arb_item() -> impl Strategy<Value = (Vec3, f64, f64, [f64; 3])> {
        (-1.0..1.0f64, -1.0..1.0f64, 2.0..8.0f64, 0.05..0.6f64, 0.05..1.0f64, 0.0..1.0f64)
            .prop_map(|(x, y, z, s, o, c)| (Vec3::new(x, y, z), s, o, [c, 1.0 - c, 0.5]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn adding_a_primitive_never_lowers_alpha(items in prop::collection::vec(arb_item(), 1..8), extra in arb_item()) {
            let base = render(&scene(&items), &cam(24, 20), 0);
            let mut more = items.clone();
            more.push(extra);
            let grown = render(&scene(&more), &cam(24, 20), 0);
            for (a, b) in base.alpha.iter().zip(&grown.alpha) {
                prop_assert!(b >= a);
            }
        }

        #[test]
        fn input_order_does_not_matter(items in prop::collection::vec(arb_item(), 2..8)) {
            let a = render(&scene(&items), &cam(24, 20), 0);
            let mut rev = items.clone();
            rev.reverse();
            let b = render(&scene(&rev), &cam(24, 20), 0);
            for (p, q) in a.color.pixels.iter().zip(&b.color.pixels) {
                for c in 0..3 {
                    prop_assert!((p[c] - q[c]).abs() <= 1e-6);
                }
            }
            for (x, y) in a.alpha.iter().zip(&b.alpha) {
                prop_assert!((x - y).abs() <= 1e-6);
            }
        }

        #[test]
        fn outputs_stay_in_range(items in prop::collection::vec(arb_item(), 1..10)) {
            let out = render(&scene(&items), &cam(24, 20), 0);
            for (i, a) in out.alpha.iter().enumerate() {
                prop_assert!((0.0..=1.0).contains(a));
                prop_assert!(out.depth[i] >= 0.0);
                prop_assert!(out.color.pixels[i].iter().all(|c| (0.0..=1.0).contains(c)));
            }
        }
    }
}
