//! From candidate pool to final free views: feasibility, certainty NMS,
//! render gating with pose rectification, and the final quality quota.

use std::collections::{BTreeSet, HashSet};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{quantile_sorted, slerp};
use crate::graph::{select_reference, select_reference_for_pose, ViewGraph};
use crate::grid::CertaintyGrid;
use crate::render::{assess, render, GateConfig, QualityReport, QualityScorer};
use crate::scene::{CameraPose, GaussianScene, PoseRecord, SceneBounds, SceneError};
use crate::trajectory::{CandidatePose, CandidateRecord};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid selector config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectorConfig {
    pub nms_wiou_threshold: f64,
    pub nms_target: usize,
    pub quality_max: f64,
    pub depth_range_min: f64,
    pub black_ratio_max: f64,
    pub rectify_steps: Vec<f64>,
    pub final_target: usize,
    pub occupancy_reject_percentile: f64,
    pub alpha_floor: f64,
    pub render_width: u32,
    pub render_height: u32,
    /// Primitive budget per gating render; 0 renders everything.
    pub max_primitives: usize,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            nms_wiou_threshold: 0.7,
            nms_target: 500,
            quality_max: 0.5,
            depth_range_min: 0.1,
            black_ratio_max: 0.15,
            rectify_steps: vec![0.7, 0.5, 0.3],
            final_target: 100,
            occupancy_reject_percentile: 90.0,
            alpha_floor: 0.05,
            render_width: 256,
            render_height: 192,
            max_primitives: 0,
        }
    }
}

impl SelectorConfig {
    pub fn validate(&self) -> Result<(), SelectError> {
        let bad = |m: &str| Err(SelectError::InvalidConfig(m.into()));
        if !(self.nms_wiou_threshold > 0.0 && self.nms_wiou_threshold <= 1.0) {
            return bad("nms_wiou_threshold must lie in (0, 1]");
        }
        if self.rectify_steps.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
            return bad("rectify_steps must lie in (0, 1)");
        }
        if self.rectify_steps.windows(2).any(|w| w[1] >= w[0]) {
            return bad("rectify_steps must be strictly decreasing");
        }
        if !(0.0..=100.0).contains(&self.occupancy_reject_percentile) {
            return bad("occupancy_reject_percentile must lie in [0, 100]");
        }
        if !(0.0..=1.0).contains(&self.alpha_floor) {
            return bad("alpha_floor must lie in [0, 1]");
        }
        if self.render_width == 0 || self.render_height == 0 {
            return bad("render size must be positive");
        }
        Ok(())
    }

    pub fn gate(&self) -> GateConfig {
        GateConfig {
            quality_max: self.quality_max,
            depth_range_min: self.depth_range_min,
            black_ratio_max: self.black_ratio_max,
            alpha_floor: self.alpha_floor,
            ..GateConfig::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewStatus {
    Selected,
    RejectedFeasibility,
    RejectedNms,
    RejectedQuality,
    RectifiedThenSelected,
    RectifiedThenRejected,
}

impl ViewStatus {
    pub fn is_selected(self) -> bool {
        matches!(self, Self::Selected | Self::RectifiedThenSelected)
    }

    pub fn is_rectified(self) -> bool {
        matches!(self, Self::RectifiedThenSelected | Self::RectifiedThenRejected)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectifyAttempt {
    pub step: f64,
    pub quality: QualityReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenderPaths {
    pub color: String,
    pub depth: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeViewRecord {
    pub candidate: CandidateRecord,
    /// Pose after rectification (the candidate pose when none was needed).
    pub pose: PoseRecord,
    pub status: ViewStatus,
    /// Visible certainty of the final pose.
    pub score: f64,
    pub quality: Option<QualityReport>,
    pub rectify_history: Vec<RectifyAttempt>,
    pub reference_id: Option<u32>,
    pub render_paths: Option<RenderPaths>,
}

impl FreeViewRecord {
    pub fn id(&self) -> u32 {
        self.candidate.id
    }

    pub fn final_pose(&self) -> Result<CameraPose, SceneError> {
        CameraPose::try_from(&self.pose)
    }

    fn unrendered(c: &CandidatePose, status: ViewStatus, score: f64) -> Self {
        Self {
            candidate: CandidateRecord::from(c),
            pose: PoseRecord::from(&c.pose),
            status,
            score,
            quality: None,
            rectify_history: Vec::new(),
            reference_id: None,
            render_paths: None,
        }
    }
}

/// Rejects candidates outside `bounds` or sitting in a voxel whose certainty
/// exceeds the configured percentile of occupied cells.
/// Returns `(feasible, rejected)` in input order.
pub fn feasibility_filter(
    pool: &[CandidatePose],
    grid: &CertaintyGrid,
    bounds: &SceneBounds,
    config: &SelectorConfig,
) -> (Vec<CandidatePose>, Vec<CandidatePose>) {
    let mut values: Vec<f64> = grid.cells().iter().map(|c| c.1).collect();
    values.sort_by(f64::total_cmp);
    let limit = if values.is_empty() {
        f64::INFINITY
    } else {
        quantile_sorted(&values, config.occupancy_reject_percentile / 100.0)
    };
    pool.iter().cloned().partition(|c| {
        let center = c.pose.center();
        if !bounds.contains(&center) {
            return false;
        }
        let occupancy = grid.voxel_of(&center).map_or(0.0, |v| grid.certainty(v));
        occupancy <= limit
    })
}

/// Greedy suppression in descending score (ties to the lower id) against
/// training ∪ accepted. Returns accepted ids in acceptance order.
pub fn nms_select(
    graph: &ViewGraph,
    training_ids: &BTreeSet<u32>,
    candidate_ids: &[u32],
    config: &SelectorConfig,
) -> Vec<u32> {
    let mut order: Vec<(u32, f64)> = candidate_ids.iter().map(|&id| (id, graph.score(id).unwrap_or(0.0))).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let thr = config.nms_wiou_threshold;
    // stored edges hold every overlap at or above the cutoff exactly
    let use_edges = thr >= graph.edge_cutoff();
    let mut selected: HashSet<u32> = training_ids.iter().copied().collect();
    let mut selected_list: Vec<u32> = training_ids.iter().copied().collect();
    let mut accepted = Vec::new();
    for (id, _) in order {
        if accepted.len() >= config.nms_target {
            break;
        }
        if selected.contains(&id) {
            continue;
        }
        let redundant = if use_edges {
            graph.neighbors(id).iter().any(|(n, w)| *w >= thr && selected.contains(n))
        } else {
            selected_list.iter().any(|&s| graph.wiou_exact(id, s) >= thr)
        };
        if !redundant {
            accepted.push(id);
            selected.insert(id);
            selected_list.push(id);
        }
    }
    accepted
}

/// Moves `candidate` toward `anchor`, keeping fraction `step` of the offset in
/// camera center and geodesic rotation.
pub fn rectify_pose(candidate: &CameraPose, anchor: &CameraPose, step: f64) -> CameraPose {
    if step == 1.0 {
        return candidate.clone();
    }
    let a = anchor.center();
    let center = a + (candidate.center() - a) * step;
    let rotation = slerp(&anchor.rotation, &candidate.rotation, step);
    CameraPose::from_center(candidate.id, candidate.kind, rotation, center, candidate.intrinsics, candidate.near, candidate.far)
}

/// Training pose with the nearest camera center, ties to the lower id.
pub fn nearest_training<'a>(pose: &CameraPose, training: &'a [CameraPose]) -> Option<&'a CameraPose> {
    let c = pose.center();
    training.iter().min_by(|a, b| {
        (a.center() - c).norm_squared().total_cmp(&(b.center() - c).norm_squared()).then(a.id.cmp(&b.id))
    })
}

/// Everything gating needs besides the views themselves.
pub struct GateContext<'a> {
    pub scene: &'a GaussianScene,
    pub grid: &'a CertaintyGrid,
    pub graph: &'a ViewGraph,
    pub training: &'a [CameraPose],
    pub scene_diag: f64,
    pub scorer: &'a dyn QualityScorer,
}

/// Renders and gates one pose at the configured resolution.
pub fn gate_pose(pose: &CameraPose, ctx: &GateContext<'_>, config: &SelectorConfig) -> QualityReport {
    let small = pose.with_resolution(config.render_width, config.render_height);
    let out = render(ctx.scene, &small, config.max_primitives);
    assess(&out, ctx.scene_diag, ctx.scorer, &config.gate())
}

fn gate_one(c: &CandidatePose, ctx: &GateContext<'_>, config: &SelectorConfig, training_ids: &BTreeSet<u32>) -> FreeViewRecord {
    let score = ctx.graph.score(c.pose.id).unwrap_or(0.0);
    let mut record = FreeViewRecord::unrendered(c, ViewStatus::RejectedQuality, score);
    let report = gate_pose(&c.pose, ctx, config);
    record.quality = Some(report);
    if report.passed {
        if let Ok(r) = select_reference(ctx.graph, c.pose.id, training_ids) {
            record.status = ViewStatus::Selected;
            record.reference_id = Some(r);
            return record;
        }
    }
    let Some(anchor) = nearest_training(&c.pose, ctx.training) else {
        return record;
    };
    for &step in &config.rectify_steps {
        let pose = rectify_pose(&c.pose, anchor, step);
        let report = gate_pose(&pose, ctx, config);
        record.rectify_history.push(RectifyAttempt { step, quality: report });
        record.quality = Some(report);
        record.pose = PoseRecord::from(&pose);
        record.status = ViewStatus::RectifiedThenRejected;
        if let Some((_, s)) = ctx.graph.mask_for(&pose, ctx.grid) {
            record.score = s;
        }
        if report.passed {
            if let Ok(r) = select_reference_for_pose(ctx.graph, &pose, ctx.grid, training_ids) {
                record.status = ViewStatus::RectifiedThenSelected;
                record.reference_id = Some(r);
                break;
            }
        }
    }
    record
}

/// Gates NMS survivors (rectifying failures), then keeps the `final_target`
/// best quality scores among the passing views. Output follows input order.
pub fn gate_and_rectify(accepted: &[CandidatePose], ctx: &GateContext<'_>, config: &SelectorConfig) -> Vec<FreeViewRecord> {
    let training_ids: BTreeSet<u32> = ctx.training.iter().map(|p| p.id).collect();
    let mut records: Vec<FreeViewRecord> =
        accepted.par_iter().map(|c| gate_one(c, ctx, config, &training_ids)).collect();
    apply_final_quota(&mut records, config.final_target);
    records
}

/// Keeps the `final_target` selected records with the lowest quality score
/// (ties to the lower id); every other selected record is demoted.
pub fn apply_final_quota(records: &mut [FreeViewRecord], final_target: usize) {
    let mut passing: Vec<usize> = (0..records.len()).filter(|&i| records[i].status.is_selected()).collect();
    if passing.len() <= final_target {
        return;
    }
    let q = |i: usize| records[i].quality.map_or(f64::INFINITY, |r| r.quality_score);
    passing.sort_by(|&a, &b| q(a).total_cmp(&q(b)).then(records[a].id().cmp(&records[b].id())));
    for &i in &passing[final_target..] {
        let r = &mut records[i];
        r.status = if r.status.is_rectified() { ViewStatus::RectifiedThenRejected } else { ViewStatus::RejectedQuality };
        r.reference_id = None;
    }
}

/// Funnel sizes through selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub pool: usize,
    pub feasible: usize,
    pub nms: usize,
    pub gated: usize,
    pub r#final: usize,
}

pub struct SelectionOutcome {
    /// One record per pool candidate, in pool order.
    pub records: Vec<FreeViewRecord>,
    pub counts: SelectionCounts,
}

/// Runs NMS, gating and the final quota over an already built graph whose
/// nodes cover training ∪ `feasible`.
pub fn select_free_views(
    pool: &[CandidatePose],
    feasible: &[CandidatePose],
    ctx: &GateContext<'_>,
    config: &SelectorConfig,
) -> SelectionOutcome {
    let training_ids: BTreeSet<u32> = ctx.training.iter().map(|p| p.id).collect();
    let feasible_ids: HashSet<u32> = feasible.iter().map(|c| c.pose.id).collect();
    let candidate_ids: Vec<u32> = feasible.iter().map(|c| c.pose.id).collect();
    let accepted_ids = nms_select(ctx.graph, &training_ids, &candidate_ids, config);
    let accepted_set: HashSet<u32> = accepted_ids.iter().copied().collect();
    let accepted: Vec<CandidatePose> = feasible.iter().filter(|c| accepted_set.contains(&c.pose.id)).cloned().collect();
    let gated = gate_and_rectify(&accepted, ctx, config);
    let gated_count = gated.iter().filter(|r| r.status.is_selected() || r.quality.is_some_and(|q| q.passed)).count();
    let mut by_id: std::collections::HashMap<u32, FreeViewRecord> = gated.into_iter().map(|r| (r.id(), r)).collect();
    let records: Vec<FreeViewRecord> = pool
        .iter()
        .map(|c| {
            let id = c.pose.id;
            if let Some(r) = by_id.remove(&id) {
                r
            } else if feasible_ids.contains(&id) {
                FreeViewRecord::unrendered(c, ViewStatus::RejectedNms, ctx.graph.score(id).unwrap_or(0.0))
            } else {
                FreeViewRecord::unrendered(c, ViewStatus::RejectedFeasibility, 0.0)
            }
        })
        .collect();
    let counts = SelectionCounts {
        pool: pool.len(),
        feasible: feasible.len(),
        nms: accepted_ids.len(),
        gated: gated_count,
        r#final: records.iter().filter(|r| r.status.is_selected()).count(),
    };
    info!(
        "selection funnel: pool {} -> feasible {} -> nms {} -> gated {} -> final {}",
        counts.pool, counts.feasible, counts.nms, counts.gated, counts.r#final
    );
    SelectionOutcome { records, counts }
}

/// Input contract for an external image rectifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectifyPair {
    pub freeview_id: u32,
    pub reference_training_id: u32,
    pub freeview_image: String,
    pub reference_image: String,
}

pub fn freeview_image_name(id: u32) -> String {
    format!("renders/fv_{id:05}.png")
}

pub fn freeview_depth_name(id: u32) -> String {
    format!("renders/fv_{id:05}.pfm")
}

pub fn training_image_name(id: u32) -> String {
    format!("renders/train_{id:05}.png")
}

pub fn rectify_pairs(records: &[FreeViewRecord]) -> Vec<RectifyPair> {
    records
        .iter()
        .filter(|r| r.status.is_selected())
        .filter_map(|r| {
            r.reference_id.map(|t| RectifyPair {
                freeview_id: r.id(),
                reference_training_id: t,
                freeview_image: freeview_image_name(r.id()),
                reference_image: training_image_name(t),
            })
        })
        .collect()
}
