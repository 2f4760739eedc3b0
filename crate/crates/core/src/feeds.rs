//! Downstream training artifacts: curriculum batches driven by the view
//! graph, the pseudo-ground-truth injection schedule and the free-view loss.

use std::collections::{BTreeSet, HashMap};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::ViewGraph;
use crate::image::{filter_valid, gaussian_kernel, RgbImage};
use crate::select::FreeViewRecord;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FeedError {
    #[error("no node has enough neighbors for a batch of {0}")]
    InsufficientNeighbors(usize),
    #[error("sequence of {len} views cannot hold a batch at frame distance up to {hi}")]
    SequenceTooShort { len: usize, hi: usize },
    #[error("image shapes differ: {0}x{1} vs {2}x{3}")]
    ShapeMismatch(usize, usize, usize, usize),
    #[error("loss weight {0} outside [0, 1]")]
    InvalidWeight(f64),
    #[error("free view {0} is not selected")]
    NotSelected(u32),
    #[error("invalid curriculum config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurriculumConfig {
    pub inputs_per_batch: usize,
    pub targets_per_batch: usize,
    pub warmup_iters: u64,
    pub total_iters: u64,
    pub frame_dist_warm: (usize, usize),
    pub frame_dist_full: (usize, usize),
    pub graph_probability: f64,
    pub late_stage: LateStage,
    pub seed: u64,
}

/// How post-warm-up graph batches pick neighbors of the start node.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LateStage {
    /// Random draw with weight `max(1 - WIoU, 0.05)`.
    #[default]
    Weighted,
    /// The lowest-WIoU neighbors, ties to the lower id.
    Separated,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            inputs_per_batch: 4,
            targets_per_batch: 2,
            warmup_iters: 3000,
            total_iters: 20000,
            frame_dist_warm: (10, 20),
            frame_dist_full: (15, 40),
            graph_probability: 0.5,
            late_stage: LateStage::Weighted,
            seed: 0,
        }
    }
}

impl CurriculumConfig {
    pub fn batch_size(&self) -> usize {
        self.inputs_per_batch + self.targets_per_batch
    }

    pub fn validate(&self) -> Result<(), FeedError> {
        let bad = |m: &str| Err(FeedError::InvalidConfig(m.into()));
        if self.inputs_per_batch == 0 || self.targets_per_batch == 0 {
            return bad("batches need at least one input and one target");
        }
        if self.warmup_iters > self.total_iters {
            return bad("warmup_iters exceeds total_iters");
        }
        for (lo, hi) in [self.frame_dist_warm, self.frame_dist_full] {
            if lo == 0 || lo > hi {
                return bad("frame distance ranges must satisfy 1 <= lo <= hi");
            }
        }
        if !(0.0..=1.0).contains(&self.graph_probability) {
            return bad("graph_probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Frame-distance bounds at `iteration`, linear from the warm range to the
    /// full range over the warm-up, rounded to integers.
    pub fn frame_range(&self, iteration: u64) -> (usize, usize) {
        let t = if self.warmup_iters == 0 { 1.0 } else { (iteration as f64 / self.warmup_iters as f64).min(1.0) };
        let lerp = |a: usize, b: usize| (a as f64 + t * (b as f64 - a as f64)).round() as usize;
        (lerp(self.frame_dist_warm.0, self.frame_dist_full.0), lerp(self.frame_dist_warm.1, self.frame_dist_full.1))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSource {
    Graph,
    FrameDistance,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumBatch {
    pub iteration: u64,
    pub input_ids: Vec<u32>,
    pub target_ids: Vec<u32>,
    pub source: BatchSource,
}

/// Floor on the late-stage sampling weight `1 - WIoU`.
pub const LOW_OVERLAP_FLOOR: f64 = 0.05;

/// Node with the largest summed incident WIoU, ties to the lower id, among
/// nodes with at least `min_degree` neighbors.
pub fn select_start_node(graph: &ViewGraph, min_degree: usize) -> Option<u32> {
    let mut best: Option<(u32, f64)> = None;
    for id in graph.node_ids() {
        if graph.neighbors(id).len() < min_degree {
            continue;
        }
        let s = graph.incident_sum(id);
        if best.is_none_or(|(bid, bs)| s > bs || (s == bs && id < bid)) {
            best = Some((id, s));
        }
    }
    best.map(|b| b.0)
}

/// Stateful batch source; one per consumer thread.
pub struct CurriculumSampler<'g> {
    graph: &'g ViewGraph,
    sequence: &'g [u32],
    config: CurriculumConfig,
    rng: ChaCha8Rng,
    warm_start: Option<u32>,
    eligible: Vec<u32>,
}

impl<'g> CurriculumSampler<'g> {
    pub fn new(graph: &'g ViewGraph, sequence: &'g [u32], config: CurriculumConfig) -> Result<Self, FeedError> {
        config.validate()?;
        let need = config.batch_size() - 1;
        let eligible: Vec<u32> = graph.node_ids().into_iter().filter(|&id| graph.neighbors(id).len() >= need).collect();
        let warm_start = select_start_node(graph, need);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Self { graph, sequence, config, rng, warm_start, eligible })
    }

    pub fn sample(&mut self, iteration: u64) -> Result<CurriculumBatch, FeedError> {
        let graph_mode = self.rng.random::<f64>() < self.config.graph_probability;
        if graph_mode {
            self.graph_batch(iteration)
        } else {
            self.frame_batch(iteration)
        }
    }

    /// Start node plus `batch - 1` neighbors; inputs and targets are a random
    /// split of the members.
    pub fn graph_batch(&mut self, iteration: u64) -> Result<CurriculumBatch, FeedError> {
        let n = self.config.batch_size();
        let mut members = if iteration < self.config.warmup_iters {
            let start = self.warm_start.ok_or(FeedError::InsufficientNeighbors(n))?;
            let mut nbrs = self.graph.neighbors(start);
            nbrs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            // draw from the strongest neighbors only
            let pool_len = nbrs.len().min(2 * (n - 1)).max(n - 1);
            let pool: Vec<u32> = nbrs[..pool_len].iter().map(|e| e.0).collect();
            let mut chosen: Vec<u32> = pool.choose_multiple(&mut self.rng, n - 1).copied().collect();
            chosen.sort_unstable();
            let mut m = vec![start];
            m.extend(chosen);
            m
        } else {
            if self.eligible.is_empty() {
                return Err(FeedError::InsufficientNeighbors(n));
            }
            let start = self.eligible[self.rng.random_range(0..self.eligible.len())];
            let mut nbrs = self.graph.neighbors(start);
            let mut chosen: Vec<u32> = match self.config.late_stage {
                LateStage::Weighted => nbrs
                    .choose_multiple_weighted(&mut self.rng, n - 1, |e: &(u32, f64)| (1.0 - e.1).max(LOW_OVERLAP_FLOOR))
                    .expect("finite positive weights")
                    .map(|e| e.0)
                    .collect(),
                LateStage::Separated => {
                    nbrs.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                    nbrs[..n - 1].iter().map(|e| e.0).collect()
                }
            };
            chosen.sort_unstable();
            let mut m = vec![start];
            m.extend(chosen);
            m
        };
        members.shuffle(&mut self.rng);
        let target_ids = members.split_off(self.config.inputs_per_batch);
        Ok(CurriculumBatch { iteration, input_ids: members, target_ids, source: BatchSource::Graph })
    }

    /// Inputs inside `[p0, p0 + span]` (both ends used), targets on one side
    /// such that every input-target frame gap lies in the annealed range.
    pub fn frame_batch(&mut self, iteration: u64) -> Result<CurriculumBatch, FeedError> {
        let (ni, nt) = (self.config.inputs_per_batch, self.config.targets_per_batch);
        let (lo, hi) = self.config.frame_range(iteration);
        let len = self.sequence.len();
        let too_short = FeedError::SequenceTooShort { len, hi };
        // span of the input window, leaving room for nt targets
        let max_span = (hi + 1).checked_sub(lo + nt).ok_or(too_short.clone())?;
        if max_span + 1 < ni || len <= hi {
            return Err(too_short);
        }
        let span = self.rng.random_range(ni - 1..=max_span);
        let p0 = self.rng.random_range(0..len - hi);
        let mut inputs = vec![p0];
        if ni > 1 {
            let inner: Vec<usize> = (p0 + 1..p0 + span).collect();
            inputs.extend(inner.choose_multiple(&mut self.rng, ni - 2).copied());
            inputs.push(p0 + span);
        }
        let slots: Vec<usize> = (p0 + span + lo..=p0 + hi).collect();
        let mut targets: Vec<usize> = slots.choose_multiple(&mut self.rng, nt).copied().collect();
        // mirror so targets precede inputs half of the time
        if self.rng.random::<bool>() {
            let last = p0 + hi;
            let mirror = |p: usize| p0 + (last - p);
            inputs = inputs.into_iter().map(mirror).collect();
            targets = targets.into_iter().map(mirror).collect();
        }
        inputs.sort_unstable();
        targets.sort_unstable();
        Ok(CurriculumBatch {
            iteration,
            input_ids: inputs.iter().map(|&p| self.sequence[p]).collect(),
            target_ids: targets.iter().map(|&p| self.sequence[p]).collect(),
            source: BatchSource::FrameDistance,
        })
    }
}

/// One-shot batch draw with a caller-owned RNG seed.
pub fn sample_batch(
    iteration: u64,
    graph: &ViewGraph,
    sequence: &[u32],
    config: &CurriculumConfig,
    rng_seed: u64,
) -> Result<CurriculumBatch, FeedError> {
    let mut sampler = CurriculumSampler::new(graph, sequence, CurriculumConfig { seed: rng_seed, ..config.clone() })?;
    sampler.sample(iteration)
}

/// One batch per iteration in `[0, total_iters)`.
pub fn generate_batches(graph: &ViewGraph, sequence: &[u32], config: &CurriculumConfig) -> Result<Vec<CurriculumBatch>, FeedError> {
    let mut sampler = CurriculumSampler::new(graph, sequence, config.clone())?;
    (0..config.total_iters).map(|it| sampler.sample(it)).collect()
}

/// Mean pairwise overlap of a batch's members.
pub fn batch_mean_wiou(graph: &ViewGraph, batch: &CurriculumBatch) -> f64 {
    let ids: Vec<u32> = batch.input_ids.iter().chain(&batch.target_ids).copied().collect();
    let mut sum = 0.0;
    let mut n = 0;
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            sum += graph.wiou_exact(ids[i], ids[j]);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEvent {
    #[serde(rename = "iter")]
    pub iteration: u64,
    #[serde(rename = "ids")]
    pub freeview_ids: Vec<u32>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoGtSchedule {
    pub events: Vec<ScheduleEvent>,
    /// How overlap with the training set is aggregated when ranking.
    pub aggregation: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleConfig {
    pub interval: u64,
    pub per_event: usize,
    pub weight_band: (f64, f64),
    pub quality_max: f64,
    pub total_iters: u64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { interval: 3000, per_event: 5, weight_band: (0.3, 0.5), quality_max: 0.5, total_iters: 20000 }
    }
}

/// Loss weight for a free view: the band's top at quality 0, its bottom at
/// the gating threshold, linear in between.
pub fn quality_weight(quality_score: f64, quality_max: f64, band: (f64, f64)) -> f64 {
    let t = if quality_max > 0.0 { (quality_score / quality_max).clamp(0.0, 1.0) } else { 1.0 };
    band.1 - (band.1 - band.0) * t
}

/// Largest overlap between `id` and any training view.
pub fn max_training_wiou(graph: &ViewGraph, id: u32, training_ids: &BTreeSet<u32>) -> f64 {
    training_ids.iter().map(|&t| graph.wiou_exact(id, t)).fold(0.0, f64::max)
}

/// Injects free views least overlapping the training set first, `per_event`
/// at a time every `interval` iterations, each view once.
pub fn build_pseudo_gt_schedule(
    graph: &ViewGraph,
    training_ids: &BTreeSet<u32>,
    records: &[FreeViewRecord],
    config: &ScheduleConfig,
) -> Result<PseudoGtSchedule, FeedError> {
    if config.interval == 0 || config.per_event == 0 {
        return Err(FeedError::InvalidConfig("interval and per_event must be positive".into()));
    }
    let mut ranked: Vec<(f64, u32, f64)> = Vec::with_capacity(records.len());
    for r in records {
        if !r.status.is_selected() {
            return Err(FeedError::NotSelected(r.id()));
        }
        let q = r.quality.map_or(config.quality_max, |q| q.quality_score);
        ranked.push((max_training_wiou(graph, r.id(), training_ids), r.id(), q));
    }
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut events = Vec::new();
    for (k, chunk) in ranked.chunks(config.per_event).enumerate() {
        let iteration = config.interval * (k as u64 + 1);
        if iteration > config.total_iters {
            break;
        }
        events.push(ScheduleEvent {
            iteration,
            freeview_ids: chunk.iter().map(|c| c.1).collect(),
            weights: chunk.iter().map(|c| quality_weight(c.2, config.quality_max, config.weight_band)).collect(),
        });
    }
    Ok(PseudoGtSchedule { events, aggregation: "max".into() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_shapes(a: &RgbImage, b: &RgbImage) -> Result<(), FeedError> {
    if a.width != b.width || a.height != b.height || a.pixels.is_empty() {
        return Err(FeedError::ShapeMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(())
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5), averaged over
/// channels. Images smaller than the window use the largest odd window that fits.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64, FeedError> {
    check_shapes(a, b)?;
    let (w, h) = (a.width, a.height);
    let mut size = SSIM_WINDOW.min(w).min(h);
    if size % 2 == 0 {
        size -= 1;
    }
    let k = gaussian_kernel(size.max(1), SSIM_SIGMA);
    let mut total = 0.0;
    for c in 0..3 {
        let x = a.channel(c);
        let y = b.channel(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = filter_valid(&x, w, h, &k);
        let (my, _, _) = filter_valid(&y, w, h, &k);
        let (sxx, _, _) = filter_valid(&xx, w, h, &k);
        let (syy, _, _) = filter_valid(&yy, w, h, &k);
        let (sxy, _, _) = filter_valid(&xy, w, h, &k);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            acc += ((2.0 * ux * uy + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (vx + vy + SSIM_C2));
        }
        total += acc / mx.len() as f64;
    }
    Ok(total / 3.0)
}

/// `weight · (mean |a - b| + 1 - SSIM(a, b))`.
pub fn free_view_loss(rendered: &RgbImage, pseudo_gt: &RgbImage, weight: f64) -> Result<f64, FeedError> {
    check_shapes(rendered, pseudo_gt)?;
    if !(0.0..=1.0).contains(&weight) {
        return Err(FeedError::InvalidWeight(weight));
    }
    if rendered == pseudo_gt {
        return Ok(0.0);
    }
    let l1 = rendered
        .pixels
        .iter()
        .zip(&pseudo_gt.pixels)
        .map(|(p, q)| (0..3).map(|c| (p[c] as f64 - q[c] as f64).abs()).sum::<f64>())
        .sum::<f64>()
        / (3 * rendered.pixels.len()) as f64;
    let s = ssim(rendered, pseudo_gt)?;
    Ok((weight * (l1 + 1.0 - s)).max(0.0))
}

/// Position of each id in `sequence`.
pub fn sequence_positions(sequence: &[u32]) -> HashMap<u32, usize> {
    sequence.iter().enumerate().map(|(i, &id)| (id, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::scene::ViewKind;
    use crate::select::{RectifyAttempt, ViewStatus};
    use proptest::prelude::*;

    fn chain() -> ViewGraph {
        let nodes: Vec<(u32, ViewKind, f64)> = (0..6).map(|i| (i, ViewKind::Training, 1.0)).collect();
        // incident sums: 0:0.9 1:1.5 2:1.0 3:0.7 4:1.0 5:0.6
        let edges = [(0, 1, 0.9), (1, 2, 0.6), (2, 3, 0.4), (3, 4, 0.3), (4, 5, 0.6)];
        ViewGraph::from_parts(&nodes, &edges, 0.05).unwrap()
    }

    #[test]
    fn warmup_start_on_chain() {
        assert_eq!(select_start_node(&chain(), 1), Some(1));
        let cfg = CurriculumConfig { inputs_per_batch: 1, targets_per_batch: 1, graph_probability: 1.0, ..Default::default() };
        let seq: Vec<u32> = (0..6).collect();
        let b = sample_batch(0, &chain(), &seq, &cfg, 1).unwrap();
        let members: BTreeSet<u32> = b.input_ids.iter().chain(&b.target_ids).copied().collect();
        assert!(members.contains(&1));
        assert_eq!(b.source, BatchSource::Graph);
    }

    #[test]
    fn insufficient_neighbors() {
        let cfg = CurriculumConfig { graph_probability: 1.0, ..Default::default() };
        let seq: Vec<u32> = (0..6).collect();
        assert_eq!(sample_batch(0, &chain(), &seq, &cfg, 1), Err(FeedError::InsufficientNeighbors(6)));
    }

    #[test]
    fn frame_distance_bounds_hold() {
        let g = chain();
        let seq: Vec<u32> = (100..160).collect();
        let pos = sequence_positions(&seq);
        let cfg = CurriculumConfig { graph_probability: 0.0, ..Default::default() };
        let mut s = CurriculumSampler::new(&g, &seq, cfg.clone()).unwrap();
        for it in (0..6000).step_by(7) {
            let b = s.sample(it).unwrap();
            assert_eq!(b.source, BatchSource::FrameDistance);
            let (lo, hi) = cfg.frame_range(it);
            assert_eq!(b.input_ids.len(), 4);
            assert_eq!(b.target_ids.len(), 2);
            for i in &b.input_ids {
                for t in &b.target_ids {
                    let d = pos[i].abs_diff(pos[t]);
                    assert!(d >= lo && d <= hi, "iter {it}: {d} not in [{lo}, {hi}]");
                    if it >= cfg.warmup_iters {
                        assert!((15..=40).contains(&d));
                    }
                }
            }
        }
        assert_eq!(cfg.frame_range(0), (10, 20));
        assert_eq!(cfg.frame_range(1500), (13, 30));
        assert_eq!(cfg.frame_range(9000), (15, 40));
        let short: Vec<u32> = (0..30).collect();
        let mut s = CurriculumSampler::new(&g, &short, cfg).unwrap();
        assert!(matches!(s.frame_batch(5000), Err(FeedError::SequenceTooShort { .. })));
    }

    fn random_graph(seed: u64, n: u32, p: f64) -> ViewGraph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodes: Vec<(u32, ViewKind, f64)> = (0..n).map(|i| (i, ViewKind::Candidate, 1.0)).collect();
        let mut edges = Vec::new();
        for a in 0..n {
            for b in a + 1..n {
                if rng.random::<f64>() < p {
                    edges.push((a, b, rng.random_range(0.05..1.0)));
                }
            }
        }
        ViewGraph::from_parts(&nodes, &edges, 0.05).unwrap()
    }

    #[test]
    fn batches_valid_and_trend_downward() {
        let g = random_graph(7, 60, 0.3);
        let seq: Vec<u32> = (0..60).collect();
        let cfg = CurriculumConfig { graph_probability: 1.0, ..Default::default() };
        let mut s = CurriculumSampler::new(&g, &seq, cfg.clone()).unwrap();
        let (mut warm, mut late) = (0.0, 0.0);
        for i in 0..1000 {
            warm += batch_mean_wiou(&g, &s.sample(i).unwrap());
            late += batch_mean_wiou(&g, &s.sample(cfg.warmup_iters + i).unwrap());
        }
        assert!(warm > late, "{warm} vs {late}");

        let mixed = CurriculumConfig { seed: 3, ..Default::default() };
        let mut s = CurriculumSampler::new(&g, &seq, mixed).unwrap();
        for it in 0..10_000 {
            let b = s.sample(it).unwrap();
            assert_eq!((b.input_ids.len(), b.target_ids.len()), (4, 2));
            let ids: BTreeSet<u32> = b.input_ids.iter().chain(&b.target_ids).copied().collect();
            assert_eq!(ids.len(), 6);
        }
    }

    #[test]
    fn separated_late_stage_takes_lowest_overlap() {
        let nodes: Vec<(u32, ViewKind, f64)> = (0..9).map(|i| (i, ViewKind::Candidate, 1.0)).collect();
        let edges: Vec<(u32, u32, f64)> = (1..9).map(|i| (0, i, 0.1 * i as f64)).collect();
        let g = ViewGraph::from_parts(&nodes, &edges, 0.05).unwrap();
        let seq: Vec<u32> = (0..9).collect();
        let cfg = CurriculumConfig { graph_probability: 1.0, late_stage: LateStage::Separated, ..Default::default() };
        let mut s = CurriculumSampler::new(&g, &seq, cfg).unwrap();
        let b = s.graph_batch(5000).unwrap();
        let members: BTreeSet<u32> = b.input_ids.iter().chain(&b.target_ids).copied().collect();
        assert_eq!(members, (0..6).collect());
    }

    #[test]
    fn zero_graph_probability_uses_frames() {
        let g = random_graph(1, 20, 0.5);
        let seq: Vec<u32> = (0..50).collect();
        let cfg = CurriculumConfig { graph_probability: 0.0, ..Default::default() };
        let mut s = CurriculumSampler::new(&g, &seq, cfg).unwrap();
        assert!((0..500).all(|i| s.sample(i).unwrap().source == BatchSource::FrameDistance));
    }

    fn record(id: u32, q: f64) -> FreeViewRecord {
        use crate::geometry::{Quat, Vec3};
        use crate::scene::{CameraPose, Intrinsics, PoseRecord};
        use crate::trajectory::{CandidatePose, CandidateRecord, TrajectoryMode};
        let k = Intrinsics { fx: 1.0, fy: 1.0, cx: 1.0, cy: 1.0, width: 2, height: 2 };
        let pose = CameraPose::from_center(id, ViewKind::Candidate, Quat::identity(), Vec3::zeros(), k, 0.1, 1.0);
        let c = CandidatePose { pose: pose.clone(), mode: TrajectoryMode::Orbit, anchor_id: 0, frame_index: 0, lookat: None, jittered: false };
        let report = crate::render::QualityReport { black_pixel_ratio: 0.0, depth_range_score: 0.2, quality_score: q, passed: true };
        FreeViewRecord {
            candidate: CandidateRecord::from(&c),
            pose: PoseRecord::from(&pose),
            status: ViewStatus::Selected,
            score: 1.0,
            quality: Some(report),
            rectify_history: Vec::<RectifyAttempt>::new(),
            reference_id: Some(0),
            render_paths: None,
        }
    }

    #[test]
    fn schedule_exhaustion_and_order() {
        let mut nodes = vec![(0, ViewKind::Training, 1.0)];
        nodes.extend((10..17).map(|i| (i, ViewKind::Candidate, 1.0)));
        let edges: Vec<(u32, u32, f64)> = (10..16).map(|i| (0, i, 0.1 * (i - 9) as f64)).collect();
        let g = ViewGraph::from_parts(&nodes, &edges, 0.05).unwrap();
        let records: Vec<FreeViewRecord> = (10..17).map(|i| record(i, 0.25)).collect();
        let s = build_pseudo_gt_schedule(&g, &[0].into(), &records, &ScheduleConfig::default()).unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.events[0].freeview_ids, vec![16, 10, 11, 12, 13]);
        assert_eq!(s.events[1].freeview_ids, vec![14, 15]);
        assert_eq!(s.events[1].iteration, 6000);
        assert!(s.events.iter().flat_map(|e| &e.weights).all(|&w| (w - 0.4).abs() < 1e-12));
        let json = serde_json::to_value(&s).unwrap();
        assert!(json["events"][0]["iter"].is_u64() && json["events"][0]["ids"].is_array());
    }

    #[test]
    fn weight_mapping() {
        assert!((quality_weight(0.25, 0.5, (0.3, 0.5)) - 0.4).abs() < 1e-12);
        assert_eq!(quality_weight(0.0, 0.5, (0.3, 0.5)), 0.5);
        assert_eq!(quality_weight(0.9, 0.5, (0.3, 0.5)), 0.3);
    }

    fn noise_image(seed: u64, w: usize, h: usize) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    #[test]
    fn loss_identity_offset_and_shape() {
        let a = noise_image(1, 24, 20);
        assert_eq!(free_view_loss(&a, &a, 0.4).unwrap(), 0.0);
        let dim = RgbImage::from_fn(24, 20, |x, y| [0.2 + 0.01 * x as f32, 0.3, 0.1 + 0.02 * y as f32]);
        let lifted = RgbImage { pixels: dim.pixels.iter().map(|p| p.map(|c| c + 0.1)).collect(), ..dim.clone() };
        let l = free_view_loss(&dim, &lifted, 0.5).unwrap();
        assert!(l >= 0.5 * 0.1 - 1e-6);
        assert!(matches!(free_view_loss(&a, &noise_image(2, 10, 10), 0.4), Err(FeedError::ShapeMismatch(..))));
    }

    /// Direct per-window weighted moments with a 2-D kernel.
    fn naive_ssim(a: &RgbImage, b: &RgbImage) -> f64 {
        let n = 11usize;
        let g: Vec<f64> = (0..n).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
        let norm: f64 = g.iter().sum::<f64>().powi(2);
        let mut total = 0.0;
        for c in 0..3 {
            let mut acc = 0.0;
            let mut count = 0;
            for y0 in 0..=a.height - n {
                for x0 in 0..=a.width - n {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for dy in 0..n {
                        for dx in 0..n {
                            let w = g[dx] * g[dy] / norm;
                            let p = a.get(x0 + dx, y0 + dy)[c] as f64;
                            let q = b.get(x0 + dx, y0 + dy)[c] as f64;
                            mx += w * p;
                            my += w * q;
                            sxx += w * p * p;
                            syy += w * q * q;
                            sxy += w * p * q;
                        }
                    }
                    let (c1, c2) = (1e-4, 9e-4);
                    acc += ((2.0 * mx * my + c1) * (2.0 * (sxy - mx * my) + c2))
                        / ((mx * mx + my * my + c1) * (sxx - mx * mx + syy - my * my + c2));
                    count += 1;
                }
            }
            total += acc / count as f64;
        }
        total / 3.0
    }

    #[test]
    fn ssim_matches_naive_oracle() {
        let a = noise_image(3, 19, 15);
        let b = RgbImage { pixels: a.pixels.iter().zip(&noise_image(4, 19, 15).pixels).map(|(p, q)| [0.7 * p[0] + 0.3 * q[0], p[1], 0.5 * q[2]]).collect(), ..a.clone() };
        let fast = ssim(&a, &b).unwrap();
        let slow = naive_ssim(&a, &b);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn ssim_symmetric_and_loss_nonnegative(s1 in 0u64..1000, s2 in 0u64..1000, w in 0.3f64..0.5) {
            let a = noise_image(s1, 16, 14);
            let b = noise_image(s2 + 1000, 16, 14);
            prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-9);
            prop_assert!(free_view_loss(&a, &b, w).unwrap() >= 0.0);
        }
    }
}
