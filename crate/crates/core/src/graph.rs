//! Weighted visibility, WIoU overlap and the view graph.
//!
//! Inside the graph a view's visibility is a bitset over the grid's occupied
//! cells. Since every visible weight equals the cell certainty, the overlap
//! reduces to `I / (f_a + f_b - I)` with `I` the certainty summed over the
//! shared bits. Shared-bit sums go through per-byte lookup tables.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{CertaintyGrid, GridError};
use crate::scene::{CameraPose, ViewKind};

pub const DEFAULT_EDGE_CUTOFF: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("no reference view reachable from node {0}")]
    NoReferenceAvailable(u32),
    #[error("unknown node id {0}")]
    UnknownNode(u32),
    #[error("duplicate node id {0}")]
    DuplicateNode(u32),
    #[error("no poses to build a graph from")]
    NoPoses,
    #[error("malformed graph: {0}")]
    Malformed(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Sparse weighted visibility: `(linear voxel index, weight)` sorted by index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VisibilityVector {
    entries: Vec<(u32, f64)>,
}

impl VisibilityVector {
    /// Sorts and drops non-positive weights; duplicate keys keep the last value.
    pub fn from_entries(mut entries: Vec<(u32, f64)>) -> Self {
        entries.retain(|e| e.1 > 0.0);
        entries.sort_by_key(|e| e.0);
        let mut out: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for e in entries {
            match out.last_mut() {
                Some(last) if last.0 == e.0 => *last = e,
                _ => out.push(e),
            }
        }
        Self { entries: out }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: u32) -> f64 {
        self.entries.binary_search_by_key(&key, |e| e.0).map(|i| self.entries[i].1).unwrap_or(0.0)
    }

    /// Node score f: total visible weight.
    pub fn score(&self) -> f64 {
        self.entries.iter().map(|e| e.1).sum()
    }
}

/// Visible occupied cells of `grid` for `pose`, weighted by certainty.
pub fn compute_visibility(pose: &CameraPose, grid: &CertaintyGrid) -> VisibilityVector {
    let entries = grid
        .cells()
        .iter()
        .filter(|(lin, c)| *c > 0.0 && pose.project(&grid.voxel_center(grid.unlinear(*lin))).is_some())
        .copied()
        .collect();
    VisibilityVector { entries }
}

/// `Σ min / Σ max` over the union of supports; 0 when both are empty.
pub fn wiou(a: &VisibilityVector, b: &VisibilityVector) -> f64 {
    let (ea, eb) = (&a.entries, &b.entries);
    let (mut i, mut j) = (0, 0);
    let (mut num, mut den) = (0.0, 0.0);
    while i < ea.len() || j < eb.len() {
        let ka = ea.get(i).map_or(u32::MAX, |e| e.0);
        let kb = eb.get(j).map_or(u32::MAX, |e| e.0);
        if ka == kb {
            num += ea[i].1.min(eb[j].1);
            den += ea[i].1.max(eb[j].1);
            i += 1;
            j += 1;
        } else if ka < kb {
            den += ea[i].1;
            i += 1;
        } else {
            den += eb[j].1;
            j += 1;
        }
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Certainty lookups over 64-cell words, one 256-entry table per byte.
#[derive(Clone, Debug)]
struct WordTables {
    sums: Vec<[f64; 256]>,
}

impl WordTables {
    fn new(weights: &[f64]) -> Self {
        let words = weights.len().div_ceil(64);
        let mut sums = vec![[0.0; 256]; words * 8];
        for (slot, table) in sums.iter_mut().enumerate() {
            let base = slot * 8;
            for b in 1..256usize {
                let low = b.trailing_zeros() as usize;
                let w = weights.get(base + low).copied().unwrap_or(0.0);
                table[b] = table[b & (b - 1)] + w;
            }
        }
        Self { sums }
    }

    #[inline]
    fn word_sum(&self, word_idx: u32, bits: u64) -> f64 {
        let base = word_idx as usize * 8;
        let mut acc = 0.0;
        for k in 0..8 {
            let byte = ((bits >> (8 * k)) & 0xff) as usize;
            if byte != 0 {
                acc += self.sums[base + k][byte];
            }
        }
        acc
    }
}

/// Visibility as a bitset over occupied-cell ordinals.
#[derive(Clone, Debug, PartialEq)]
pub struct VisibilityMask {
    words: Vec<(u32, u64)>,
    lo: [u32; 3],
    hi: [u32; 3],
}

impl VisibilityMask {
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.1.count_ones() as usize).sum()
    }

    fn boxes_overlap(&self, other: &Self) -> bool {
        (0..3).all(|k| self.lo[k] <= other.hi[k] && other.lo[k] <= self.hi[k])
    }
}

fn compute_mask(pose: &CameraPose, grid: &CertaintyGrid) -> VisibilityMask {
    let mut words: Vec<(u32, u64)> = Vec::new();
    let mut lo = [u32::MAX; 3];
    let mut hi = [0u32; 3];
    for (ord, (lin, c)) in grid.cells().iter().enumerate() {
        if *c <= 0.0 {
            continue;
        }
        let v = grid.unlinear(*lin);
        if pose.project(&grid.voxel_center(v)).is_none() {
            continue;
        }
        let w = (ord / 64) as u32;
        let bit = 1u64 << (ord % 64);
        match words.last_mut() {
            Some(last) if last.0 == w => last.1 |= bit,
            _ => words.push((w, bit)),
        }
        for k in 0..3 {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    VisibilityMask { words, lo, hi }
}

fn grid_tables(grid: &CertaintyGrid) -> WordTables {
    let weights: Vec<f64> = grid.cells().iter().map(|c| c.1).collect();
    WordTables::new(&weights)
}

fn mask_score(t: &WordTables, m: &VisibilityMask) -> f64 {
    m.words.iter().map(|&(w, bits)| t.word_sum(w, bits)).sum()
}

fn overlap_from_parts(inter: f64, fa: f64, fb: f64) -> f64 {
    let den = fa + fb - inter;
    if den > 0.0 {
        (inter / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphNode {
    pub id: u32,
    pub kind: ViewKind,
    pub score: f64,
    pub mask: Option<VisibilityMask>,
}

/// Views as nodes, WIoU edges stored when at least `edge_cutoff`.
#[derive(Clone, Debug)]
pub struct ViewGraph {
    edge_cutoff: f64,
    nodes: Vec<GraphNode>,
    index: HashMap<u32, usize>,
    adjacency: Vec<Vec<(usize, f64)>>,
    tables: Option<WordTables>,
    cells: Vec<(u32, f64)>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: u32,
    kind: ViewKind,
    score: f64,
}

#[derive(Serialize, Deserialize)]
struct EdgeRecord {
    i: u32,
    j: u32,
    wiou: f64,
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    edge_cutoff: f64,
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
}

/// Builds the graph over `poses` (training and candidates alike).
pub fn build_view_graph(poses: &[CameraPose], grid: &CertaintyGrid, edge_cutoff: f64) -> Result<ViewGraph, GraphError> {
    if poses.is_empty() {
        return Err(GraphError::NoPoses);
    }
    if grid.is_empty() {
        return Err(GridError::EmptyGrid.into());
    }
    let tables = grid_tables(grid);
    let masks: Vec<VisibilityMask> = poses.par_iter().map(|p| compute_mask(p, grid)).collect();
    let scores: Vec<f64> = masks.iter().map(|m| mask_score(&tables, m)).collect();
    let n = poses.len();
    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = Vec::new();
            if scores[i] <= 0.0 {
                return row;
            }
            for j in i + 1..n {
                let (fa, fb) = (scores[i], scores[j]);
                // WIoU can never exceed min(f)/max(f)
                if fb <= 0.0 || fa.min(fb) < edge_cutoff * fa.max(fb) {
                    continue;
                }
                let w = overlap_from_parts(masks_intersection(&tables, &masks[i], &masks[j]), fa, fb);
                if w >= edge_cutoff && w > 0.0 {
                    row.push((j, w));
                }
            }
            row
        })
        .collect();
    let nodes: Vec<GraphNode> = poses
        .iter()
        .zip(masks)
        .zip(&scores)
        .map(|((p, m), &s)| GraphNode { id: p.id, kind: p.kind, score: s, mask: Some(m) })
        .collect();
    let mut graph = ViewGraph::assemble(nodes, edge_cutoff)?;
    for (i, row) in rows.into_iter().enumerate() {
        for (j, w) in row {
            graph.adjacency[i].push((j, w));
            graph.adjacency[j].push((i, w));
        }
    }
    for adj in &mut graph.adjacency {
        adj.sort_by_key(|e| e.0);
    }
    graph.tables = Some(tables);
    graph.cells = grid.cells().to_vec();
    Ok(graph)
}

impl ViewGraph {
    fn assemble(nodes: Vec<GraphNode>, edge_cutoff: f64) -> Result<Self, GraphError> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(GraphError::DuplicateNode(n.id));
            }
        }
        let adjacency = vec![Vec::new(); nodes.len()];
        Ok(Self { edge_cutoff, nodes, index, adjacency, tables: None, cells: Vec::new() })
    }

    /// Graph from explicit scores and edge weights, without visibility data.
    /// Edges below the cutoff are dropped.
    pub fn from_parts(
        nodes: &[(u32, ViewKind, f64)],
        edges: &[(u32, u32, f64)],
        edge_cutoff: f64,
    ) -> Result<Self, GraphError> {
        let nodes = nodes.iter().map(|&(id, kind, score)| GraphNode { id, kind, score, mask: None }).collect();
        let mut g = Self::assemble(nodes, edge_cutoff)?;
        for &(a, b, w) in edges {
            let ia = g.idx(a)?;
            let ib = g.idx(b)?;
            if ia == ib || !(0.0..=1.0).contains(&w) {
                return Err(GraphError::Malformed(format!("edge ({a}, {b}) with weight {w}")));
            }
            if w >= edge_cutoff && w > 0.0 {
                g.adjacency[ia].retain(|e| e.0 != ib);
                g.adjacency[ib].retain(|e| e.0 != ia);
                g.adjacency[ia].push((ib, w));
                g.adjacency[ib].push((ia, w));
            }
        }
        for adj in &mut g.adjacency {
            adj.sort_by_key(|e| e.0);
        }
        Ok(g)
    }

    fn idx(&self, id: u32) -> Result<usize, GraphError> {
        self.index.get(&id).copied().ok_or(GraphError::UnknownNode(id))
    }

    pub fn edge_cutoff(&self) -> f64 {
        self.edge_cutoff
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[GraphNode] {
        &self.nodes
    }

    pub fn node_ids(&self) -> Vec<u32> {
        self.nodes.iter().map(|n| n.id).collect()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.index.contains_key(&id)
    }

    pub fn node(&self, id: u32) -> Option<&GraphNode> {
        self.index.get(&id).map(|&i| &self.nodes[i])
    }

    pub fn score(&self, id: u32) -> Option<f64> {
        self.node(id).map(|n| n.score)
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Stored neighbors `(id, wiou)` in node order.
    pub fn neighbors(&self, id: u32) -> Vec<(u32, f64)> {
        match self.index.get(&id) {
            Some(&i) => self.adjacency[i].iter().map(|&(j, w)| (self.nodes[j].id, w)).collect(),
            None => Vec::new(),
        }
    }

    /// Stored edge weight; 0 for pairs below the cutoff. Self-pairs give 1
    /// for nodes with visible certainty.
    pub fn edge(&self, a: u32, b: u32) -> f64 {
        let (Some(&ia), Some(&ib)) = (self.index.get(&a), self.index.get(&b)) else {
            return 0.0;
        };
        if ia == ib {
            return if self.nodes[ia].score > 0.0 { 1.0 } else { 0.0 };
        }
        let adj = &self.adjacency[ia];
        adj.binary_search_by_key(&ib, |e| e.0).map(|k| adj[k].1).unwrap_or(0.0)
    }

    /// Sum of stored incident edge weights.
    pub fn incident_sum(&self, id: u32) -> f64 {
        self.index.get(&id).map_or(0.0, |&i| self.adjacency[i].iter().map(|e| e.1).sum())
    }

    /// Exact WIoU from visibility when both nodes carry it, else the stored edge.
    pub fn wiou_exact(&self, a: u32, b: u32) -> f64 {
        let (Some(&ia), Some(&ib)) = (self.index.get(&a), self.index.get(&b)) else {
            return 0.0;
        };
        match (&self.tables, &self.nodes[ia].mask, &self.nodes[ib].mask) {
            (Some(t), Some(ma), Some(mb)) => {
                let inter = masks_intersection(t, ma, mb);
                overlap_from_parts(inter, self.nodes[ia].score, self.nodes[ib].score)
            }
            _ => self.edge(a, b),
        }
    }

    /// Visibility mask and score of an arbitrary pose against this graph's grid.
    pub fn mask_for(&self, pose: &CameraPose, grid: &CertaintyGrid) -> Option<(VisibilityMask, f64)> {
        let t = self.tables.as_ref()?;
        if grid.cells() != self.cells.as_slice() {
            return None;
        }
        let mask = compute_mask(pose, grid);
        let score = mask_score(t, &mask);
        Some((mask, score))
    }

    /// Exact WIoU between an external mask and a node (0 without visibility data).
    pub fn wiou_with_mask(&self, mask: &VisibilityMask, score: f64, id: u32) -> f64 {
        let (Some(t), Some(node)) = (&self.tables, self.node(id)) else {
            return 0.0;
        };
        match &node.mask {
            Some(m) => overlap_from_parts(masks_intersection(t, mask, m), score, node.score),
            None => 0.0,
        }
    }

    /// Restores visibility for a graph loaded without it. Fails when the
    /// recomputed scores disagree with the stored ones.
    pub fn attach_visibility(&mut self, poses: &[CameraPose], grid: &CertaintyGrid) -> Result<(), GraphError> {
        let tables = grid_tables(grid);
        let by_id: HashMap<u32, &CameraPose> = poses.iter().map(|p| (p.id, p)).collect();
        let masks: Vec<Result<VisibilityMask, GraphError>> = self
            .nodes
            .par_iter()
            .map(|n| by_id.get(&n.id).map(|p| compute_mask(p, grid)).ok_or(GraphError::UnknownNode(n.id)))
            .collect();
        for (node, mask) in self.nodes.iter_mut().zip(masks) {
            let mask = mask?;
            let score = mask_score(&tables, &mask);
            if (score - node.score).abs() > 1e-6 * node.score.abs().max(1.0) {
                return Err(GraphError::Malformed(format!("node {} score {} does not match visibility {}", node.id, node.score, score)));
            }
            node.score = score;
            node.mask = Some(mask);
        }
        self.tables = Some(tables);
        self.cells = grid.cells().to_vec();
        Ok(())
    }

    /// Weighted visibility vector of a node, when visibility is attached.
    pub fn visibility(&self, id: u32) -> Option<VisibilityVector> {
        let mask = self.node(id)?.mask.as_ref()?;
        let mut entries = Vec::new();
        for &(w, bits) in &mask.words {
            let mut b = bits;
            while b != 0 {
                let ord = w as usize * 64 + b.trailing_zeros() as usize;
                entries.push(self.cells[ord]);
                b &= b - 1;
            }
        }
        Some(VisibilityVector { entries })
    }

    pub fn to_json(&self) -> String {
        let nodes = self.nodes.iter().map(|n| NodeRecord { id: n.id, kind: n.kind, score: n.score }).collect();
        let mut edges = Vec::new();
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, w) in adj {
                if i < j {
                    edges.push(EdgeRecord { i: self.nodes[i].id, j: self.nodes[j].id, wiou: w });
                }
            }
        }
        serde_json::to_string(&GraphFile { edge_cutoff: self.edge_cutoff, nodes, edges }).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| GraphError::Malformed(e.to_string()))?;
        let nodes: Vec<(u32, ViewKind, f64)> = file.nodes.iter().map(|n| (n.id, n.kind, n.score)).collect();
        let edges: Vec<(u32, u32, f64)> = file.edges.iter().map(|e| (e.i, e.j, e.wiou)).collect();
        Self::from_parts(&nodes, &edges, file.edge_cutoff)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph views {\n");
        for n in &self.nodes {
            let shape = if n.kind == ViewKind::Training { "box" } else { "ellipse" };
            let _ = writeln!(out, "  n{} [label=\"{}\" shape={}];", n.id, n.id, shape);
        }
        for (i, adj) in self.adjacency.iter().enumerate() {
            for &(j, w) in adj {
                if i < j {
                    let _ = writeln!(out, "  n{} -- n{} [label=\"{:.2}\"];", self.nodes[i].id, self.nodes[j].id, w);
                }
            }
        }
        out.push_str("}\n");
        out
    }
}

fn masks_intersection(t: &WordTables, a: &VisibilityMask, b: &VisibilityMask) -> f64 {
    let (wa, wb) = (&a.words, &b.words);
    if wa.is_empty() || wb.is_empty() || !a.boxes_overlap(b) {
        return 0.0;
    }
    let (mut i, mut j) = (0, 0);
    let mut acc = 0.0;
    while i < wa.len() && j < wb.len() {
        let (ka, kb) = (wa[i].0, wb[j].0);
        if ka == kb {
            let both = wa[i].1 & wb[j].1;
            if both != 0 {
                acc += t.word_sum(ka, both);
            }
            i += 1;
            j += 1;
        } else if ka < kb {
            i += 1;
        } else {
            j += 1;
        }
    }
    acc
}

/// Best training reference for a target given its overlap with each node.
///
/// Direct overlaps are used when the best one reaches the cutoff; otherwise
/// the best bottleneck `min(w(target, m), w(m, t))` over intermediates `m`.
fn pick_reference(
    graph: &ViewGraph,
    target: Option<u32>,
    direct: &[(u32, f64)],
    training_ids: &BTreeSet<u32>,
) -> Option<u32> {
    let cutoff = graph.edge_cutoff;
    let better = |cand: (u32, f64), best: Option<(u32, f64)>| match best {
        None => true,
        Some((bid, bw)) => cand.1 > bw || (cand.1 == bw && cand.0 < bid),
    };
    let mut best: Option<(u32, f64)> = None;
    for &(id, w) in direct {
        if training_ids.contains(&id) && Some(id) != target && w > 0.0 && better((id, w), best) {
            best = Some((id, w));
        }
    }
    if let Some((id, w)) = best {
        if w >= cutoff {
            return Some(id);
        }
    }
    let mut second: Option<(u32, f64)> = None;
    for &(m, wm) in direct {
        if Some(m) == target || wm < cutoff {
            continue;
        }
        for (t, wt) in graph.neighbors(m) {
            if !training_ids.contains(&t) || Some(t) == target || t == m {
                continue;
            }
            let bottleneck = wm.min(wt);
            if bottleneck > 0.0 && better((t, bottleneck), second) {
                second = Some((t, bottleneck));
            }
        }
    }
    second.map(|s| s.0).or(best.map(|b| b.0))
}

/// Training node to use as the rectification reference for `target`.
pub fn select_reference(graph: &ViewGraph, target: u32, training_ids: &BTreeSet<u32>) -> Result<u32, GraphError> {
    if !graph.contains(target) {
        return Err(GraphError::UnknownNode(target));
    }
    let direct = graph.neighbors(target);
    pick_reference(graph, Some(target), &direct, training_ids).ok_or(GraphError::NoReferenceAvailable(target))
}

/// Reference selection for a pose outside the graph (e.g. a rectified view),
/// using exact overlaps thresholded at the cutoff.
pub fn select_reference_for_pose(
    graph: &ViewGraph,
    pose: &CameraPose,
    grid: &CertaintyGrid,
    training_ids: &BTreeSet<u32>,
) -> Result<u32, GraphError> {
    let (mask, score) = graph.mask_for(pose, grid).ok_or(GraphError::NoReferenceAvailable(pose.id))?;
    if score <= 0.0 {
        return Err(GraphError::NoReferenceAvailable(pose.id));
    }
    let direct: Vec<(u32, f64)> = graph
        .nodes
        .iter()
        .filter(|n| n.id != pose.id)
        .map(|n| (n.id, graph.wiou_with_mask(&mask, score, n.id)))
        .filter(|&(_, w)| w >= graph.edge_cutoff)
        .collect();
    pick_reference(graph, None, &direct, training_ids).ok_or(GraphError::NoReferenceAvailable(pose.id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{look_at_rotation, Vec3};
    use crate::grid::VoxelIndex;
    use crate::scene::{Intrinsics, SceneBounds};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vv(e: &[(u32, f64)]) -> VisibilityVector {
        VisibilityVector::from_entries(e.to_vec())
    }

    #[test]
    fn wiou_hand_values() {
        let a = vv(&[(1, 2.0), (2, 2.0)]);
        let b = vv(&[(1, 2.0)]);
        assert_eq!(wiou(&a, &b), 0.5);
        assert_eq!(wiou(&a, &a), 1.0);
        assert_eq!(wiou(&a, &vv(&[(7, 1.0)])), 0.0);
        assert_eq!(wiou(&vv(&[]), &vv(&[])), 0.0);
    }

    fn grid_with(cells: Vec<(VoxelIndex, f64)>, r: u32) -> CertaintyGrid {
        let unique: std::collections::BTreeMap<VoxelIndex, f64> = cells.into_iter().collect();
        let cells = unique.into_iter().collect();
        let b = SceneBounds::new(Vec3::new(-1.0, -1.0, -1.0), Vec3::new(1.0, 1.0, 1.0)).unwrap();
        CertaintyGrid::from_cells(b, r, 1e-8, cells).unwrap()
    }

    fn looking(id: u32, from: Vec3, to: Vec3) -> CameraPose {
        let k = Intrinsics { fx: 40.0, fy: 40.0, cx: 32.0, cy: 24.0, width: 64, height: 48 };
        let up = if (to - from).normalize().z.abs() > 0.99 { Vec3::y() } else { Vec3::z() };
        CameraPose::from_center(id, ViewKind::Candidate, look_at_rotation(&from, &to, &up).unwrap(), from, k, 0.01, 50.0)
    }

    #[test]
    fn single_voxel_on_axis() {
        let g = grid_with(vec![([4, 4, 4], 3.0)], 8);
        let c = g.voxel_center([4, 4, 4]);
        let v = compute_visibility(&looking(0, c + Vec3::new(0.0, -3.0, 0.0), c), &g);
        assert_eq!(v.entries(), &[(g.linear([4, 4, 4]), 3.0)]);
        let away = compute_visibility(&looking(1, c + Vec3::new(0.0, -3.0, 0.0), c + Vec3::new(0.0, -6.0, 0.0)), &g);
        assert!(away.is_empty());
        assert_eq!(away.score(), 0.0);
    }

    fn random_grid(rng: &mut ChaCha8Rng, n: usize) -> CertaintyGrid {
        let cells = (0..n)
            .map(|_| ([rng.random_range(0..8), rng.random_range(0..8), rng.random_range(0..8)], rng.random_range(0.1..5.0)))
            .collect();
        grid_with(cells, 8)
    }

    fn random_pose(rng: &mut ChaCha8Rng, id: u32) -> CameraPose {
        let from = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
        let to = Vec3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        looking(id, from, to)
    }

    #[test]
    fn visibility_matches_projection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = random_grid(&mut rng, 500);
        for id in 0..20 {
            let pose = random_pose(&mut rng, id);
            let mut oracle = Vec::new();
            for x in 0..8 {
                for y in 0..8 {
                    for z in 0..8 {
                        let c = g.certainty([x, y, z]);
                        if c > 0.0 && pose.project(&g.voxel_center([x, y, z])).is_some() {
                            oracle.push((g.linear([x, y, z]), c));
                        }
                    }
                }
            }
            assert_eq!(compute_visibility(&pose, &g).entries(), oracle.as_slice());
        }
    }

    #[test]
    fn graph_edges_match_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(&mut rng, 300);
        let poses: Vec<CameraPose> = (0..10).map(|i| random_pose(&mut rng, i)).collect();
        let graph = build_view_graph(&poses, &g, DEFAULT_EDGE_CUTOFF).unwrap();
        let vis: Vec<VisibilityVector> = poses.iter().map(|p| compute_visibility(p, &g)).collect();
        for i in 0..10 {
            assert!((graph.score(i as u32).unwrap() - vis[i].score()).abs() < 1e-6);
            assert_eq!(graph.visibility(i as u32).unwrap(), vis[i]);
            for j in 0..10 {
                let dense = wiou(&vis[i], &vis[j]);
                let exact = graph.wiou_exact(i as u32, j as u32);
                assert!((dense - exact).abs() < 1e-9, "{i} {j}: {dense} vs {exact}");
                let stored = graph.edge(i as u32, j as u32);
                if i != j {
                    if dense >= DEFAULT_EDGE_CUTOFF {
                        assert!((stored - dense).abs() < 1e-9);
                    } else {
                        assert_eq!(stored, 0.0);
                    }
                }
                assert_eq!(graph.edge(i as u32, j as u32), graph.edge(j as u32, i as u32));
            }
        }
    }

    #[test]
    fn single_pose_and_identical_pair() {
        let g = grid_with(vec![([4, 4, 4], 2.0), ([3, 4, 4], 1.0)], 8);
        let c = g.voxel_center([4, 4, 4]);
        let p = looking(0, c + Vec3::new(0.0, -3.0, 0.0), c);
        let one = build_view_graph(std::slice::from_ref(&p), &g, 0.05).unwrap();
        assert_eq!(one.edge_count(), 0);
        assert_eq!(one.score(0), Some(3.0));
        let mut q = p.clone();
        q.id = 1;
        let two = build_view_graph(&[p, q], &g, 0.05).unwrap();
        assert_eq!(two.edge_count(), 1);
        assert_eq!(two.edge(0, 1), 1.0);
        assert_eq!(two.wiou_exact(0, 0), 1.0);
        assert!(matches!(build_view_graph(&[], &g, 0.05), Err(GraphError::NoPoses)));
    }

    fn tset(ids: &[u32]) -> BTreeSet<u32> {
        ids.iter().copied().collect()
    }

    #[test]
    fn reference_direct_and_second_order() {
        use ViewKind::*;
        let g = ViewGraph::from_parts(
            &[(0, Training, 1.0), (1, Training, 1.0), (10, Candidate, 1.0), (11, Candidate, 1.0)],
            &[(10, 11, 0.6), (11, 0, 0.5), (11, 1, 0.2)],
            0.05,
        )
        .unwrap();
        assert_eq!(select_reference(&g, 10, &tset(&[0, 1])).unwrap(), 0);
        assert_eq!(select_reference(&g, 11, &tset(&[0, 1])).unwrap(), 0);
        let lonely = ViewGraph::from_parts(&[(0, Training, 1.0), (5, Candidate, 0.0)], &[], 0.05).unwrap();
        assert!(matches!(select_reference(&lonely, 5, &tset(&[0])), Err(GraphError::NoReferenceAvailable(5))));
    }

    #[test]
    fn reference_with_single_shared_view() {
        let g = grid_with(vec![([1, 4, 4], 1.0), ([6, 4, 4], 1.0)], 8);
        let left = g.voxel_center([1, 4, 4]);
        let right = g.voxel_center([6, 4, 4]);
        let down = Vec3::new(0.0, -1.5, 0.0);
        let poses = vec![
            looking(0, left + down, left),
            looking(1, right + down, right),
            looking(2, left + down * 1.2, left),
        ];
        let graph = build_view_graph(&poses, &g, 0.05).unwrap();
        assert_eq!(select_reference(&graph, 2, &tset(&[0, 1])).unwrap(), 0);
        let rectified = looking(99, left + down * 1.1, left);
        assert_eq!(select_reference_for_pose(&graph, &rectified, &g, &tset(&[0, 1])).unwrap(), 0);
    }

    #[test]
    fn json_and_dot_exports() {
        use ViewKind::*;
        let g = ViewGraph::from_parts(&[(0, Training, 2.0), (7, Candidate, 1.5)], &[(0, 7, 0.456)], 0.05).unwrap();
        let back = ViewGraph::from_json(&g.to_json()).unwrap();
        assert_eq!(back.edge(7, 0), 0.456);
        assert_eq!(back.score(7), Some(1.5));
        assert!(g.to_dot().contains("n0 -- n7 [label=\"0.46\"]"));
        assert!(ViewGraph::from_parts(&[(0, Training, 1.0), (0, Candidate, 1.0)], &[], 0.05).is_err());
    }

    #[test]
    fn attach_visibility_restores_exact_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = random_grid(&mut rng, 200);
        let poses: Vec<CameraPose> = (0..6).map(|i| random_pose(&mut rng, i)).collect();
        let built = build_view_graph(&poses, &g, 0.05).unwrap();
        let mut loaded = ViewGraph::from_json(&built.to_json()).unwrap();
        loaded.attach_visibility(&poses, &g).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(loaded.wiou_exact(i, j), built.wiou_exact(i, j));
            }
        }
    }

    fn arb_vec() -> impl Strategy<Value = Vec<(u32, f64)>> {
        prop::collection::vec((0u32..40, 0.01f64..10.0), 0..25)
    }

    proptest! {
        #[test]
        fn wiou_symmetric_and_bounded(a in arb_vec(), b in arb_vec()) {
            let (a, b) = (vv(&a), vv(&b));
            let w = wiou(&a, &b);
            prop_assert_eq!(w, wiou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&w));
            if !a.is_empty() {
                prop_assert_eq!(wiou(&a, &a), 1.0);
            }
        }

        #[test]
        fn wiou_scale_invariant(a in arb_vec(), b in arb_vec(), lambda in 0.1f64..50.0) {
            let (va, vb) = (vv(&a), vv(&b));
            let sa = vv(&a.iter().map(|&(k, w)| (k, w * lambda)).collect::<Vec<_>>());
            let sb = vv(&b.iter().map(|&(k, w)| (k, w * lambda)).collect::<Vec<_>>());
            prop_assert!((wiou(&va, &vb) - wiou(&sa, &sb)).abs() < 1e-12);
            prop_assert!((sa.score() - lambda * va.score()).abs() < 1e-9 * (1.0 + sa.score()));
        }

        #[test]
        fn restricting_support_never_raises_overlap(
            a in arb_vec(),
            factors in prop::collection::vec(0.01f64..1.0, 40),
            keep in prop::collection::vec(any::<bool>(), 40),
        ) {
            // b is pointwise below a on a's support; dropping entries of b
            // cannot raise the overlap
            let va = vv(&a);
            let vb = VisibilityVector::from_entries(va.entries().iter().map(|&(k, w)| (k, w * factors[k as usize])).collect());
            let restricted = VisibilityVector::from_entries(vb.entries().iter().filter(|e| keep[e.0 as usize]).copied().collect());
            prop_assert!(wiou(&va, &restricted) <= wiou(&va, &vb));
        }
    }

    #[test]
    fn scale_coherence_on_graph() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cells: Vec<(VoxelIndex, f64)> = (0..150)
            .map(|_| ([rng.random_range(0..8), rng.random_range(0..8), rng.random_range(0..8)], rng.random_range(0.1..5.0)))
            .collect();
        let scaled: Vec<(VoxelIndex, f64)> = cells.iter().map(|&(v, c)| (v, c * 3.0)).collect();
        let (g1, g3) = (grid_with(cells, 8), grid_with(scaled, 8));
        let poses: Vec<CameraPose> = (0..6).map(|i| random_pose(&mut rng, i)).collect();
        let a = build_view_graph(&poses, &g1, 0.0).unwrap();
        let b = build_view_graph(&poses, &g3, 0.0).unwrap();
        for i in 0..6 {
            assert!((b.score(i).unwrap() - 3.0 * a.score(i).unwrap()).abs() < 1e-9);
            for j in 0..6 {
                assert!((a.wiou_exact(i, j) - b.wiou_exact(i, j)).abs() < 1e-12);
            }
        }
    }
}
