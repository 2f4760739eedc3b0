//! Stage orchestration over on-disk sidecars, driven by one key=value
//! config file with `[section]` headers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::feeds::{build_pseudo_gt_schedule, generate_batches, CurriculumConfig, FeedError, LateStage, ScheduleConfig};
use crate::graph::{build_view_graph, GraphError, ViewGraph, DEFAULT_EDGE_CUTOFF};
use crate::grid::{build_certainty_grid, CertaintyGrid, GridError, DEFAULT_EPSILON, DEFAULT_RESOLUTION};
use crate::render::{render, NaturalnessScorer};
use crate::scene::{
    apply_default_clip, compute_bounds, load_cameras, load_gaussian_ply, CameraFormat, CameraPose, GaussianScene,
    SceneError, DEFAULT_BOUNDS_PAD, DEFAULT_HI_QUANTILE, DEFAULT_LO_QUANTILE,
};
use crate::seed::derive_seed;
use crate::select::{
    feasibility_filter, freeview_depth_name, freeview_image_name, rectify_pairs, select_free_views, training_image_name,
    FreeViewRecord, GateContext, RenderPaths, SelectError, SelectionCounts, SelectorConfig,
};
use crate::trajectory::{candidates_from_json, candidates_to_json, generate_candidate_pool, AnchorMethod, CandidatePose, PlacementConfig, TrajectoryError};

pub const GRID_FILE: &str = "grid.bin";
pub const CANDIDATES_FILE: &str = "candidates.json";
pub const GRAPH_FILE: &str = "graph.json";
pub const GRAPH_DOT_FILE: &str = "graph.dot";
pub const FREEVIEWS_FILE: &str = "freeviews.json";
pub const RECTIFY_PAIRS_FILE: &str = "rectify_pairs.json";
pub const BATCHES_FILE: &str = "batches.jsonl";
pub const SCHEDULE_FILE: &str = "schedule.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RENDERS_DIR: &str = "renders";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing prerequisite {}", .0.display())]
    MissingPrerequisite(PathBuf),
    #[error("config line {line}: {message}")]
    ConfigParse { line: usize, message: String },
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error(transparent)]
    Feed(#[from] FeedError),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Grid,
    Candidates,
    Graph,
    Select,
    Render,
    Batches,
    Schedule,
    All,
}

impl Stage {
    /// Concrete stages in execution order.
    pub const SEQUENCE: [Stage; 7] =
        [Stage::Grid, Stage::Candidates, Stage::Graph, Stage::Select, Stage::Render, Stage::Batches, Stage::Schedule];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Grid => "grid",
            Stage::Candidates => "candidates",
            Stage::Graph => "graph",
            Stage::Select => "select",
            Stage::Render => "render",
            Stage::Batches => "batches",
            Stage::Schedule => "schedule",
            Stage::All => "all",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::SEQUENCE
            .iter()
            .chain(&[Stage::All])
            .find(|st| st.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridSettings {
    pub resolution: u32,
    pub epsilon: f64,
    pub lo_quantile: f64,
    pub hi_quantile: f64,
    pub pad: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            resolution: DEFAULT_RESOLUTION,
            epsilon: DEFAULT_EPSILON,
            lo_quantile: DEFAULT_LO_QUANTILE,
            hi_quantile: DEFAULT_HI_QUANTILE,
            pad: DEFAULT_BOUNDS_PAD,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub scene_path: PathBuf,
    pub camera_path: PathBuf,
    pub camera_format: CameraFormat,
    pub output_dir: PathBuf,
    pub grid: GridSettings,
    pub edge_cutoff: f64,
    pub placement: PlacementConfig,
    pub selector: SelectorConfig,
    pub curriculum: CurriculumConfig,
    pub schedule: ScheduleConfig,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            scene_path: PathBuf::from("scene.ply"),
            camera_path: PathBuf::from("transforms.json"),
            camera_format: CameraFormat::TransformsJson,
            output_dir: PathBuf::from("out"),
            grid: GridSettings::default(),
            edge_cutoff: DEFAULT_EDGE_CUTOFF,
            placement: PlacementConfig::default(),
            selector: SelectorConfig::default(),
            curriculum: CurriculumConfig::default(),
            schedule: ScheduleConfig::default(),
            seed: 0,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, PipelineError> {
    value.parse().map_err(|_| PipelineError::ConfigParse { line, message: format!("bad value `{value}` for `{key}`") })
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>, PipelineError> {
    value.split(',').map(|t| parse_value(line, key, t.trim())).collect()
}

fn parse_range(line: usize, key: &str, value: &str) -> Result<(usize, usize), PipelineError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse_value(line, key, a)?, parse_value(line, key, b)?)),
        _ => Err(PipelineError::ConfigParse { line, message: format!("`{key}` expects `lo, hi`") }),
    }
}

impl PipelineConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut c = PipelineConfig::default();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(PipelineError::ConfigParse {
                    line,
                    message: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or(PipelineError::ConfigParse {
                line,
                message: format!("expected `key = value`, found `{content}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let path = |v: &str| base_dir.join(v);
            let g = &mut c.grid;
            let p = &mut c.placement;
            let s = &mut c.selector;
            let cu = &mut c.curriculum;
            let sc = &mut c.schedule;
            match (section.as_str(), key) {
                ("", "seed") => c.seed = parse_value(line, key, value)?,
                ("input", "scene") => c.scene_path = path(value),
                ("input", "cameras") => c.camera_path = path(value),
                ("input", "camera_format") => {
                    c.camera_format = value.parse().map_err(|m| PipelineError::ConfigParse { line, message: m })?
                }
                ("output", "dir") => c.output_dir = path(value),
                ("grid", "resolution") => g.resolution = parse_value(line, key, value)?,
                ("grid", "epsilon") => g.epsilon = parse_value(line, key, value)?,
                ("grid", "lo_quantile") => g.lo_quantile = parse_value(line, key, value)?,
                ("grid", "hi_quantile") => g.hi_quantile = parse_value(line, key, value)?,
                ("grid", "pad") => g.pad = parse_value(line, key, value)?,
                ("graph", "edge_cutoff") => c.edge_cutoff = parse_value(line, key, value)?,
                ("placement", "num_anchors") => p.num_anchors = parse_value(line, key, value)?,
                ("placement", "frames_per_traj") => p.frames_per_traj = parse_value(line, key, value)?,
                ("placement", "anchor_method") => {
                    p.anchor_method = match value {
                        "kmeans" => AnchorMethod::Kmeans,
                        "farthest_point" => AnchorMethod::FarthestPoint,
                        _ => return Err(PipelineError::ConfigParse { line, message: format!("unknown anchor method `{value}`") }),
                    }
                }
                ("placement", "anchor_pos_sigma") => p.anchor_pos_sigma = parse_value(line, key, value)?,
                ("placement", "anchor_rot_jitter_deg") => p.anchor_rot_jitter_deg = parse_value(line, key, value)?,
                ("placement", "pool_pos_sigma") => p.pool_pos_sigma = parse_value(line, key, value)?,
                ("placement", "pool_rot_jitter_deg") => p.pool_rot_jitter_deg = parse_value(line, key, value)?,
                ("placement", "jitter_fraction") => p.jitter_fraction = parse_value(line, key, value)?,
                ("placement", "central_fraction") => p.central_fraction = parse_value(line, key, value)?,
                ("placement", "step_fraction") => p.step_fraction = parse_value(line, key, value)?,
                ("selector", "nms_wiou_threshold") => s.nms_wiou_threshold = parse_value(line, key, value)?,
                ("selector", "nms_target") => s.nms_target = parse_value(line, key, value)?,
                ("selector", "quality_max") => s.quality_max = parse_value(line, key, value)?,
                ("selector", "depth_range_min") => s.depth_range_min = parse_value(line, key, value)?,
                ("selector", "black_ratio_max") => s.black_ratio_max = parse_value(line, key, value)?,
                ("selector", "rectify_steps") => s.rectify_steps = parse_list(line, key, value)?,
                ("selector", "final_target") => s.final_target = parse_value(line, key, value)?,
                ("selector", "occupancy_reject_percentile") => s.occupancy_reject_percentile = parse_value(line, key, value)?,
                ("selector", "max_primitives") => s.max_primitives = parse_value(line, key, value)?,
                ("render", "width") => s.render_width = parse_value(line, key, value)?,
                ("render", "height") => s.render_height = parse_value(line, key, value)?,
                ("render", "alpha_floor") => s.alpha_floor = parse_value(line, key, value)?,
                ("curriculum", "inputs_per_batch") => cu.inputs_per_batch = parse_value(line, key, value)?,
                ("curriculum", "targets_per_batch") => cu.targets_per_batch = parse_value(line, key, value)?,
                ("curriculum", "warmup_iters") => cu.warmup_iters = parse_value(line, key, value)?,
                ("curriculum", "total_iters") => cu.total_iters = parse_value(line, key, value)?,
                ("curriculum", "frame_dist_warm") => cu.frame_dist_warm = parse_range(line, key, value)?,
                ("curriculum", "frame_dist_full") => cu.frame_dist_full = parse_range(line, key, value)?,
                ("curriculum", "graph_probability") => cu.graph_probability = parse_value(line, key, value)?,
                ("curriculum", "late_stage") => {
                    cu.late_stage = match value {
                        "weighted" => LateStage::Weighted,
                        "separated" => LateStage::Separated,
                        _ => return Err(PipelineError::ConfigParse { line, message: format!("unknown late stage `{value}`") }),
                    }
                }
                ("schedule", "interval") => sc.interval = parse_value(line, key, value)?,
                ("schedule", "per_event") => sc.per_event = parse_value(line, key, value)?,
                ("schedule", "weight_band") => {
                    let v = parse_list(line, key, value)?;
                    match v.as_slice() {
                        [lo, hi] if lo <= hi => sc.weight_band = (*lo, *hi),
                        _ => return Err(PipelineError::ConfigParse { line, message: "`weight_band` expects `lo, hi`".into() }),
                    }
                }
                _ => {
                    let at = if section.is_empty() { String::new() } else { format!(" in [{section}]") };
                    return Err(PipelineError::ConfigParse { line, message: format!("unknown key `{key}`{at}") });
                }
            }
        }
        c.set_seed(c.seed);
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Sets the root seed and re-derives every stage seed from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.placement.seed = derive_seed(seed, "placement");
        self.curriculum.seed = derive_seed(seed, "curriculum");
    }

    fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig { quality_max: self.selector.quality_max, total_iters: self.curriculum.total_iters, ..self.schedule }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.output_dir.join(name)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
    /// Selection funnel, once the select stage has run.
    pub counts: Option<SelectionCounts>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn hash_file(path: &Path) -> Result<String, PipelineError> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingPrerequisite(path.to_path_buf()))
    }
}

/// Manifest key for a file: its path relative to the output directory when
/// inside it, else the file name.
fn file_key(config: &PipelineConfig, path: &Path) -> String {
    path.strip_prefix(&config.output_dir)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|_| path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
}

struct StageRun<'a> {
    config: &'a PipelineConfig,
    record: StageRecord,
}

impl<'a> StageRun<'a> {
    fn new(config: &'a PipelineConfig, inputs: &[PathBuf]) -> Result<Self, PipelineError> {
        let mut record = StageRecord::default();
        for p in inputs {
            require(p)?;
            record.inputs.insert(file_key(config, p), hash_file(p)?);
        }
        Ok(Self { config, record })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        let path = self.config.out(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.record.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    fn output_file(&mut self, name: &str) -> Result<(), PipelineError> {
        let hash = hash_file(&self.config.out(name))?;
        self.record.outputs.insert(name.to_string(), hash);
        Ok(())
    }

    fn count(&mut self, key: &str, n: usize) {
        self.record.counts.insert(key.to_string(), n);
    }
}

fn load_training(config: &PipelineConfig, grid: &CertaintyGrid) -> Result<Vec<CameraPose>, PipelineError> {
    let mut poses = load_cameras(&config.camera_path, config.camera_format)?;
    apply_default_clip(&mut poses, grid.bounds());
    Ok(poses)
}

fn load_scene(config: &PipelineConfig) -> Result<GaussianScene, PipelineError> {
    require(&config.scene_path)?;
    Ok(load_gaussian_ply(&config.scene_path)?)
}

fn load_grid(config: &PipelineConfig) -> Result<CertaintyGrid, PipelineError> {
    let path = config.out(GRID_FILE);
    require(&path)?;
    Ok(CertaintyGrid::read_binary(&path)?)
}

fn load_pool(config: &PipelineConfig) -> Result<Vec<CandidatePose>, PipelineError> {
    let path = config.out(CANDIDATES_FILE);
    require(&path)?;
    Ok(candidates_from_json(&fs::read_to_string(path)?)?)
}

#[derive(Serialize, Deserialize)]
struct FreeViewsFile {
    counts: SelectionCounts,
    records: Vec<FreeViewRecord>,
}

fn load_freeviews(config: &PipelineConfig) -> Result<Vec<FreeViewRecord>, PipelineError> {
    let path = config.out(FREEVIEWS_FILE);
    require(&path)?;
    let file: FreeViewsFile = serde_json::from_str(&fs::read_to_string(path)?)?;
    Ok(file.records)
}

fn selected_records(records: Vec<FreeViewRecord>) -> Vec<FreeViewRecord> {
    records.into_iter().filter(|r| r.status.is_selected()).collect()
}

/// Graph over training views and the final free-view poses.
fn final_graph(
    config: &PipelineConfig,
    grid: &CertaintyGrid,
    training: &[CameraPose],
    selected: &[FreeViewRecord],
) -> Result<ViewGraph, PipelineError> {
    let mut poses = training.to_vec();
    for r in selected {
        poses.push(r.final_pose()?);
    }
    Ok(build_view_graph(&poses, grid, config.edge_cutoff)?)
}

fn run_grid(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run = StageRun::new(config, &[config.scene_path.clone()])?;
    let scene = load_gaussian_ply(&config.scene_path)?;
    let g = &config.grid;
    let bounds = compute_bounds(&scene, g.lo_quantile, g.hi_quantile, g.pad)?;
    let grid = build_certainty_grid(&scene, &bounds, g.resolution, g.epsilon)?;
    fs::create_dir_all(&config.output_dir)?;
    grid.write_binary(&config.out(GRID_FILE))?;
    run.output_file(GRID_FILE)?;
    run.count("primitives", scene.count());
    run.count("occupied_voxels", grid.occupied_count());
    Ok(run.record)
}

fn run_candidates(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run = StageRun::new(config, &[config.out(GRID_FILE), config.camera_path.clone()])?;
    let grid = load_grid(config)?;
    let training = load_training(config, &grid)?;
    let pool = generate_candidate_pool(&training, &grid, &config.placement)?;
    run.write(CANDIDATES_FILE, candidates_to_json(&pool).as_bytes())?;
    run.count("training", training.len());
    run.count("pool", pool.len());
    Ok(run.record)
}

fn run_graph(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run =
        StageRun::new(config, &[config.out(GRID_FILE), config.out(CANDIDATES_FILE), config.camera_path.clone()])?;
    let grid = load_grid(config)?;
    let training = load_training(config, &grid)?;
    let pool = load_pool(config)?;
    let (feasible, _) = feasibility_filter(&pool, &grid, grid.bounds(), &config.selector);
    let mut poses = training.clone();
    poses.extend(feasible.iter().map(|c| c.pose.clone()));
    let graph = build_view_graph(&poses, &grid, config.edge_cutoff)?;
    run.write(GRAPH_FILE, graph.to_json().as_bytes())?;
    run.write(GRAPH_DOT_FILE, graph.to_dot().as_bytes())?;
    run.count("nodes", graph.len());
    run.count("edges", graph.edge_count());
    run.count("feasible", feasible.len());
    Ok(run.record)
}

fn run_select(config: &PipelineConfig) -> Result<(StageRecord, SelectionCounts), PipelineError> {
    let mut run = StageRun::new(
        config,
        &[
            config.scene_path.clone(),
            config.out(GRID_FILE),
            config.out(CANDIDATES_FILE),
            config.out(GRAPH_FILE),
            config.camera_path.clone(),
        ],
    )?;
    config.selector.validate()?;
    let scene = load_scene(config)?;
    let grid = load_grid(config)?;
    let training = load_training(config, &grid)?;
    let pool = load_pool(config)?;
    let mut graph = ViewGraph::from_json(&fs::read_to_string(config.out(GRAPH_FILE))?)?;
    // graph nodes beyond the training set are exactly the feasible candidates
    let feasible: Vec<CandidatePose> = pool.iter().filter(|c| graph.contains(c.pose.id)).cloned().collect();
    let mut poses = training.clone();
    poses.extend(feasible.iter().map(|c| c.pose.clone()));
    graph.attach_visibility(&poses, &grid)?;
    let scorer = NaturalnessScorer::default();
    let ctx = GateContext {
        scene: &scene,
        grid: &grid,
        graph: &graph,
        training: &training,
        scene_diag: grid.bounds().diagonal(),
        scorer: &scorer,
    };
    let mut outcome = select_free_views(&pool, &feasible, &ctx, &config.selector);
    for r in outcome.records.iter_mut().filter(|r| r.status.is_selected()) {
        r.render_paths = Some(RenderPaths { color: freeview_image_name(r.id()), depth: freeview_depth_name(r.id()) });
    }
    let pairs = rectify_pairs(&outcome.records);
    let file = FreeViewsFile { counts: outcome.counts, records: outcome.records };
    run.write(FREEVIEWS_FILE, serde_json::to_string_pretty(&file)?.as_bytes())?;
    run.write(RECTIFY_PAIRS_FILE, serde_json::to_string_pretty(&pairs)?.as_bytes())?;
    let c = outcome.counts;
    for (k, v) in [("pool", c.pool), ("feasible", c.feasible), ("nms", c.nms), ("gated", c.gated), ("final", c.r#final)] {
        run.count(k, v);
    }
    Ok((run.record, c))
}

fn run_render(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run = StageRun::new(config, &[config.scene_path.clone(), config.out(FREEVIEWS_FILE), config.camera_path.clone()])?;
    let scene = load_scene(config)?;
    let selected = selected_records(load_freeviews(config)?);
    let training = load_cameras(&config.camera_path, config.camera_format)?;
    let s = &config.selector;
    fs::create_dir_all(config.out(RENDERS_DIR))?;
    let written: Vec<Vec<String>> = selected
        .par_iter()
        .map(|r| -> Result<Vec<String>, PipelineError> {
            let pose = r.final_pose()?.with_resolution(s.render_width, s.render_height);
            let out = render(&scene, &pose, s.max_primitives);
            let (color, depth) = (freeview_image_name(r.id()), freeview_depth_name(r.id()));
            out.write_files(&config.out(&color), &config.out(&depth), None)?;
            Ok(vec![color, depth])
        })
        .collect::<Result<_, _>>()?;
    let refs: BTreeSet<u32> = selected.iter().filter_map(|r| r.reference_id).collect();
    let ref_written: Vec<String> = training
        .par_iter()
        .filter(|p| refs.contains(&p.id))
        .map(|p| -> Result<String, PipelineError> {
            let mut pose = p.with_resolution(s.render_width, s.render_height);
            pose.near = 1e-3;
            let name = training_image_name(p.id);
            render(&scene, &pose, s.max_primitives).color.write_png(&config.out(&name))?;
            Ok(name)
        })
        .collect::<Result<_, _>>()?;
    for name in written.iter().flatten().chain(&ref_written) {
        run.output_file(name)?;
    }
    run.count("freeview_renders", written.len());
    run.count("reference_renders", ref_written.len());
    Ok(run.record)
}

fn run_batches(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run = StageRun::new(config, &[config.out(GRID_FILE), config.out(FREEVIEWS_FILE), config.camera_path.clone()])?;
    let grid = load_grid(config)?;
    let training = load_training(config, &grid)?;
    let selected = selected_records(load_freeviews(config)?);
    let graph = final_graph(config, &grid, &training, &selected)?;
    let sequence: Vec<u32> = training.iter().map(|p| p.id).collect();
    let batches = generate_batches(&graph, &sequence, &config.curriculum)?;
    let mut buf = BufWriter::new(Vec::new());
    for b in &batches {
        serde_json::to_writer(&mut buf, b)?;
        buf.write_all(b"\n")?;
    }
    let bytes = buf.into_inner().map_err(|e| e.into_error())?;
    run.write(BATCHES_FILE, &bytes)?;
    run.count("batches", batches.len());
    Ok(run.record)
}

fn run_schedule(config: &PipelineConfig) -> Result<StageRecord, PipelineError> {
    let mut run = StageRun::new(config, &[config.out(GRID_FILE), config.out(FREEVIEWS_FILE), config.camera_path.clone()])?;
    let grid = load_grid(config)?;
    let training = load_training(config, &grid)?;
    let selected = selected_records(load_freeviews(config)?);
    let graph = final_graph(config, &grid, &training, &selected)?;
    let training_ids: BTreeSet<u32> = training.iter().map(|p| p.id).collect();
    let schedule = build_pseudo_gt_schedule(&graph, &training_ids, &selected, &config.schedule_config())?;
    run.write(SCHEDULE_FILE, serde_json::to_string_pretty(&schedule)?.as_bytes())?;
    run.count("events", schedule.events.len());
    run.count("scheduled", schedule.events.iter().map(|e| e.freeview_ids.len()).sum());
    Ok(run.record)
}

fn read_manifest(path: &Path) -> Manifest {
    fs::read_to_string(path).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
}

/// Runs one stage (or all, in order) and updates `manifest.json`.
pub fn run_stage(stage: Stage, config: &PipelineConfig) -> Result<Manifest, PipelineError> {
    let stages: Vec<Stage> = if stage == Stage::All { Stage::SEQUENCE.to_vec() } else { vec![stage] };
    fs::create_dir_all(&config.output_dir)?;
    let manifest_path = config.out(MANIFEST_FILE);
    let mut manifest = read_manifest(&manifest_path);
    if manifest.seed != config.seed {
        manifest = Manifest::default();
    }
    manifest.seed = config.seed;
    for st in stages {
        let start = Instant::now();
        let mut record = match st {
            Stage::Grid => run_grid(config)?,
            Stage::Candidates => run_candidates(config)?,
            Stage::Graph => run_graph(config)?,
            Stage::Select => {
                let (r, counts) = run_select(config)?;
                manifest.counts = Some(counts);
                r
            }
            Stage::Render => run_render(config)?,
            Stage::Batches => run_batches(config)?,
            Stage::Schedule => run_schedule(config)?,
            Stage::All => unreachable!("expanded above"),
        };
        record.wall_seconds = start.elapsed().as_secs_f64();
        info!("stage {st} finished in {:.2} s", record.wall_seconds);
        manifest.stages.insert(st.name().to_string(), record);
        fs::write(&manifest_path, serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_resolves_paths() {
        let text = "seed = 9\n[input]\nscene = a/s.ply\ncameras = cams\ncamera_format = colmap_text\n\
                    [output]\ndir = out\n[grid]\nresolution = 64\n[selector]\nrectify_steps = 0.8, 0.4\n\
                    [render]\nwidth = 128 # trailing comment\n[curriculum]\nframe_dist_full = 12, 30\n";
        let c = PipelineConfig::parse(text, Path::new("/base")).unwrap();
        assert_eq!(c.scene_path, PathBuf::from("/base/a/s.ply"));
        assert_eq!(c.camera_format, CameraFormat::ColmapText);
        assert_eq!(c.grid.resolution, 64);
        assert_eq!(c.selector.rectify_steps, vec![0.8, 0.4]);
        assert_eq!(c.selector.render_width, 128);
        assert_eq!(c.curriculum.frame_dist_full, (12, 30));
        assert_eq!(c.placement.seed, derive_seed(9, "placement"));
        assert_eq!(c.selector.nms_target, 500);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let err = PipelineConfig::parse("[grid]\nresolution = 64\nepsilon = abc\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, PipelineError::ConfigParse { line: 3, ref message } if message.contains("epsilon")));
        let err = PipelineConfig::parse("[grid]\nbogus = 1\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, PipelineError::ConfigParse { line: 2, .. }));
        let err = PipelineConfig::parse("no equals sign\n", Path::new(".")).unwrap_err();
        assert!(matches!(err, PipelineError::ConfigParse { line: 1, .. }));
    }

    #[test]
    fn stage_names_round_trip() {
        for st in Stage::SEQUENCE.iter().chain(&[Stage::All]) {
            assert_eq!(st.name().parse::<Stage>().unwrap(), *st);
        }
        assert!("bogus".parse::<Stage>().is_err());
    }

    #[test]
    fn select_without_graph_names_it() {
        let dir = tempfile::tempdir().unwrap();
        crate::synthetic::write_synthetic_bundle(dir.path(), 1).unwrap();
        let config = PipelineConfig {
            scene_path: dir.path().join("scene.ply"),
            camera_path: dir.path().join("transforms.json"),
            output_dir: dir.path().join("out"),
            ..Default::default()
        };
        match run_stage(Stage::Select, &config) {
            Err(PipelineError::MissingPrerequisite(p)) => assert!(p.ends_with(GRID_FILE)),
            other => panic!("unexpected {other:?}"),
        }
        run_stage(Stage::Grid, &config).unwrap();
        run_stage(Stage::Candidates, &config).unwrap();
        match run_stage(Stage::Select, &config) {
            Err(PipelineError::MissingPrerequisite(p)) => assert!(p.ends_with(GRAPH_FILE)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
