//! Certainty-guided free-view generation for reconstructed Gaussian scenes.
//!
//! The pipeline turns a Gaussian scene and its sparse training cameras into
//! a filtered set of novel camera poses with renders, a weighted view graph,
//! curriculum batches and a pseudo-ground-truth schedule:
//!
//! 1. [`grid`] voxelizes the scene into a sparse certainty grid.
//! 2. [`trajectory`] places candidate cameras along ten trajectory modes.
//! 3. [`graph`] links views by weighted visibility overlap.
//! 4. [`select`] filters, suppresses, gates and rectifies candidates.
//! 5. [`feeds`] produces training batches, schedules and the free-view loss.
//!
//! [`pipeline`] wires the stages together over on-disk sidecars.

pub mod feeds;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod image;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod seed;
pub mod select;
pub mod synthetic;
pub mod trajectory;

pub use feeds::{
    build_pseudo_gt_schedule, free_view_loss, sample_batch, ssim, CurriculumBatch, CurriculumConfig, CurriculumSampler,
    PseudoGtSchedule, ScheduleConfig,
};
pub use geometry::{Quat, Vec3};
pub use graph::{build_view_graph, compute_visibility, select_reference, wiou, ViewGraph, VisibilityVector};
pub use grid::{build_certainty_grid, CertaintyGrid};
pub use image::RgbImage;
pub use pipeline::{run_stage, Manifest, PipelineConfig, PipelineError, Stage};
pub use render::{assess, render, NaturalnessScorer, QualityReport, QualityScorer, RenderOutput};
pub use scene::{
    compute_bounds, load_cameras, load_gaussian_ply, CameraFormat, CameraPose, GaussianScene, Intrinsics, SceneBounds,
    ViewKind,
};
pub use select::{nms_select, rectify_pose, FreeViewRecord, SelectorConfig, ViewStatus};
pub use trajectory::{generate_candidate_pool, generate_trajectory, CandidatePose, PlacementConfig, TrajectoryMode};
