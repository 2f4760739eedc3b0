//! COLMAP text models and transforms-style JSON manifests.
//!
//! Poses come back as `ViewKind::Training` with ids dense from 0 in file
//! sequence order. Clip planes are placeholders until
//! [`super::apply_default_clip`] sets them from the scene bounds.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::{normalized_rotation, CameraPose, Intrinsics, SceneError, ViewKind};
use crate::geometry::Vec3;

const PLACEHOLDER_NEAR: f64 = 0.01;
const PLACEHOLDER_FAR: f64 = 1.0e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraFormat {
    ColmapText,
    TransformsJson,
}

impl FromStr for CameraFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "colmap_text" | "colmap" => Ok(Self::ColmapText),
            "transforms_json" | "transforms" => Ok(Self::TransformsJson),
            other => Err(format!("unknown camera format `{other}`")),
        }
    }
}

/// Loads training cameras. For `ColmapText`, `path` is the directory holding
/// `cameras.txt` and `images.txt`; for `TransformsJson` it is the manifest.
pub fn load_cameras(path: &Path, format: CameraFormat) -> Result<Vec<CameraPose>, SceneError> {
    match format {
        CameraFormat::ColmapText => load_colmap_text(path),
        CameraFormat::TransformsJson => load_transforms_json(path),
    }
}

fn malformed(msg: impl Into<String>) -> SceneError {
    SceneError::MalformedFile(msg.into())
}

fn parse_num<T: FromStr>(tok: &str, what: &str, line_no: usize) -> Result<T, SceneError> {
    tok.parse().map_err(|_| malformed(format!("line {line_no}: bad {what} `{tok}`")))
}

fn load_colmap_text(dir: &Path) -> Result<Vec<CameraPose>, SceneError> {
    let cameras_txt = fs::read_to_string(dir.join("cameras.txt"))?;
    let mut intrinsics: HashMap<u32, Intrinsics> = HashMap::new();
    for (i, line) in cameras_txt.lines().enumerate() {
        let line_no = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 4 {
            return Err(malformed(format!("cameras.txt line {line_no}: too few fields")));
        }
        let id: u32 = parse_num(tok[0], "camera id", line_no)?;
        let width: u32 = parse_num(tok[2], "width", line_no)?;
        let height: u32 = parse_num(tok[3], "height", line_no)?;
        let params = tok[4..]
            .iter()
            .map(|t| parse_num::<f64>(t, "parameter", line_no))
            .collect::<Result<Vec<_>, _>>()?;
        let k = match (tok[1], params.as_slice()) {
            ("PINHOLE", [fx, fy, cx, cy]) => Intrinsics { fx: *fx, fy: *fy, cx: *cx, cy: *cy, width, height },
            ("SIMPLE_PINHOLE", [f, cx, cy]) => Intrinsics { fx: *f, fy: *f, cx: *cx, cy: *cy, width, height },
            ("PINHOLE", _) | ("SIMPLE_PINHOLE", _) => {
                return Err(malformed(format!("cameras.txt line {line_no}: wrong parameter count")))
            }
            (model, _) => return Err(SceneError::UnsupportedCameraModel(model.to_string())),
        };
        intrinsics.insert(id, k);
    }

    let images_txt = fs::read_to_string(dir.join("images.txt"))?;
    let mut declared = None;
    let mut entries = Vec::new();
    let mut lines = images_txt.lines().enumerate();
    while let Some((i, raw)) = lines.next() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.starts_with('#') {
            if let Some(rest) = line.strip_prefix("# Number of images:") {
                let n = rest.split(',').next().unwrap_or("").trim();
                declared = n.parse::<usize>().ok();
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let tok: Vec<&str> = line.split_whitespace().collect();
        if tok.len() < 10 {
            return Err(malformed(format!("images.txt line {line_no}: expected 10 fields")));
        }
        let image_id: u32 = parse_num(tok[0], "image id", line_no)?;
        let v: Vec<f64> =
            tok[1..8].iter().map(|t| parse_num(t, "pose value", line_no)).collect::<Result<_, _>>()?;
        let camera_id: u32 = parse_num(tok[8], "camera id", line_no)?;
        let name = tok[9..].join(" ");
        let rotation = normalized_rotation(v[0], v[1], v[2], v[3])
            .ok_or_else(|| malformed(format!("images.txt line {line_no}: zero quaternion")))?;
        let k = *intrinsics
            .get(&camera_id)
            .ok_or_else(|| malformed(format!("images.txt line {line_no}: unknown camera {camera_id}")))?;
        entries.push((name, image_id, rotation, Vec3::new(v[4], v[5], v[6]), k));
        // the 2D points line follows every pose line, possibly empty
        lines.next();
    }
    if let Some(declared) = declared {
        if declared != entries.len() {
            return Err(SceneError::PoseCountMismatch { declared, found: entries.len() });
        }
    }
    if entries.is_empty() {
        return Err(malformed("images.txt contains no poses"));
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(entries
        .into_iter()
        .enumerate()
        .map(|(id, (_, _, rotation, translation, intrinsics))| CameraPose {
            id: id as u32,
            kind: ViewKind::Training,
            rotation,
            translation,
            intrinsics,
            near: PLACEHOLDER_NEAR,
            far: PLACEHOLDER_FAR,
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct TransformsFile {
    fl_x: f64,
    fl_y: f64,
    cx: f64,
    cy: f64,
    w: u32,
    h: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_count: Option<usize>,
    frames: Vec<TransformsFrame>,
}

#[derive(Serialize, Deserialize)]
struct TransformsFrame {
    file_path: String,
    transform_matrix: [[f64; 4]; 4],
}

fn load_transforms_json(path: &Path) -> Result<Vec<CameraPose>, SceneError> {
    let text = fs::read_to_string(path)?;
    let file: TransformsFile = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    if let Some(declared) = file.frame_count {
        if declared != file.frames.len() {
            return Err(SceneError::PoseCountMismatch { declared, found: file.frames.len() });
        }
    }
    if file.frames.is_empty() {
        return Err(malformed("transforms file has no frames"));
    }
    let intrinsics = Intrinsics { fx: file.fl_x, fy: file.fl_y, cx: file.cx, cy: file.cy, width: file.w, height: file.h };
    file.frames
        .iter()
        .enumerate()
        .map(|(id, frame)| {
            let m = &frame.transform_matrix;
            if m.iter().flatten().any(|v| !v.is_finite()) {
                return Err(malformed(format!("frame {}: non-finite transform", frame.file_path)));
            }
            let c2w = Matrix3::new(m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]);
            let ortho = (c2w.transpose() * c2w - Matrix3::identity()).abs().max();
            if ortho > 1e-4 || c2w.determinant() < 0.0 {
                return Err(malformed(format!("frame {}: rotation block is not a proper rotation", frame.file_path)));
            }
            let w2c = c2w.transpose();
            let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(w2c));
            let center = Vec3::new(m[0][3], m[1][3], m[2][3]);
            Ok(CameraPose::from_center(id as u32, ViewKind::Training, rotation, center, intrinsics, PLACEHOLDER_NEAR, PLACEHOLDER_FAR))
        })
        .collect()
}

/// Writes poses as a COLMAP text model (one PINHOLE camera per pose).
pub fn write_colmap_text(poses: &[CameraPose], dir: &Path) -> Result<(), SceneError> {
    fs::create_dir_all(dir)?;
    let mut cams = String::from("# Camera list with one line of data per camera:\n");
    let mut imgs = format!("# Image list with two lines of data per image:\n# Number of images: {}\n", poses.len());
    for (i, p) in poses.iter().enumerate() {
        let k = &p.intrinsics;
        cams.push_str(&format!("{} PINHOLE {} {} {} {} {} {}\n", i + 1, k.width, k.height, k.fx, k.fy, k.cx, k.cy));
        let q = p.rotation.quaternion();
        let t = &p.translation;
        imgs.push_str(&format!(
            "{} {} {} {} {} {} {} {} {} frame_{:05}.png\n\n",
            i + 1, q.w, q.i, q.j, q.k, t.x, t.y, t.z, i + 1, i
        ));
    }
    fs::write(dir.join("cameras.txt"), cams)?;
    fs::write(dir.join("images.txt"), imgs)?;
    Ok(())
}

/// Writes poses as a transforms manifest (camera→world, row-major). All
/// poses must share the intrinsics of the first one.
pub fn write_transforms_json(poses: &[CameraPose], path: &Path) -> Result<(), SceneError> {
    let first = poses.first().ok_or_else(|| SceneError::InvalidArgument("no poses to write".into()))?;
    let k = first.intrinsics;
    let frames = poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let r = p.rotation.inverse().to_rotation_matrix().into_inner();
            let c = p.center();
            let mut m = [[0.0; 4]; 4];
            for row in 0..3 {
                for col in 0..3 {
                    m[row][col] = r[(row, col)];
                }
                m[row][3] = c[row];
            }
            m[3][3] = 1.0;
            TransformsFrame { file_path: format!("images/frame_{i:05}.png"), transform_matrix: m }
        })
        .collect();
    let file = TransformsFile { fl_x: k.fx, fl_y: k.fy, cx: k.cx, cy: k.cy, w: k.width, h: k.height, frame_count: None, frames };
    let text = serde_json::to_string_pretty(&file).map_err(|e| SceneError::MalformedFile(e.to_string()))?;
    fs::write(path, text)?;
    Ok(())
}
