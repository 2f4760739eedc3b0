//! Reader and writer for the usual 3DGS point-cloud layout.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{normalized_rotation, GaussianScene, SceneError};
use crate::geometry::Vec3;

/// Zeroth-order spherical harmonic basis constant.
const SH_C0: f64 = 0.282_094_791_773_878_14;

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0",
    "rot_1", "rot_2", "rot_3",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Clone, Copy, Debug)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn decode_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, ScalarType)>,
    has_list: bool,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
}

fn malformed(msg: impl Into<String>) -> SceneError {
    SceneError::MalformedFile(msg.into())
}

fn read_header<R: BufRead>(reader: &mut R) -> Result<Header, SceneError> {
    let mut line = String::new();
    let mut next_line = |reader: &mut R| -> Result<String, SceneError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(malformed("unexpected end of PLY header"));
        }
        Ok(line.trim().to_string())
    };
    if next_line(reader)? != "ply" {
        return Err(malformed("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLittleEndian),
            ["format", other, ..] => return Err(malformed(format!("unsupported PLY format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| malformed(format!("bad element count `{count}`")))?,
                props: Vec::new(),
                has_list: false,
            }),
            ["property", "list", ..] => {
                elements.last_mut().ok_or_else(|| malformed("property before element"))?.has_list = true;
            }
            ["property", ty, name] => {
                let ty = ScalarType::parse(ty).ok_or_else(|| malformed(format!("unknown property type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| malformed("property before element"))?
                    .props
                    .push((name.to_string(), ty));
            }
            _ => return Err(malformed(format!("unrecognised header line `{l}`"))),
        }
    }
    let format = format.ok_or_else(|| malformed("missing format line"))?;
    Ok(Header { format, elements })
}

/// Loads a 3DGS PLY (binary little-endian or ASCII).
///
/// Opacities are stored as logits and pass through the logistic function;
/// DC colors are converted from SH coefficients to RGB. Higher SH bands and
/// other extra properties are ignored with a warning.
pub fn load_gaussian_ply(path: &Path) -> Result<GaussianScene, SceneError> {
    let mut reader = BufReader::new(File::open(path)?);
    let header = read_header(&mut reader)?;
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| malformed("no `vertex` element"))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.has_list {
        return Err(malformed("list properties on vertex element"));
    }
    let mut columns = [0usize; REQUIRED.len()];
    for (slot, name) in columns.iter_mut().zip(REQUIRED) {
        *slot = vertex
            .props
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| SceneError::MissingProperty(name.to_string()))?;
    }
    let extra: Vec<&str> =
        vertex.props.iter().map(|(n, _)| n.as_str()).filter(|n| !REQUIRED.contains(n)).collect();
    if !extra.is_empty() {
        log::warn!("{}: ignoring {} extra vertex properties ({}…)", path.display(), extra.len(), extra[0]);
    }
    if vertex.count == 0 {
        return Err(SceneError::EmptyScene);
    }

    let width = vertex.props.len();
    let mut values = vec![0f64; vertex.count * width];
    match header.format {
        Format::BinaryLittleEndian => {
            for e in &header.elements[..vertex_pos] {
                if e.has_list {
                    return Err(malformed(format!("cannot skip list element `{}`", e.name)));
                }
                let stride: usize = e.props.iter().map(|(_, t)| t.size()).sum();
                std::io::copy(&mut (&mut reader).take((stride * e.count) as u64), &mut std::io::sink())?;
            }
            let stride: usize = vertex.props.iter().map(|(_, t)| t.size()).sum();
            let mut buf = vec![0u8; stride * vertex.count];
            reader.read_exact(&mut buf).map_err(|_| malformed("truncated binary vertex data"))?;
            for (row, chunk) in buf.chunks_exact(stride).enumerate() {
                let mut offset = 0;
                for (col, (_, ty)) in vertex.props.iter().enumerate() {
                    values[row * width + col] = ty.decode_le(&chunk[offset..]);
                    offset += ty.size();
                }
            }
        }
        Format::Ascii => {
            let mut lines = reader.lines();
            for e in &header.elements[..vertex_pos] {
                for _ in 0..e.count {
                    lines.next().ok_or_else(|| malformed("truncated ASCII data"))??;
                }
            }
            for row in 0..vertex.count {
                let line = lines.next().ok_or_else(|| malformed("truncated ASCII vertex data"))??;
                let mut tokens = line.split_whitespace();
                for col in 0..width {
                    let tok = tokens.next().ok_or_else(|| malformed(format!("short vertex row {row}")))?;
                    values[row * width + col] =
                        tok.parse().map_err(|_| malformed(format!("bad number `{tok}` in row {row}")))?;
                }
            }
        }
    }

    let n = vertex.count;
    let mut centers = Vec::with_capacity(n);
    let mut log_scales = Vec::with_capacity(n);
    let mut rotations = Vec::with_capacity(n);
    let mut opacities = Vec::with_capacity(n);
    let mut dc_colors = Vec::with_capacity(n);
    for row in 0..n {
        let get = |k: usize| values[row * width + columns[k]];
        if (0..REQUIRED.len()).any(|k| !get(k).is_finite()) {
            return Err(malformed(format!("non-finite value in vertex {row}")));
        }
        centers.push(Vec3::new(get(0), get(1), get(2)));
        dc_colors.push([0, 1, 2].map(|c| (0.5 + SH_C0 * get(3 + c)).clamp(0.0, 1.0)));
        opacities.push(1.0 / (1.0 + (-get(6)).exp()));
        log_scales.push(Vec3::new(get(7), get(8), get(9)));
        rotations.push(
            normalized_rotation(get(10), get(11), get(12), get(13))
                .ok_or_else(|| malformed(format!("zero rotation quaternion in vertex {row}")))?,
        );
    }
    GaussianScene::new(centers, log_scales, rotations, opacities, dc_colors)
}

/// Writes a scene as binary little-endian float32 PLY with the 14 standard
/// properties.
pub fn write_gaussian_ply(scene: &GaussianScene, path: &Path) -> Result<(), SceneError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.count())?;
    for name in REQUIRED {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    for i in 0..scene.count() {
        let c = &scene.centers[i];
        let s = &scene.log_scales[i];
        let q = scene.rotations[i].quaternion();
        let a = scene.opacities[i].clamp(1e-7, 1.0 - 1e-7);
        let col = scene.dc_colors[i];
        let row = [
            c.x,
            c.y,
            c.z,
            (col[0] - 0.5) / SH_C0,
            (col[1] - 0.5) / SH_C0,
            (col[2] - 0.5) / SH_C0,
            (a / (1.0 - a)).ln(),
            s.x,
            s.y,
            s.z,
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in row {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}
