//! Plain float images, separable Gaussian filtering and PNG/PFM writers.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, components nominally in [0, 1].
    pub pixels: Vec<[f32; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![[0.0; 3]; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self { width, height, pixels }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().map(|p| p[c] as f64).collect()
    }

    /// Rec. 601 luma.
    pub fn luminance(&self) -> Vec<f64> {
        self.pixels.iter().map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
    }

    pub fn write_png(&self, path: &Path) -> std::io::Result<()> {
        let file = BufWriter::new(File::create(path)?);
        let mut encoder = png::Encoder::new(file, self.width as u32, self.height as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(std::io::Error::other)?;
        let bytes: Vec<u8> =
            self.pixels.iter().flat_map(|p| p.map(|c| (c.clamp(0.0, 1.0) * 255.0).round() as u8)).collect();
        writer.write_image_data(&bytes).map_err(std::io::Error::other)?;
        writer.finish().map_err(std::io::Error::other)
    }
}

/// Writes a single-channel little-endian PFM (rows stored bottom to top).
pub fn write_pfm(path: &Path, width: usize, height: usize, values: &[f32]) -> std::io::Result<()> {
    assert_eq!(values.len(), width * height);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "Pf\n{width} {height}\n-1.0\n")?;
    for y in (0..height).rev() {
        for v in &values[y * width..(y + 1) * width] {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()
}

/// Reads a single-channel PFM of either endianness.
pub fn read_pfm(bytes: &[u8]) -> Option<(usize, usize, Vec<f32>)> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return None;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).ok()?.to_string());
    }
    pos += 1;
    if fields[0] != "Pf" {
        return None;
    }
    let width: usize = fields[1].parse().ok()?;
    let height: usize = fields[2].parse().ok()?;
    let little = fields[3].parse::<f64>().ok()? < 0.0;
    let body = bytes.get(pos..pos + 4 * width * height)?;
    let mut values = vec![0.0f32; width * height];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (row, col) = (height - 1 - i / width, i % width);
        values[row * width + col] = v;
    }
    Some((width, height, values))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..size).map(|i| (-((i as f64 - half).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable filter with clamped borders; output has the input's shape.
pub fn filter_same(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let half = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * data[y * width + clamp(x as isize + k as isize - half, width)];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                acc += w * tmp[clamp(y as isize + k as isize - half, height) * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

/// Separable filter over fully covered windows only.
/// Returns `(values, out_width, out_height)`.
pub fn filter_valid(data: &[f64], width: usize, height: usize, kernel: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = kernel.len();
    if width < n || height < n {
        return (Vec::new(), 0, 0);
    }
    let (ow, oh) = (width - n + 1, height - n + 1);
    let mut tmp = vec![0.0; ow * height];
    for y in 0..height {
        for x in 0..ow {
            tmp[y * ow + x] = kernel.iter().enumerate().map(|(k, w)| w * data[y * width + x + k]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = kernel.iter().enumerate().map(|(k, w)| w * tmp[(y + k) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}
