//! Middlebury `.flo` files: little-endian `f32` magic `202021.25`, `i32`
//! width, `i32` height, then interleaved `(u¹, u²)` `f32` pairs row by row.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{SpaceTimeGrid, VectorField};

pub const FLO_MAGIC: f32 = 202021.25;
const HEADER_LEN: usize = 12;

/// One frame of flow in file precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowFrame {
    pub height: usize,
    pub width: usize,
    pub u1: Vec<f32>,
    pub u2: Vec<f32>,
}

impl FlowFrame {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, u1: vec![0.0; height * width], u2: vec![0.0; height * width] }
    }
}

pub fn encode_flo(frame: &FlowFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * frame.u1.len());
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(frame.width as i32).to_le_bytes());
    out.extend_from_slice(&(frame.height as i32).to_le_bytes());
    for (a, b) in frame.u1.iter().zip(&frame.u2) {
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
    }
    out
}

pub fn decode_flo(bytes: &[u8], path: &Path) -> Result<FlowFrame> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    if bytes.len() < HEADER_LEN {
        return Err(bad(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    let word = |o: usize| [bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]];
    let magic = f32::from_le_bytes(word(0));
    if magic != FLO_MAGIC {
        return Err(bad(format!("bad magic {magic}, expected {FLO_MAGIC}")));
    }
    let (width, height) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if width < 1 || height < 1 {
        return Err(bad(format!("invalid dimensions {width}×{height}")));
    }
    let n = width as usize * height as usize;
    if bytes.len() != HEADER_LEN + 8 * n {
        return Err(bad(format!("expected {} bytes for {width}×{height}, found {}", HEADER_LEN + 8 * n, bytes.len())));
    }
    let (mut u1, mut u2) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for p in 0..n {
        let o = HEADER_LEN + 8 * p;
        u1.push(f32::from_le_bytes(word(o)));
        u2.push(f32::from_le_bytes(word(o + 4)));
    }
    Ok(FlowFrame { height: height as usize, width: width as usize, u1, u2 })
}

pub fn write_flo(path: &Path, frame: &FlowFrame) -> Result<()> {
    fs::write(path, encode_flo(frame)).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_flo(path: &Path) -> Result<FlowFrame> {
    let bytes = fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    decode_flo(&bytes, path)
}

/// File name of frame `k`.
pub fn flow_file_name(k: usize) -> String {
    format!("flow_{k:04}.flo")
}

/// Writes one `.flo` file per frame into `dir`, multiplying velocities by `scale`
/// (`dt/h` converts to pixels per frame).
pub fn write_flow(u: &VectorField, dir: &Path, scale: f64) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let g = u.grid();
    let len = g.frame_len();
    (0..g.frames())
        .map(|k| {
            let range = k * len..(k + 1) * len;
            let frame = FlowFrame {
                height: g.height(),
                width: g.width(),
                u1: u.u1()[range.clone()].iter().map(|&v| (v * scale) as f32).collect(),
                u2: u.u2()[range].iter().map(|&v| (v * scale) as f32).collect(),
            };
            let path = dir.join(flow_file_name(k));
            write_flo(&path, &frame)?;
            Ok(path)
        })
        .collect()
}

/// Reads per-frame files into a field on `grid`, dividing by `scale`.
pub fn read_flow(paths: &[PathBuf], grid: &SpaceTimeGrid, scale: f64) -> Result<VectorField> {
    if paths.len() != grid.frames() {
        return Err(Error::LengthMismatch { what: "flow frames", got: paths.len(), expected: grid.frames() });
    }
    let (mut u1, mut u2) = (Vec::with_capacity(grid.node_count()), Vec::with_capacity(grid.node_count()));
    for path in paths {
        let f = read_flo(path)?;
        if (f.height, f.width) != (grid.height(), grid.width()) {
            return Err(Error::Format {
                path: path.clone(),
                reason: format!("frame is {}×{}, expected {}×{}", f.height, f.width, grid.height(), grid.width()),
            });
        }
        u1.extend(f.u1.iter().map(|&v| v as f64 / scale));
        u2.extend(f.u2.iter().map(|&v| v as f64 / scale));
    }
    VectorField::new(*grid, u1, u2)
}

/// The `.flo` files of a directory written by [`write_flow`], in frame order.
pub fn list_flow_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    let mut paths = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "flo") {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}
