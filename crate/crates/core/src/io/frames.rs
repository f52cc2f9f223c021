//! Loading 8-bit grayscale frame directories and writing sequences back out.

use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, Luma};
use regex::Regex;

use crate::error::{Error, Result};
use crate::grid::{ImageSequence, ScalarField, SpaceTimeGrid};

pub const DEFAULT_WINDOW: usize = 30;

/// A run of consecutive frames: skip `offset`, then take up to `length`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub offset: usize,
    pub length: usize,
}

impl Default for Window {
    fn default() -> Self {
        Self { offset: 0, length: DEFAULT_WINDOW }
    }
}

/// Ordered frame files of a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameSet {
    pub files: Vec<PathBuf>,
}

impl FrameSet {
    /// Frames of `dir` in lexicographic file-name order, or in numeric order of
    /// the index captured by a printf-style `pattern` such as `frame_%04d.pgm`.
    /// Files that are not PGM/PNG images, or that do not match the pattern, are
    /// ignored.
    pub fn scan(dir: &Path, pattern: Option<&str>) -> Result<Self> {
        let io_err = |source| Error::Io { path: dir.to_path_buf(), source };
        let matcher = pattern.map(|p| compile_pattern(p)).transpose()?;
        let mut named: Vec<(u64, String, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir).map_err(io_err)? {
            let path = entry.map_err(io_err)?.path();
            let Some(name) = path.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
                continue;
            };
            match &matcher {
                Some(re) => {
                    if let Some(c) = re.captures(&name) {
                        let index = c[1].parse().map_err(|_| Error::Format {
                            path: path.clone(),
                            reason: "frame index does not fit in 64 bits".into(),
                        })?;
                        named.push((index, name, path));
                    }
                }
                None => {
                    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
                    if matches!(ext.as_deref(), Some("pgm" | "png")) {
                        named.push((0, name, path));
                    }
                }
            }
        }
        named.sort();
        Ok(Self { files: named.into_iter().map(|(_, _, p)| p).collect() })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    /// Files selected by `window`; fails unless at least two frames remain.
    pub fn window(&self, window: Window) -> Result<&[PathBuf]> {
        let available = self.files.len().saturating_sub(window.offset);
        let take = window.length.min(available);
        if take < 2 {
            return Err(Error::InvalidParameter {
                name: "window",
                reason: format!(
                    "offset {} leaves {available} of {} frames, at least 2 are needed",
                    window.offset,
                    self.files.len()
                ),
            });
        }
        if take < window.length {
            log::warn!("window of {} frames truncated to {take}", window.length);
        }
        Ok(&self.files[window.offset..window.offset + take])
    }
}

/// `%d` / `%0Nd` become a captured digit group; everything else is literal.
fn compile_pattern(pattern: &str) -> Result<Regex> {
    let spec = Regex::new(r"%(0?)(\d*)d").expect("static regex");
    let Some(m) = spec.find(pattern) else {
        return Err(Error::InvalidParameter { name: "pattern", reason: format!("`{pattern}` has no %d index field") });
    };
    let caps = spec.captures(pattern).expect("matched above");
    let digits = match (&caps[1], &caps[2]) {
        ("0", w) if !w.is_empty() => format!("(\\d{{{w}}})"),
        _ => "(\\d+)".to_string(),
    };
    let re = format!("^{}{}{}$", regex::escape(&pattern[..m.start()]), digits, regex::escape(&pattern[m.end()..]));
    Regex::new(&re).map_err(|e| Error::InvalidParameter { name: "pattern", reason: e.to_string() })
}

/// Reads one frame as 8-bit luminance.
pub fn read_frame(path: &Path) -> Result<GrayImage> {
    let img = image::open(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })?;
    Ok(img.to_luma8())
}

/// Loads the frames selected by `window` into a sequence with values `k/255`
/// on a grid with time spacing `dt` and unit pixel spacing.
pub fn load_sequence(dir: &Path, pattern: Option<&str>, window: Window, dt: f64) -> Result<ImageSequence> {
    let set = FrameSet::scan(dir, pattern)?;
    if set.is_empty() {
        return Err(Error::Format { path: dir.to_path_buf(), reason: "no frames found".into() });
    }
    load_frames(set.window(window)?, dt)
}

/// Loads the given files in order.
pub fn load_frames(files: &[PathBuf], dt: f64) -> Result<ImageSequence> {
    let first = read_frame(files.first().ok_or(Error::InvalidParameter {
        name: "frames",
        reason: "no files given".into(),
    })?)?;
    let (w, h) = first.dimensions();
    let grid = SpaceTimeGrid::new(files.len(), h as usize, w as usize, dt)?;
    let mut values = Vec::with_capacity(grid.node_count());
    values.extend(first.as_raw().iter().map(|&k| f64::from(k) / 255.0));
    for path in &files[1..] {
        let img = read_frame(path)?;
        if img.dimensions() != (w, h) {
            let (wi, hi) = img.dimensions();
            return Err(Error::Format {
                path: path.clone(),
                reason: format!("frame is {wi}×{hi}, expected {w}×{h} like {}", files[0].display()),
            });
        }
        values.extend(img.as_raw().iter().map(|&k| f64::from(k) / 255.0));
    }
    ScalarField::new(grid, values)
}

/// Quantizes frame `k` of a sequence to 8 bits.
pub fn frame_image(seq: &ImageSequence, k: usize) -> GrayImage {
    let g = seq.grid();
    GrayImage::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        let v = seq.at(k, y as usize, x as usize);
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

/// Writes each frame as `frame_NNNN.<extension>` (`png` or `pgm`).
pub fn write_frames(seq: &ImageSequence, dir: &Path, extension: &str) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    (0..seq.grid().frames())
        .map(|k| {
            let path = dir.join(format!("frame_{k:04}.{extension}"));
            frame_image(seq, k).save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pattern_compilation() {
        let re = compile_pattern("img_%04d.pgm").unwrap();
        assert_eq!(&re.captures("img_0012.pgm").unwrap()[1], "0012");
        assert!(re.captures("img_12.pgm").is_none());
        assert!(re.captures("img_0012.pgmx").is_none());
        let re = compile_pattern("f%d.png").unwrap();
        assert_eq!(&re.captures("f7.png").unwrap()[1], "7");
        assert!(compile_pattern("plain.png").is_err());
    }

    #[test]
    fn windowing() {
        let set = FrameSet { files: (0..100).map(|k| PathBuf::from(format!("{k:03}"))).collect() };
        let w = set.window(Window { offset: 10, length: 30 }).unwrap();
        assert_eq!(w.len(), 30);
        assert_eq!(w[0], PathBuf::from("010"));
        assert_eq!(w[29], PathBuf::from("039"));
        assert_eq!(set.window(Window { offset: 95, length: 30 }).unwrap().len(), 5);
        assert!(set.window(Window { offset: 99, length: 30 }).is_err());
    }
}
