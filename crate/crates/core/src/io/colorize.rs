//! Color wheel rendering of flow frames.
//!
//! Hue is the direction `atan2(u², u¹)`, saturation is `min(|u|/u_max, 1)` and
//! value is 1, so zero flow renders white.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::grid::VectorField;

/// `q`-quantile of the speeds of all nodes (nearest rank).
pub fn speed_quantile(u: &VectorField, q: f64) -> f64 {
    let mut s: Vec<f64> = u.u1().iter().zip(u.u2()).map(|(a, b)| a.hypot(*b)).collect();
    if s.is_empty() {
        return 0.0;
    }
    s.sort_by(f64::total_cmp);
    let rank = ((q.clamp(0.0, 1.0) * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[rank - 1]
}

/// HSV with full value to RGB.
fn hue_to_rgb(hue_deg: f64, saturation: f64) -> [u8; 3] {
    let h = hue_deg.rem_euclid(360.0) / 60.0;
    let sector = h.floor();
    let f = h - sector;
    let (p, q, t) = (1.0 - saturation, 1.0 - saturation * f, 1.0 - saturation * (1.0 - f));
    let (r, g, b) = match sector as u32 {
        0 => (1.0, t, p),
        1 => (q, 1.0, p),
        2 => (p, 1.0, t),
        3 => (p, q, 1.0),
        4 => (t, p, 1.0),
        _ => (1.0, p, q),
    };
    let byte = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [byte(r), byte(g), byte(b)]
}

/// Color of a single vector.
pub fn flow_color(u: [f64; 2], u_max: f64) -> [u8; 3] {
    let speed = u[0].hypot(u[1]);
    if speed == 0.0 || !(u_max > 0.0) {
        return [255, 255, 255];
    }
    hue_to_rgb(u[1].atan2(u[0]).to_degrees(), (speed / u_max).min(1.0))
}

/// Renders frame `k`; `u_max` defaults to the 99th speed percentile of the
/// whole sequence.
pub fn colorize(u: &VectorField, k: usize, u_max: Option<f64>) -> RgbImage {
    let g = u.grid();
    let u_max = u_max.unwrap_or_else(|| speed_quantile(u, 0.99));
    RgbImage::from_fn(g.width() as u32, g.height() as u32, |x, y| {
        Rgb(flow_color(u.at(k, y as usize, x as usize), u_max))
    })
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}
