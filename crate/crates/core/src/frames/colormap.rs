use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::RAFrame;
use crate::error::{GlaError, Result};

const RA_COLORMAP_TABLE: &str = include_str!("../../data/ra_colormap.txt");

/// How a single-channel frame is expanded to three channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMode {
    /// Copy the gray channel into all three channels.
    #[default]
    Replicate,
    /// Look up the shipped 256-entry RGB table.
    Lut,
}

/// 256-entry RGB lookup table with piecewise-linear interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct Colormap {
    pub name: &'static str,
    pub table: Vec<[f32; 3]>,
}

impl Colormap {
    /// The table shipped in `data/ra_colormap.txt`.
    pub fn ra() -> &'static Colormap {
        static MAP: OnceLock<Colormap> = OnceLock::new();
        MAP.get_or_init(|| {
            let table: Vec<[f32; 3]> = RA_COLORMAP_TABLE
                .lines()
                .filter(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
                .map(|l| {
                    let v: Vec<f32> = l
                        .split_whitespace()
                        .map(|t| t.parse().expect("colormap entry"))
                        .collect();
                    [v[0], v[1], v[2]]
                })
                .collect();
            assert_eq!(table.len(), 256, "colormap table must have 256 entries");
            Colormap {
                name: "viridis-256",
                table,
            }
        })
    }

    pub fn lookup(&self, gray: f32) -> [f32; 3] {
        let pos = gray.clamp(0.0, 1.0) as f64 * 255.0;
        let i0 = pos.floor() as usize;
        if i0 >= 255 {
            return self.table[255];
        }
        let t = pos - i0 as f64;
        let (a, b) = (self.table[i0], self.table[i0 + 1]);
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            out[k] = (a[k] as f64 * (1.0 - t) + b[k] as f64 * t) as f32;
        }
        out
    }

    /// Gray level of the nearest table entry (Euclidean in RGB).
    pub fn invert(&self, rgb: [f32; 3]) -> f32 {
        let best = self
            .table
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let d: f32 = (0..3).map(|k| (e[k] - rgb[k]).powi(2)).sum();
                (i, d)
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        best as f32 / 255.0
    }
}

/// Rec. 709 relative luminance of linear RGB.
pub fn luminance(rgb: [f32; 3]) -> f32 {
    0.2126 * rgb[0] + 0.7152 * rgb[1] + 0.0722 * rgb[2]
}

/// Black-red-yellow-white heat ramp used for CAM rendering.
pub fn heat_color(v: f32) -> [f32; 3] {
    let v = v.clamp(0.0, 1.0);
    [
        (3.0 * v).min(1.0),
        (3.0 * v - 1.0).clamp(0.0, 1.0),
        (3.0 * v - 2.0).clamp(0.0, 1.0),
    ]
}

/// Expands a `[1 × H × W]` frame to three channels.
pub fn apply_colormap(gray: &RAFrame, mode: ColorMode) -> Result<RAFrame> {
    if gray.channels != 1 {
        return Err(GlaError::Structural(format!(
            "colormap expects a single-channel frame, got {} channels",
            gray.channels
        )));
    }
    let n = gray.height * gray.width;
    let mut pixels = vec![0.0f32; 3 * n];
    match mode {
        ColorMode::Replicate => {
            for c in 0..3 {
                pixels[c * n..(c + 1) * n].copy_from_slice(&gray.pixels);
            }
        }
        ColorMode::Lut => {
            let map = Colormap::ra();
            for (i, &g) in gray.pixels.iter().enumerate() {
                let rgb = map.lookup(g);
                for c in 0..3 {
                    pixels[c * n + i] = rgb[c];
                }
            }
        }
    }
    Ok(RAFrame {
        channels: 3,
        pixels,
        ..gray.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replicate_copies_gray() {
        let f = RAFrame::new(1, 2, 2, vec![0.0, 0.25, 0.5, 1.0], None, "g").unwrap();
        let c = apply_colormap(&f, ColorMode::Replicate).unwrap();
        for ch in 0..3 {
            assert_eq!(c.plane(ch), f.pixels.as_slice());
        }
    }

    #[test]
    fn lut_endpoints_are_exact() {
        let map = Colormap::ra();
        assert_eq!(map.lookup(0.0), map.table[0]);
        assert_eq!(map.lookup(1.0), map.table[255]);
    }

    #[test]
    fn lut_luminance_strictly_increases() {
        let map = Colormap::ra();
        for w in map.table.windows(2) {
            assert!(luminance(w[1]) > luminance(w[0]));
        }
    }

    #[test]
    fn lut_outputs_in_unit_range() {
        let map = Colormap::ra();
        for i in 0..=1000 {
            let rgb = map.lookup(i as f32 / 1000.0);
            assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn lut_is_invertible_to_one_gray_level() {
        let map = Colormap::ra();
        for i in 0..1024 {
            let g = i as f32 / 1023.0;
            let back = map.invert(map.lookup(g));
            assert!((back - g).abs() <= 1.0 / 255.0 + 1e-6, "{g} -> {back}");
        }
    }

    #[test]
    fn colormap_rejects_multichannel() {
        let f = RAFrame::new(3, 2, 2, vec![0.0; 12], None, "g").unwrap();
        assert!(apply_colormap(&f, ColorMode::Lut).is_err());
    }
}
