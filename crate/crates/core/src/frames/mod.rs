//! Range-Angle frame model, normalization, colormaps, resizing and persistence.

mod colormap;
mod io;
mod manifest;

use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};

pub use colormap::{apply_colormap, heat_color, luminance, ColorMode, Colormap};
pub use io::{load_frame, save_frame, save_preview_png, FrameSidecar, FRAME_SCHEMA_VERSION};
pub use manifest::{DatasetManifest, ManifestEntry, Split, SplitFractions, MANIFEST_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Empty,
    Person,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Empty, Label::Person];

    pub fn index(self) -> usize {
        match self {
            Label::Empty => 0,
            Label::Person => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Label::Empty),
            1 => Ok(Label::Person),
            _ => Err(GlaError::Validation(format!("class index {i} not in {{0, 1}}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Label::Empty => "empty",
            Label::Person => "person",
        }
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Label {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empty" | "0" => Ok(Label::Empty),
            "person" | "1" => Ok(Label::Person),
            other => Err(GlaError::Validation(format!("unknown class {other:?}"))),
        }
    }
}

/// Affine map recorded by [`normalize_pixels`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub raw_min: f64,
    pub raw_max: f64,
}

/// One Range-Angle image, `[channels × height × width]` in C order.
///
/// Rows index range bins and columns index angle bins.
#[derive(Debug, Clone, PartialEq)]
pub struct RAFrame {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f32>,
    pub label: Option<Label>,
    pub source_id: String,
    /// Present once the frame has been min-max normalized.
    pub normalization: Option<Normalization>,
}

impl RAFrame {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        pixels: Vec<f32>,
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(GlaError::Structural("frame dimensions must be positive".into()));
        }
        if pixels.len() != channels * height * width {
            return Err(GlaError::Structural(format!(
                "pixel buffer has {} values, shape {channels}x{height}x{width} needs {}",
                pixels.len(),
                channels * height * width
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(GlaError::Validation("frame contains NaN or Inf".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            pixels,
            label,
            source_id: source_id.into(),
            normalization: None,
        })
    }

    /// Single-channel frame from a row-major f64 intensity map.
    pub fn from_intensity(
        height: usize,
        width: usize,
        values: &[f64],
        label: Option<Label>,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            1,
            height,
            width,
            values.iter().map(|&v| v as f32).collect(),
            label,
            source_id,
        )
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    /// Instance-wise min-max normalization to [0, 1].
    pub fn normalize(&self) -> Result<Self> {
        let (pixels, norm) = normalize_pixels(&self.pixels)?;
        Ok(Self {
            pixels,
            normalization: Some(norm),
            ..self.clone()
        })
    }

    /// Mean over channels, used for display.
    pub fn gray(&self) -> Vec<f32> {
        let n = self.height * self.width;
        let mut out = vec![0.0f32; n];
        for c in 0..self.channels {
            for (o, v) in out.iter_mut().zip(self.plane(c)) {
                *o += *v;
            }
        }
        let k = self.channels as f32;
        out.iter_mut().for_each(|v| *v /= k);
        out
    }
}

/// Per-frame affine min-max map to [0, 1].
///
/// Constant inputs map to 0.5 everywhere; non-finite inputs are rejected.
pub fn normalize_pixels(raw: &[f32]) -> Result<(Vec<f32>, Normalization)> {
    if raw.is_empty() {
        return Err(GlaError::Validation("cannot normalize an empty frame".into()));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(GlaError::Validation("frame contains NaN or Inf".into()));
    }
    let (lo, hi) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
        (lo.min(v as f64), hi.max(v as f64))
    });
    let norm = Normalization {
        raw_min: lo,
        raw_max: hi,
    };
    if hi == lo {
        return Ok((vec![0.5; raw.len()], norm));
    }
    let span = hi - lo;
    let out = raw
        .iter()
        .map(|&v| (((v as f64) - lo) / span).clamp(0.0, 1.0) as f32)
        .collect();
    Ok((out, norm))
}

/// Bilinear resize with half-pixel centres, per channel.
///
/// Same-size requests return the input unchanged; outputs are clamped to the
/// input value range.
pub fn resize_frame(frame: &RAFrame, target_hw: (usize, usize)) -> Result<RAFrame> {
    let (th, tw) = target_hw;
    if th < 8 || tw < 8 {
        return Err(GlaError::Validation(format!(
            "resize target {th}x{tw} below the 8x8 minimum"
        )));
    }
    if (th, tw) == (frame.height, frame.width) {
        return Ok(frame.clone());
    }
    let mut pixels = Vec::with_capacity(frame.channels * th * tw);
    for c in 0..frame.channels {
        pixels.extend(resize_plane(frame.plane(c), frame.height, frame.width, th, tw));
    }
    Ok(RAFrame {
        height: th,
        width: tw,
        pixels,
        ..frame.clone()
    })
}

pub fn resize_plane(src: &[f32], h: usize, w: usize, th: usize, tw: usize) -> Vec<f32> {
    if (h, w) == (th, tw) {
        return src.to_vec();
    }
    let (lo, hi) = src
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let axis = |i: usize, n: usize, tn: usize| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * n as f64 / tn as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(th * tw);
    for y in 0..th {
        let (y0, y1, fy) = axis(y, h, th);
        for x in 0..tw {
            let (x0, x1, fx) = axis(x, w, tw);
            let v = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
            let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
            let val = (top * (1.0 - fy) + bottom * fy) as f32;
            out.push(val.clamp(lo, hi));
        }
    }
    out
}
