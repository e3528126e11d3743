//! Five-panel explanation figures.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::frames::{heat_color, ColorMode, Colormap, Label, RAFrame};
use crate::gradcam::{CAMMap, CAMMask};

pub const OVERLAY_ALPHA: f64 = 0.45;
/// White separator columns between panels.
pub const PANEL_GAP: usize = 2;
pub const PANEL_ORDER: [&str; 5] = ["input", "reconstruction", "cam", "overlay", "mask"];

/// One 8-bit RGB panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub name: &'static str,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl Panel {
    fn from_fn(name: &'static str, height: usize, width: usize, f: impl Fn(usize) -> [u8; 3]) -> Self {
        let rgb = (0..height * width).flat_map(f).collect();
        Self { name, width, height, rgb }
    }

    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

fn to_u8(c: [f32; 3]) -> [u8; 3] {
    c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

/// `round((1 − α)·a + α·b)` per channel.
pub fn blend(a: [u8; 3], b: [u8; 3], alpha: f64) -> [u8; 3] {
    [0, 1, 2].map(|i| ((1.0 - alpha) * a[i] as f64 + alpha * b[i] as f64).round() as u8)
}

/// Per-pixel intensity of a model-space frame, undoing channel expansion.
pub fn frame_intensity(frame: &RAFrame, mode: ColorMode) -> Vec<f32> {
    match (frame.channels, mode) {
        (3, ColorMode::Lut) => {
            let map = Colormap::ra();
            let n = frame.height * frame.width;
            (0..n)
                .map(|i| map.invert([frame.pixels[i], frame.pixels[n + i], frame.pixels[2 * n + i]]))
                .collect()
        }
        _ => frame.gray(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureMetadata {
    pub frame_id: String,
    pub target_class: Label,
    pub panel_order: Vec<String>,
    pub panel_size: [usize; 2],
    pub gap_px: usize,
    pub overlay_alpha: f64,
    pub input_colormap: String,
    pub cam_colormap: String,
    pub mask_pixels: usize,
    pub quantile: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelFigure {
    pub frame_id: String,
    pub target_class: Label,
    pub panels: [Panel; 5],
    pub quantile: f64,
}

impl PanelFigure {
    /// Builds the five layers from single-channel intensities in `[0, 1]`.
    pub fn compose(
        frame_id: &str,
        target_class: Label,
        input: &[f32],
        reconstruction: &[f32],
        cam: &CAMMap,
        mask: &CAMMask,
    ) -> Result<Self> {
        let (h, w) = (cam.height, cam.width);
        let n = h * w;
        if input.len() != n || reconstruction.len() != n || mask.mask.len() != n || cam.values.len() != n {
            return Err(GlaError::Structural(format!(
                "figure layers differ in size: input {}, reconstruction {}, cam {}, mask {}",
                input.len(),
                reconstruction.len(),
                cam.values.len(),
                mask.mask.len()
            )));
        }
        let map = Colormap::ra();
        let input_p = Panel::from_fn("input", h, w, |i| to_u8(map.lookup(input[i])));
        let recon_p = Panel::from_fn("reconstruction", h, w, |i| to_u8(map.lookup(reconstruction[i])));
        let cam_p = Panel::from_fn("cam", h, w, |i| to_u8(heat_color(cam.values[i] as f32)));
        let overlay_p = Panel::from_fn("overlay", h, w, |i| {
            blend(input_p.pixel(i / w, i % w), cam_p.pixel(i / w, i % w), OVERLAY_ALPHA)
        });
        let mask_p = Panel::from_fn("mask", h, w, |i| if mask.mask[i] { [255; 3] } else { [0; 3] });
        Ok(Self {
            frame_id: frame_id.to_string(),
            target_class,
            panels: [input_p, recon_p, cam_p, overlay_p, mask_p],
            quantile: mask.quantile,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        let p = &self.panels[0];
        (5 * p.width + 4 * PANEL_GAP, p.height)
    }

    /// Left-to-right layout as one RGB buffer `(width, height, pixels)`.
    pub fn layout(&self) -> (usize, usize, Vec<u8>) {
        let (width, height) = self.size();
        let mut buf = vec![255u8; width * height * 3];
        for (k, p) in self.panels.iter().enumerate() {
            let x0 = k * (p.width + PANEL_GAP);
            for y in 0..p.height {
                let dst = 3 * (y * width + x0);
                buf[dst..dst + 3 * p.width].copy_from_slice(&p.rgb[3 * y * p.width..3 * (y + 1) * p.width]);
            }
        }
        (width, height, buf)
    }

    pub fn metadata(&self) -> FigureMetadata {
        let p = &self.panels[0];
        FigureMetadata {
            frame_id: self.frame_id.clone(),
            target_class: self.target_class,
            panel_order: PANEL_ORDER.iter().map(|s| s.to_string()).collect(),
            panel_size: [p.height, p.width],
            gap_px: PANEL_GAP,
            overlay_alpha: OVERLAY_ALPHA,
            input_colormap: Colormap::ra().name.to_string(),
            cam_colormap: "heat (black-red-yellow-white)".into(),
            mask_pixels: self.panels[4].rgb.chunks_exact(3).filter(|c| c[0] == 255).count(),
            quantile: self.quantile,
        }
    }

    /// Writes `<path>` (PNG) and `<path>.json` (metadata).
    pub fn render(&self, path: &Path) -> Result<()> {
        let (w, h, buf) = self.layout();
        image::save_buffer_with_format(
            path,
            &buf,
            w as u32,
            h as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|e| GlaError::Image(format!("{}: {e}", path.display())))?;
        let meta_path = path.with_extension("json");
        let json = serde_json::to_vec_pretty(&self.metadata()).map_err(|e| GlaError::json(&meta_path, e))?;
        std::fs::write(&meta_path, json).map_err(|e| GlaError::io(&meta_path, e))
    }
}
