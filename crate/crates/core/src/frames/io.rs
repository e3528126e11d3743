use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Colormap, Label, Normalization, RAFrame};
use crate::error::{GlaError, Result};
use crate::rf_synth::{GroundTruth, SynthMode};

pub const FRAME_SCHEMA_VERSION: u32 = 1;

const REQUIRED_FIELDS: [&str; 4] = ["schema_version", "shape", "label", "source_id"];

/// JSON metadata stored next to each raw float32 tensor file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSidecar {
    pub schema_version: u32,
    /// `[channels, height, width]`
    pub shape: [usize; 3],
    pub label: Option<Label>,
    pub blob_center: Option<[f64; 2]>,
    pub blob_radius_bins: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<SynthMode>,
    pub params_digest: Option<String>,
    pub source_id: String,
    pub normalization: Option<Normalization>,
    /// Colormap used for the PNG preview.
    pub colormap: String,
    /// Range-Angle grid size the ground truth coordinates refer to.
    pub ra_bins: Option<[usize; 2]>,
}

impl FrameSidecar {
    pub fn for_frame(frame: &RAFrame) -> Self {
        Self {
            schema_version: FRAME_SCHEMA_VERSION,
            shape: frame.shape(),
            label: frame.label,
            blob_center: None,
            blob_radius_bins: None,
            seed: None,
            mode: None,
            params_digest: None,
            source_id: frame.source_id.clone(),
            normalization: frame.normalization,
            colormap: Colormap::ra().name.to_string(),
            ra_bins: None,
        }
    }

    pub fn with_ground_truth(mut self, gt: &GroundTruth) -> Self {
        self.label = Some(gt.label);
        self.blob_center = gt.blob_center;
        self.blob_radius_bins = gt.blob_radius_bins;
        self
    }

    pub fn ground_truth(&self) -> Option<GroundTruth> {
        self.label.map(|label| GroundTruth {
            label,
            blob_center: self.blob_center,
            blob_radius_bins: self.blob_radius_bins,
        })
    }

    fn validate(&self, path: &Path) -> Result<()> {
        if self.schema_version != FRAME_SCHEMA_VERSION {
            return Err(GlaError::Version {
                found: self.schema_version,
                expected: FRAME_SCHEMA_VERSION,
            });
        }
        if self.label == Some(Label::Person) {
            if self.blob_center.is_none() {
                return Err(GlaError::Validation(format!(
                    "{}: label \"person\" requires blob_center",
                    path.display()
                )));
            }
            if self.blob_radius_bins.is_none() {
                return Err(GlaError::Validation(format!(
                    "{}: label \"person\" requires blob_radius_bins",
                    path.display()
                )));
            }
        }
        Ok(())
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn raw_path(stem: &Path) -> PathBuf {
    with_ext(stem, "f32")
}

pub fn sidecar_path(stem: &Path) -> PathBuf {
    with_ext(stem, "json")
}

pub fn preview_path(stem: &Path) -> PathBuf {
    with_ext(stem, "png")
}

/// Writes `<stem>.f32` (little-endian float32, C order), `<stem>.json` and a
/// `<stem>.png` preview. The sidecar's shape is taken from the frame.
pub fn save_frame(stem: &Path, frame: &RAFrame, sidecar: &FrameSidecar) -> Result<()> {
    if let Some(parent) = stem.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| GlaError::io(parent, e))?;
        }
    }
    let mut bytes = Vec::with_capacity(frame.pixels.len() * 4);
    for v in &frame.pixels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let raw = raw_path(stem);
    fs::write(&raw, &bytes).map_err(|e| GlaError::io(&raw, e))?;

    let mut meta = sidecar.clone();
    meta.shape = frame.shape();
    let side = sidecar_path(stem);
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| GlaError::json(&side, e))?;
    fs::write(&side, json).map_err(|e| GlaError::io(&side, e))?;

    save_preview_png(&preview_path(stem), frame)
}

/// 8-bit colormapped preview of the channel mean.
pub fn save_preview_png(path: &Path, frame: &RAFrame) -> Result<()> {
    let map = Colormap::ra();
    let gray = frame.gray();
    let mut buf = Vec::with_capacity(gray.len() * 3);
    for g in gray {
        for c in map.lookup(g) {
            buf.push((c * 255.0).round() as u8);
        }
    }
    image::save_buffer_with_format(
        path,
        &buf,
        frame.width as u32,
        frame.height as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(|e| GlaError::Image(format!("{}: {e}", path.display())))
}

pub fn load_frame(stem: &Path) -> Result<(RAFrame, FrameSidecar)> {
    let side = sidecar_path(stem);
    let text = fs::read(&side).map_err(|e| GlaError::io(&side, e))?;
    let value: serde_json::Value =
        serde_json::from_slice(&text).map_err(|e| GlaError::json(&side, e))?;
    let obj = value.as_object().ok_or_else(|| GlaError::Field {
        path: side.clone(),
        field: "<root object>".into(),
    })?;
    for field in REQUIRED_FIELDS {
        if !obj.contains_key(field) {
            return Err(GlaError::Field {
                path: side.clone(),
                field: field.into(),
            });
        }
    }
    let meta: FrameSidecar = serde_json::from_value(value).map_err(|e| GlaError::Field {
        path: side.clone(),
        field: e.to_string(),
    })?;
    meta.validate(&side)?;

    let raw = raw_path(stem);
    let bytes = fs::read(&raw).map_err(|e| GlaError::io(&raw, e))?;
    let [c, h, w] = meta.shape;
    let expected = c * h * w * 4;
    if bytes.len() != expected {
        return Err(GlaError::Structural(format!(
            "{}: size mismatch, {} bytes on disk but shape {c}x{h}x{w} needs {expected}",
            raw.display(),
            bytes.len()
        )));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let mut frame = RAFrame::new(c, h, w, pixels, meta.label, meta.source_id.clone())?;
    frame.normalization = meta.normalization;
    if let Some(gt) = meta.ground_truth() {
        let bins = meta.ra_bins.unwrap_or([h, w]);
        gt.validate(bins[0], bins[1])?;
    }
    Ok((frame, meta))
}
