use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::image::{synth_ra_image, synth_ra_signal_chain, SynthMode};
use super::{
    DiagonalLoading, FftWindows, MultipathBand, PersonTarget, PointTarget, RadarParams, SceneSpec,
};
use crate::error::{GlaError, Result};
use crate::frames::{
    resize_frame, save_frame, DatasetManifest, FrameSidecar, Label, ManifestEntry, SplitFractions,
    MANIFEST_SCHEMA_VERSION,
};
use crate::seed::{derive_rng, derive_seed};

/// Whether static clutter is shared by every frame of a dataset or redrawn per frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterLayout {
    #[default]
    Shared,
    PerFrame,
}

/// Ranges from which random scenes are drawn. Positions are in bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDistribution {
    pub person_reflectivity: [f64; 2],
    pub blob_radius_bins: [f64; 2],
    /// Minimum distance of the person centre from the grid edge, in bins.
    pub person_edge_margin_bins: f64,
    pub clutter_count: [usize; 2],
    pub clutter_reflectivity: [f64; 2],
    pub band_count: [usize; 2],
    pub band_amplitude: [f64; 2],
    pub band_thickness_bins: [f64; 2],
    pub noise_power: f64,
    pub clutter_layout: ClutterLayout,
}

impl Default for SceneDistribution {
    fn default() -> Self {
        Self {
            person_reflectivity: [1.0, 2.0],
            blob_radius_bins: [1.5, 3.0],
            person_edge_margin_bins: 6.0,
            clutter_count: [3, 6],
            clutter_reflectivity: [0.1, 0.3],
            band_count: [2, 3],
            band_amplitude: [0.15, 0.35],
            band_thickness_bins: [1.0, 2.0],
            noise_power: 1e-4,
            clutter_layout: ClutterLayout::Shared,
        }
    }
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

fn uniform_count(rng: &mut impl Rng, [lo, hi]: [usize; 2]) -> usize {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

struct Clutter {
    targets: Vec<PointTarget>,
    bands: Vec<MultipathBand>,
}

impl SceneDistribution {
    fn draw_clutter(&self, params: &RadarParams, rng: &mut impl Rng) -> Clutter {
        let max_bin = params.range_bins as f64 - 1.0;
        let targets = (0..uniform_count(rng, self.clutter_count))
            .map(|_| PointTarget {
                range_m: params.bin_to_range(rng.random_range(1.0..max_bin)),
                angle_deg: rng.random_range(-params.angle_span..params.angle_span),
                reflectivity: uniform(rng, self.clutter_reflectivity),
            })
            .collect();
        let bands = (0..uniform_count(rng, self.band_count))
            .map(|_| MultipathBand {
                range_bin: rng.random_range(2.0..max_bin - 1.0),
                amplitude: uniform(rng, self.band_amplitude),
                thickness_bins: uniform(rng, self.band_thickness_bins),
            })
            .collect();
        Clutter { targets, bands }
    }

    /// Draws one scene. `shared` supplies the dataset-wide clutter layout.
    fn sample(
        &self,
        label: Label,
        params: &RadarParams,
        seed: u64,
        shared: Option<&Clutter>,
    ) -> SceneSpec {
        let mut rng = derive_rng(seed, "scene", &[]);
        let own;
        let clutter = match shared {
            Some(c) => c,
            None => {
                own = self.draw_clutter(params, &mut rng);
                &own
            }
        };
        let mut scene = SceneSpec {
            label: Label::Empty,
            person_target: None,
            clutter_targets: clutter.targets.clone(),
            multipath_bands: clutter.bands.clone(),
            noise_power: self.noise_power,
            seed,
        };
        if label == Label::Person {
            let m = self.person_edge_margin_bins;
            let rbin = rng.random_range(m..params.range_bins as f64 - 1.0 - m);
            let abin = rng.random_range(m..params.angle_bins as f64 - 1.0 - m);
            scene = scene.with_person(PersonTarget {
                range_m: params.bin_to_range(rbin),
                angle_deg: params.bin_to_angle(abin),
                reflectivity: uniform(&mut rng, self.person_reflectivity),
                blob_radius_bins: uniform(&mut rng, self.blob_radius_bins),
            });
        }
        scene
    }

    /// Scene for frame `index` of class `label` under master seed `seed`.
    pub fn scene_for(&self, label: Label, index: usize, params: &RadarParams, seed: u64) -> SceneSpec {
        let scene_seed = derive_seed(seed, "scene-seed", &[label.index() as u64, index as u64]);
        let shared = match self.clutter_layout {
            ClutterLayout::Shared => Some(self.draw_clutter(params, &mut derive_rng(seed, "clutter", &[]))),
            ClutterLayout::PerFrame => None,
        };
        self.sample(label, params, scene_seed, shared.as_ref())
    }
}

/// Everything [`generate_dataset`] needs besides the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub n_empty: usize,
    pub n_person: usize,
    pub params: RadarParams,
    pub distribution: SceneDistribution,
    pub mode: SynthMode,
    pub seed: u64,
    /// Stored frame size `[height, width]`.
    pub resolution: [usize; 2],
    pub split_fractions: SplitFractions,
    pub windows: FftWindows,
    pub loading: DiagonalLoading,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_empty: 200,
            n_person: 200,
            params: RadarParams::default(),
            distribution: SceneDistribution::default(),
            mode: SynthMode::ImageLevel,
            seed: 7,
            resolution: [64, 64],
            split_fractions: SplitFractions::default(),
            windows: FftWindows::default(),
            loading: DiagonalLoading::default(),
        }
    }
}

/// Synthesizes, normalizes, resizes and writes a labeled dataset under
/// `out_dir`, returning the manifest (also written as `manifest.json`).
///
/// Every frame draws from its own RNG stream derived from `(seed, class,
/// index)`, so the parallel schedule does not affect the bytes written.
pub fn generate_dataset(spec: &DatasetSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.params.validate()?;
    spec.split_fractions.validate()?;
    let params = &spec.params;
    fs::create_dir_all(out_dir).map_err(|e| GlaError::io(out_dir, e))?;
    let frames_dir = out_dir.join("frames");
    if spec.n_empty + spec.n_person > 0 {
        fs::create_dir_all(&frames_dir).map_err(|e| GlaError::io(&frames_dir, e))?;
    }

    let shared = match spec.distribution.clutter_layout {
        ClutterLayout::Shared => Some(
            spec.distribution
                .draw_clutter(params, &mut derive_rng(spec.seed, "clutter", &[])),
        ),
        ClutterLayout::PerFrame => None,
    };

    let jobs: Vec<(Label, usize)> = (0..spec.n_empty)
        .map(|k| (Label::Empty, k))
        .chain((0..spec.n_person).map(|k| (Label::Person, k)))
        .collect();
    let params_digest = params.digest();

    let entries: Vec<ManifestEntry> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, &(label, k))| -> Result<ManifestEntry> {
            let scene_seed = derive_seed(spec.seed, "scene-seed", &[label.index() as u64, k as u64]);
            let scene = spec.distribution.sample(label, params, scene_seed, shared.as_ref());
            let (raw, gt) = match spec.mode {
                SynthMode::ImageLevel => synth_ra_image(&scene, params)?,
                SynthMode::SignalChain => {
                    synth_ra_signal_chain(&scene, params, spec.windows, spec.loading)?
                }
            };
            let id = format!("frame_{i:05}");
            let mut frame = raw.normalize()?;
            frame = resize_frame(&frame, (spec.resolution[0], spec.resolution[1]))?;
            frame.source_id = id.clone();
            let rel = format!("frames/{id}");
            let mut sidecar = FrameSidecar::for_frame(&frame).with_ground_truth(&gt);
            sidecar.seed = Some(scene_seed);
            sidecar.mode = Some(spec.mode);
            sidecar.params_digest = Some(params_digest.clone());
            sidecar.ra_bins = Some([params.range_bins, params.angle_bins]);
            save_frame(&out_dir.join(&rel), &frame, &sidecar)?;
            Ok(ManifestEntry {
                id,
                frame_path: rel,
                label,
                ground_truth: gt,
                seed: scene_seed,
                mode: spec.mode,
            })
        })
        .collect::<Result<_>>()?;

    let mut split_assignments = BTreeMap::new();
    for label in Label::ALL {
        let mut ids: Vec<&ManifestEntry> = entries.iter().filter(|e| e.label == label).collect();
        let mut rng = derive_rng(spec.seed, "split", &[label.index() as u64]);
        // Fisher-Yates with the seeded stream.
        for i in (1..ids.len()).rev() {
            let j = rng.random_range(0..=i);
            ids.swap(i, j);
        }
        for (e, split) in ids.iter().zip(spec.split_fractions.assign(ids.len())) {
            split_assignments.insert(e.id.clone(), split);
        }
    }

    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        params_digest,
        params: params.clone(),
        master_seed: spec.seed,
        mode: spec.mode,
        resolution: spec.resolution,
        split_fractions: spec.split_fractions,
        entries,
        split_assignments,
        base_dir: out_dir.to_path_buf(),
    };
    manifest.validate()?;
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_counts_give_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec {
            n_empty: 0,
            n_person: 0,
            ..Default::default()
        };
        let m = generate_dataset(&spec, dir.path()).unwrap();
        assert!(m.entries.is_empty());
        assert!(!dir.path().join("frames").exists());
    }

    #[test]
    fn empty_scenes_are_never_blank() {
        let d = SceneDistribution::default();
        let p = RadarParams::default();
        for k in 0..5 {
            let s = d.scene_for(Label::Empty, k, &p, 7);
            s.validate(&p).unwrap();
            assert!(!s.clutter_targets.is_empty() && !s.multipath_bands.is_empty());
            let (f, _) = synth_ra_image(&s, &p).unwrap();
            assert!(f.pixels.iter().any(|&v| v != 0.0));
        }
    }

    #[test]
    fn person_scenes_respect_radius_range() {
        let d = SceneDistribution::default();
        let p = RadarParams::default();
        for k in 0..50 {
            let s = d.scene_for(Label::Person, k, &p, 3);
            let r = s.person_target.unwrap().blob_radius_bins;
            assert!((1.5..=3.0).contains(&r));
        }
    }
}
