use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{load_frame, Label, RAFrame};
use crate::error::{GlaError, Result};
use crate::rf_synth::{GroundTruth, RadarParams, SynthMode};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(GlaError::Validation(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            val: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(GlaError::Validation(format!(
                "split fractions {parts:?} must lie in [0,1] and sum to 1"
            )));
        }
        Ok(())
    }

    /// Stratified assignment of `n` items of one class: the first
    /// `round(train·n)` train, the next `round(val·n)` val, the rest test.
    pub fn assign(&self, n: usize) -> Vec<Split> {
        let n_train = (self.train * n as f64).round() as usize;
        let n_val = ((self.val * n as f64).round() as usize).min(n - n_train.min(n));
        (0..n)
            .map(|i| {
                if i < n_train {
                    Split::Train
                } else if i < n_train + n_val {
                    Split::Val
                } else {
                    Split::Test
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Frame file stem relative to the manifest directory.
    pub frame_path: String,
    pub label: Label,
    pub ground_truth: GroundTruth,
    pub seed: u64,
    pub mode: SynthMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub params_digest: String,
    pub params: RadarParams,
    pub master_seed: u64,
    pub mode: SynthMode,
    /// Stored frame size `[height, width]`.
    pub resolution: [usize; 2],
    pub split_fractions: SplitFractions,
    pub entries: Vec<ManifestEntry>,
    pub split_assignments: BTreeMap<String, Split>,
    /// Directory the manifest was loaded from; frame paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(GlaError::Version {
                found: self.schema_version,
                expected: MANIFEST_SCHEMA_VERSION,
            });
        }
        self.split_fractions.validate()?;
        let mut paths = BTreeSet::new();
        for e in &self.entries {
            if !paths.insert(&e.frame_path) {
                return Err(GlaError::Validation(format!(
                    "duplicate frame path {}",
                    e.frame_path
                )));
            }
            if e.label == Label::Person && e.ground_truth.blob_center.is_none() {
                return Err(GlaError::Validation(format!(
                    "person entry {} has no blob center",
                    e.id
                )));
            }
            if !self.split_assignments.contains_key(&e.id) {
                return Err(GlaError::Validation(format!("entry {} has no split", e.id)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| GlaError::io(path, e))?;
        let mut m: DatasetManifest =
            serde_json::from_slice(&bytes).map_err(|e| GlaError::json(path, e))?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| GlaError::json(path, e))?;
        fs::write(path, json).map_err(|e| GlaError::io(path, e))
    }

    pub fn split_of(&self, id: &str) -> Option<Split> {
        self.split_assignments.get(id).copied()
    }

    pub fn entries_in(&self, splits: &[Split]) -> Vec<&ManifestEntry> {
        self.entries
            .iter()
            .filter(|e| self.split_of(&e.id).is_some_and(|s| splits.contains(&s)))
            .collect()
    }

    pub fn label_counts(&self) -> BTreeMap<Label, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            *out.entry(e.label).or_insert(0) += 1;
        }
        out
    }

    pub fn frame_stem(&self, entry: &ManifestEntry) -> PathBuf {
        self.base_dir.join(&entry.frame_path)
    }

    pub fn load_entry(&self, entry: &ManifestEntry) -> Result<RAFrame> {
        Ok(load_frame(&self.frame_stem(entry))?.0)
    }

    /// Ground truth expressed in pixel coordinates of the stored frames.
    pub fn pixel_ground_truth(&self, entry: &ManifestEntry) -> GroundTruth {
        let from = (self.params.range_bins, self.params.angle_bins);
        let to = (self.resolution[0], self.resolution[1]);
        entry.ground_truth.rescaled(from, to)
    }
}
