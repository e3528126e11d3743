use serde::{Deserialize, Serialize};

use super::RadarParams;
use crate::error::{GlaError, Result};
use crate::frames::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointTarget {
    pub range_m: f64,
    pub angle_deg: f64,
    /// Linear amplitude.
    pub reflectivity: f64,
}

/// The single person in a person-present scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PersonTarget {
    pub range_m: f64,
    pub angle_deg: f64,
    pub reflectivity: f64,
    /// Gaussian blob radius used by the image-level renderer, in bins.
    pub blob_radius_bins: f64,
}

/// Static multipath return spread across all angles at one range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MultipathBand {
    pub range_bin: f64,
    pub amplitude: f64,
    pub thickness_bins: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub label: Label,
    pub person_target: Option<PersonTarget>,
    pub clutter_targets: Vec<PointTarget>,
    pub multipath_bands: Vec<MultipathBand>,
    /// Linear noise power (variance) per sample or pixel.
    pub noise_power: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            label: Label::Empty,
            person_target: None,
            clutter_targets: Vec::new(),
            multipath_bands: Vec::new(),
            noise_power: 0.0,
            seed,
        }
    }

    pub fn with_person(mut self, person: PersonTarget) -> Self {
        self.label = Label::Person;
        self.person_target = Some(person);
        self
    }

    pub fn validate(&self, params: &RadarParams) -> Result<()> {
        params.validate()?;
        match (self.label, &self.person_target) {
            (Label::Person, None) => {
                return Err(GlaError::Validation(
                    "person scene without a person target".into(),
                ))
            }
            (Label::Empty, Some(_)) => {
                return Err(GlaError::Validation(
                    "empty scene carries a person target".into(),
                ))
            }
            _ => {}
        }
        let check_point = |range_m: f64, angle_deg: f64, refl: f64| -> Result<()> {
            if !(range_m.is_finite() && angle_deg.is_finite() && refl.is_finite()) {
                return Err(GlaError::Validation("non-finite target field".into()));
            }
            if range_m < 0.0 || range_m >= params.max_range() {
                return Err(GlaError::RangeBound {
                    range_m,
                    max_range_m: params.max_range(),
                });
            }
            if angle_deg.abs() > params.angle_span {
                return Err(GlaError::Validation(format!(
                    "target angle {angle_deg} deg outside +/-{} deg",
                    params.angle_span
                )));
            }
            if refl < 0.0 {
                return Err(GlaError::Validation("negative reflectivity".into()));
            }
            Ok(())
        };
        if let Some(p) = &self.person_target {
            check_point(p.range_m, p.angle_deg, p.reflectivity)?;
            if !(p.blob_radius_bins > 0.0 && p.blob_radius_bins.is_finite()) {
                return Err(GlaError::Validation("blob radius must be positive".into()));
            }
        }
        for t in &self.clutter_targets {
            check_point(t.range_m, t.angle_deg, t.reflectivity)?;
        }
        for b in &self.multipath_bands {
            if !(b.range_bin >= 0.0 && b.range_bin < params.range_bins as f64) {
                return Err(GlaError::RangeBound {
                    range_m: params.bin_to_range(b.range_bin),
                    max_range_m: params.max_range(),
                });
            }
            if b.amplitude < 0.0 || !(b.thickness_bins > 0.0) {
                return Err(GlaError::Validation(
                    "band amplitude must be >= 0 and thickness > 0".into(),
                ));
            }
        }
        if !(self.noise_power >= 0.0 && self.noise_power.is_finite()) {
            return Err(GlaError::Validation("noise_power must be >= 0".into()));
        }
        Ok(())
    }
}

/// Ground-truth annotation in Range-Angle bin coordinates (row = range, column = angle).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: Label,
    pub blob_center: Option<[f64; 2]>,
    pub blob_radius_bins: Option<f64>,
}

impl GroundTruth {
    pub fn empty() -> Self {
        Self {
            label: Label::Empty,
            blob_center: None,
            blob_radius_bins: None,
        }
    }

    pub fn from_scene(scene: &SceneSpec, params: &RadarParams) -> Self {
        match &scene.person_target {
            Some(p) => Self {
                label: Label::Person,
                blob_center: Some([
                    params.range_to_bin(p.range_m),
                    params.angle_to_bin(p.angle_deg),
                ]),
                blob_radius_bins: Some(p.blob_radius_bins),
            },
            None => Self::empty(),
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        match (self.label, self.blob_center, self.blob_radius_bins) {
            (Label::Person, Some([r, c]), Some(rad)) => {
                if !(r >= 0.0 && r <= (height - 1) as f64 && c >= 0.0 && c <= (width - 1) as f64)
                {
                    return Err(GlaError::Validation(format!(
                        "blob center ({r}, {c}) outside {height}x{width} frame"
                    )));
                }
                if !(rad > 0.0) {
                    return Err(GlaError::Validation("blob radius must be positive".into()));
                }
                Ok(())
            }
            (Label::Person, _, _) => Err(GlaError::Validation(
                "person ground truth without blob center/radius".into(),
            )),
            (Label::Empty, None, _) => Ok(()),
            (Label::Empty, Some(_), _) => Err(GlaError::Validation(
                "empty ground truth carries a blob center".into(),
            )),
        }
    }

    /// Maps bin coordinates onto a resized frame using pixel-centre alignment.
    pub fn rescaled(&self, from_hw: (usize, usize), to_hw: (usize, usize)) -> Self {
        let sy = to_hw.0 as f64 / from_hw.0 as f64;
        let sx = to_hw.1 as f64 / from_hw.1 as f64;
        Self {
            label: self.label,
            blob_center: self
                .blob_center
                .map(|[r, c]| [(r + 0.5) * sy - 0.5, (c + 0.5) * sx - 0.5]),
            blob_radius_bins: self.blob_radius_bins.map(|r| r * 0.5 * (sy + sx)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn person(range_m: f64) -> PersonTarget {
        PersonTarget {
            range_m,
            angle_deg: 10.0,
            reflectivity: 1.0,
            blob_radius_bins: 2.0,
        }
    }

    #[test]
    fn label_must_match_person_target() {
        let p = RadarParams::default();
        let mut s = SceneSpec::empty(1);
        s.person_target = Some(person(2.0));
        assert!(matches!(s.validate(&p), Err(GlaError::Validation(_))));
        s.label = Label::Person;
        s.validate(&p).unwrap();
        s.person_target = None;
        assert!(s.validate(&p).is_err());
    }

    #[test]
    fn out_of_range_target_is_range_bound_error() {
        let p = RadarParams::default();
        let s = SceneSpec::empty(1).with_person(person(p.max_range() + 0.1));
        assert!(matches!(s.validate(&p), Err(GlaError::RangeBound { .. })));
    }

    #[test]
    fn ground_truth_identity_rescale() {
        let g = GroundTruth {
            label: Label::Person,
            blob_center: Some([30.0, 12.0]),
            blob_radius_bins: Some(2.0),
        };
        assert_eq!(g.rescaled((64, 64), (64, 64)), g);
        let up = g.rescaled((64, 64), (128, 128));
        assert_eq!(up.blob_center, Some([60.5, 24.5]));
        assert_eq!(up.blob_radius_bins, Some(4.0));
    }
}
