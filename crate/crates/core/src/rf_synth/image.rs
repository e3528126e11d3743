use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::mvdr::signal_chain_ra_map;
use super::{DiagonalLoading, FftWindows, GroundTruth, RadarParams, SceneSpec};
use crate::error::{GlaError, Result};
use crate::frames::RAFrame;
use crate::seed::derive_rng;

/// Radius of point-clutter blobs in the image-level renderer.
pub const CLUTTER_RADIUS_BINS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthMode {
    SignalChain,
    #[default]
    ImageLevel,
}

impl std::str::FromStr for SynthMode {
    type Err = GlaError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "signal" | "signal_chain" => Ok(SynthMode::SignalChain),
            "image" | "image_level" => Ok(SynthMode::ImageLevel),
            other => Err(GlaError::Validation(format!("unknown synth mode {other:?}"))),
        }
    }
}

fn add_blob(map: &mut [f64], params: &RadarParams, center: [f64; 2], radius: f64, amp: f64) {
    let (h, w) = (params.range_bins, params.angle_bins);
    let reach = (4.0 * radius).ceil() as i64;
    let (cy, cx) = (center[0].round() as i64, center[1].round() as i64);
    let two_r2 = 2.0 * radius * radius;
    for y in (cy - reach).max(0)..=(cy + reach).min(h as i64 - 1) {
        for x in (cx - reach).max(0)..=(cx + reach).min(w as i64 - 1) {
            let d2 = (y as f64 - center[0]).powi(2) + (x as f64 - center[1]).powi(2);
            map[y as usize * w + x as usize] += amp * (-d2 / two_r2).exp();
        }
    }
}

/// Row-major `[range_bins × angle_bins]` intensity map drawn directly from the
/// scene: a Gaussian blob for the person, small blobs for point clutter,
/// full-width horizontal bands for multipath, and additive Gaussian pixel noise
/// with variance `noise_power`.
pub fn render_ra_intensity(scene: &SceneSpec, params: &RadarParams) -> Result<Vec<f64>> {
    scene.validate(params)?;
    let (h, w) = (params.range_bins, params.angle_bins);
    let mut map = vec![0.0; h * w];
    for band in &scene.multipath_bands {
        let two_t2 = 2.0 * band.thickness_bins * band.thickness_bins;
        for y in 0..h {
            let v = band.amplitude * (-(y as f64 - band.range_bin).powi(2) / two_t2).exp();
            if v > 1e-12 {
                map[y * w..(y + 1) * w].iter_mut().for_each(|p| *p += v);
            }
        }
    }
    for t in &scene.clutter_targets {
        let c = [params.range_to_bin(t.range_m), params.angle_to_bin(t.angle_deg)];
        add_blob(&mut map, params, c, CLUTTER_RADIUS_BINS, t.reflectivity);
    }
    if let Some(p) = &scene.person_target {
        let c = [params.range_to_bin(p.range_m), params.angle_to_bin(p.angle_deg)];
        add_blob(&mut map, params, c, p.blob_radius_bins, p.reflectivity);
    }
    if scene.noise_power > 0.0 {
        let mut rng = derive_rng(scene.seed, "image-noise", &[]);
        let normal = Normal::new(0.0, scene.noise_power.sqrt())
            .map_err(|e| GlaError::Validation(e.to_string()))?;
        map.iter_mut().for_each(|p| *p += normal.sample(&mut rng));
    }
    Ok(map)
}

/// Image-level generator. The returned frame holds raw (unnormalized) intensities.
pub fn synth_ra_image(scene: &SceneSpec, params: &RadarParams) -> Result<(RAFrame, GroundTruth)> {
    let map = render_ra_intensity(scene, params)?;
    let frame = RAFrame::from_intensity(
        params.range_bins,
        params.angle_bins,
        &map,
        Some(scene.label),
        format!("image-{}", scene.seed),
    )?;
    Ok((frame, GroundTruth::from_scene(scene, params)))
}

/// Signal-chain generator: linear MVDR power per Range-Angle cell.
pub fn synth_ra_signal_chain(
    scene: &SceneSpec,
    params: &RadarParams,
    windows: FftWindows,
    loading: DiagonalLoading,
) -> Result<(RAFrame, GroundTruth)> {
    let map = signal_chain_ra_map(scene, params, windows, loading)?;
    let frame = RAFrame::from_intensity(
        params.range_bins,
        params.angle_bins,
        &map,
        Some(scene.label),
        format!("signal-{}", scene.seed),
    )?;
    Ok((frame, GroundTruth::from_scene(scene, params)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rf_synth::PersonTarget;

    fn person_at(params: &RadarParams, rbin: f64, abin: f64, radius: f64, refl: f64) -> SceneSpec {
        SceneSpec::empty(3).with_person(PersonTarget {
            range_m: params.bin_to_range(rbin),
            angle_deg: params.bin_to_angle(abin),
            reflectivity: refl,
            blob_radius_bins: radius,
        })
    }

    #[test]
    fn empty_noiseless_scene_renders_zeros() {
        let p = RadarParams::default();
        let (f, gt) = synth_ra_image(&SceneSpec::empty(1), &p).unwrap();
        assert!(f.pixels.iter().all(|&v| v == 0.0));
        assert_eq!(gt, GroundTruth::empty());
    }

    #[test]
    fn person_blob_peaks_at_its_bin() {
        let p = RadarParams::default();
        let (f, gt) = synth_ra_image(&person_at(&p, 30.0, 12.0, 2.0, 1.0), &p).unwrap();
        let arg = crate::util::argmax(&f.pixels);
        assert_eq!((arg / p.angle_bins, arg % p.angle_bins), (30, 12));
        let c = gt.blob_center.unwrap();
        assert!((c[0] - 30.0).abs() < 1e-9 && (c[1] - 12.0).abs() < 1e-9);
    }

    #[test]
    fn blob_integral_matches_gaussian_mass() {
        let p = RadarParams::default();
        for &(r, a, rad, refl) in &[(30.0, 12.0, 1.5, 1.0), (20.3, 40.7, 3.0, 2.5), (45.0, 30.0, 2.2, 0.7)] {
            let map = render_ra_intensity(&person_at(&p, r, a, rad, refl), &p).unwrap();
            let sum: f64 = map.iter().sum();
            let expected = refl * 2.0 * std::f64::consts::PI * rad * rad;
            assert!(((sum - expected) / expected).abs() < 0.02, "{sum} vs {expected}");
        }
    }

    #[test]
    fn rendering_is_deterministic() {
        let p = RadarParams::default();
        let mut s = person_at(&p, 10.0, 50.0, 2.0, 1.0);
        s.noise_power = 0.01;
        assert_eq!(synth_ra_image(&s, &p).unwrap(), synth_ra_image(&s, &p).unwrap());
    }
}
