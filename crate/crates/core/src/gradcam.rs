//! Latent Grad-CAM over the encoder's third conv block.
//!
//! The explained score is the pre-softmax cosine logit of the target class.
//! Channel weights are the spatial means of its gradient with respect to the
//! block activations.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::anchors::{alignment_backward, alignment_forward, ProjectionHead, TextAnchorSet};
use crate::error::{GlaError, Result};
use crate::frames::{resize_plane, Label, RAFrame};
use crate::rf_synth::GroundTruth;
use crate::seed::derive_rng;
use crate::vae::{FeatureMap, Real, Vae, CAM_BLOCK};

pub const DEFAULT_PERTURBATIONS: usize = 8;
pub const DEFAULT_PERTURB_SIGMA: f64 = 0.05;
pub const DEFAULT_QUANTILE: f64 = 0.15;

/// Anything that can report explained-block activations and the gradient of
/// a class score with respect to them.
pub trait ScoreGradient {
    /// Returns `(F, ∂s_target/∂F)` with matching shapes.
    fn features_and_gradient(&self, frame: &RAFrame, target: Label) -> Result<(FeatureMap, Vec<f64>)>;
}

/// A trained VAE with its projection head and anchors.
pub struct LatentScorer<'a, T> {
    pub vae: &'a Vae<T>,
    pub head: &'a ProjectionHead,
    pub anchors: &'a TextAnchorSet,
}

impl<T: Real> ScoreGradient for LatentScorer<'_, T> {
    fn features_and_gradient(&self, frame: &RAFrame, target: Label) -> Result<(FeatureMap, Vec<f64>)> {
        let x = self.vae.batch_input(&[frame])?;
        let pass = self.vae.encode_batch(&x, 1);
        let mu: Vec<f64> = pass.mu.iter().map(|v| v.as_f64()).collect();
        let align = alignment_forward(&mu, self.head, self.anchors)?;
        let mut d_logits = [0.0; 2];
        d_logits[target.index()] = 1.0;
        // scratch gradient sink; the head and anchors stay untouched
        let mut sink = self.head.zeros_like();
        let d_mu = alignment_backward(&align, d_logits, self.head, self.anchors, &mut sink);
        let d_mu: Vec<T> = d_mu.iter().map(|&v| T::lit(v)).collect();
        let d_lv = vec![T::zero(); d_mu.len()];
        let grad = self.vae.encoder_backward(&pass, &d_mu, &d_lv, None, CAM_BLOCK);
        let (h, w) = self.vae.arch.block_hw(CAM_BLOCK);
        let features = FeatureMap {
            channels: self.vae.arch.conv_channels[CAM_BLOCK],
            height: h,
            width: w,
            values: pass.acts[CAM_BLOCK].iter().map(|v| v.as_f64()).collect(),
        };
        Ok((features, grad.iter().map(|v| v.as_f64()).collect()))
    }
}

/// Block-resolution CAM before upsampling.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCam {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    /// Per-channel weights.
    pub alphas: Vec<f64>,
}

/// `ReLU(Σ_c α_c F^c)` with `α_c` the spatial mean of `∂s/∂F^c`.
pub fn cam_from_gradient(features: &FeatureMap, grad: &[f64]) -> Result<RawCam> {
    let hw = features.height * features.width;
    if grad.len() != features.values.len() || features.values.len() != features.channels * hw {
        return Err(GlaError::Structural(format!(
            "gradient has {} values, features {}",
            grad.len(),
            features.values.len()
        )));
    }
    let alphas: Vec<f64> = grad.chunks_exact(hw).map(|g| g.iter().sum::<f64>() / hw as f64).collect();
    let mut values = vec![0.0; hw];
    for (a, f) in alphas.iter().zip(features.values.chunks_exact(hw)) {
        for (v, x) in values.iter_mut().zip(f) {
            *v += a * x;
        }
    }
    values.iter_mut().for_each(|v| *v = v.max(0.0));
    Ok(RawCam {
        height: features.height,
        width: features.width,
        values,
        alphas,
    })
}

pub fn latent_gradcam(model: &impl ScoreGradient, frame: &RAFrame, target: Label) -> Result<RawCam> {
    let (features, grad) = model.features_and_gradient(frame, target)?;
    cam_from_gradient(&features, &grad)
}

/// Input-resolution CAM in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CAMMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values.
    pub values: Vec<f64>,
    pub target_class: Label,
    pub n_perturbations: usize,
    pub perturb_sigma: f64,
}

impl CAMMap {
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbConfig {
    pub n: usize,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_PERTURBATIONS,
            sigma: DEFAULT_PERTURB_SIGMA,
            seed: 0,
        }
    }
}

/// Min-max normalization; a constant map becomes all zeros.
pub fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        values.iter_mut().for_each(|v| *v = 0.0);
    } else {
        values.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
}

/// Averages raw CAMs over `n` noisy copies of `frame`, upsamples the mean
/// bilinearly to the frame size and min-max normalizes it.
pub fn perturbation_average(
    model: &impl ScoreGradient,
    frame: &RAFrame,
    target: Label,
    cfg: PerturbConfig,
) -> Result<CAMMap> {
    if cfg.n == 0 || !(cfg.sigma >= 0.0) {
        return Err(GlaError::Config(format!(
            "perturbation count {} and sigma {} must be >= 1 and >= 0",
            cfg.n, cfg.sigma
        )));
    }
    let mut sum: Option<RawCam> = None;
    for i in 0..cfg.n {
        let noisy;
        let input = if cfg.sigma > 0.0 {
            let mut rng = derive_rng(cfg.seed, "cam-perturb", &[i as u64]);
            let normal = Normal::new(0.0, cfg.sigma).expect("finite sigma");
            let mut f = frame.clone();
            for p in f.pixels.iter_mut() {
                let e: f64 = normal.sample(&mut rng);
                *p = (*p as f64 + e).clamp(0.0, 1.0) as f32;
            }
            noisy = f;
            &noisy
        } else {
            frame
        };
        let cam = latent_gradcam(model, input, target)?;
        match sum.as_mut() {
            None => sum = Some(cam),
            Some(acc) => acc.values.iter_mut().zip(&cam.values).for_each(|(a, b)| *a += b),
        }
    }
    let raw = sum.expect("n >= 1");
    let mean: Vec<f32> = raw.values.iter().map(|v| (v / cfg.n as f64) as f32).collect();
    let up = resize_plane(&mean, raw.height, raw.width, frame.height, frame.width);
    let mut values: Vec<f64> = up.iter().map(|&v| v as f64).collect();
    min_max_normalize(&mut values);
    Ok(CAMMap {
        height: frame.height,
        width: frame.width,
        values,
        target_class: target,
        n_perturbations: cfg.n,
        perturb_sigma: cfg.sigma,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CAMMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
    pub quantile: f64,
}

impl CAMMask {
    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Number of pixels in a top-`quantile` mask over `total` pixels.
pub fn mask_size(quantile: f64, total: usize) -> usize {
    // guard against products such as 0.15·100 = 15.000000000000002
    let exact = quantile * total as f64;
    let rounded = exact.round();
    let k = if (exact - rounded).abs() < 1e-9 { rounded } else { exact.ceil() };
    (k as usize).min(total)
}

/// Selects the `ceil(q·H·W)` highest pixels, ties broken by row-major index.
pub fn threshold_mask(cam: &CAMMap, quantile: f64) -> Result<CAMMask> {
    if !(quantile > 0.0 && quantile < 1.0) {
        return Err(GlaError::Config(format!("quantile {quantile} outside (0, 1)")));
    }
    let total = cam.values.len();
    let mut mask = vec![false; total];
    let first = cam.values.first().copied().unwrap_or(0.0);
    if cam.values.iter().any(|&v| v != first) {
        let mut order: Vec<usize> = (0..total).collect();
        order.sort_by(|&a, &b| cam.values[b].total_cmp(&cam.values[a]).then(a.cmp(&b)));
        for &i in &order[..mask_size(quantile, total)] {
            mask[i] = true;
        }
    }
    Ok(CAMMask {
        height: cam.height,
        width: cam.width,
        mask,
        quantile,
    })
}

/// Entropy of `cam / Σcam` over `log(H·W)`. A map with no mass counts as uniform.
pub fn normalized_entropy(values: &[f64]) -> f64 {
    let total: f64 = values.iter().sum();
    if values.len() < 2 {
        return 0.0;
    }
    if !(total > 0.0) {
        return 1.0;
    }
    let h: f64 = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| {
            let p = v / total;
            -p * p.ln()
        })
        .sum();
    h / (values.len() as f64).ln()
}

/// CAM-weighted `[row, col]` centroid; `None` when the map has no mass.
pub fn cam_centroid(cam: &CAMMap) -> Option<[f64; 2]> {
    let total: f64 = cam.values.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let (mut r, mut c) = (0.0, 0.0);
    for (i, v) in cam.values.iter().enumerate() {
        r += v * (i / cam.width) as f64;
        c += v * (i % cam.width) as f64;
    }
    Some([r / total, c / total])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CamMetrics {
    /// `None` when the CAM has no mass.
    pub centroid_error_bins: Option<f64>,
    /// Zero for an empty mask.
    pub mask_precision: f64,
    pub normalized_entropy: f64,
}

/// Localization metrics against a person ground truth in pixel coordinates.
pub fn cam_metrics(cam: &CAMMap, mask: &CAMMask, gt: &GroundTruth) -> Result<CamMetrics> {
    let (Label::Person, Some(center), Some(radius)) = (gt.label, gt.blob_center, gt.blob_radius_bins) else {
        return Err(GlaError::Validation(
            "localization metrics need a person ground truth with a blob".into(),
        ));
    };
    if mask.mask.len() != cam.values.len() {
        return Err(GlaError::Structural("mask and CAM sizes differ".into()));
    }
    let dist = |r: f64, c: f64| ((r - center[0]).powi(2) + (c - center[1]).powi(2)).sqrt();
    let centroid_error_bins = cam_centroid(cam).map(|[r, c]| dist(r, c));
    let selected = mask.count();
    let inside = mask
        .mask
        .iter()
        .enumerate()
        .filter(|&(i, &m)| m && dist((i / cam.width) as f64, (i % cam.width) as f64) <= 2.0 * radius)
        .count();
    let mask_precision = if selected == 0 { 0.0 } else { inside as f64 / selected as f64 };
    Ok(CamMetrics {
        centroid_error_bins,
        mask_precision,
        normalized_entropy: normalized_entropy(&cam.values),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchors::{ProjectionHead, TextAnchorSet};
    use crate::vae::VAEArch;
    use approx::assert_abs_diff_eq;

    /// `F^c = relu(a_c · x)` on a 4×4 grid; `s = Σ_c w_c · mean(F^c)`.
    struct LinearToy {
        gains: Vec<f64>,
        weights: Vec<f64>,
    }

    impl ScoreGradient for LinearToy {
        fn features_and_gradient(&self, frame: &RAFrame, _: Label) -> Result<(FeatureMap, Vec<f64>)> {
            let plane = resize_plane(frame.plane(0), frame.height, frame.width, 4, 4);
            let mut values = Vec::new();
            let mut grad = Vec::new();
            for (a, w) in self.gains.iter().zip(&self.weights) {
                values.extend(plane.iter().map(|&p| (a * p as f64).max(0.0)));
                grad.extend(std::iter::repeat_n(w / 16.0, 16));
            }
            Ok((
                FeatureMap {
                    channels: self.gains.len(),
                    height: 4,
                    width: 4,
                    values,
                },
                grad,
            ))
        }
    }

    fn ramp_frame(hw: usize) -> RAFrame {
        let px = (0..hw * hw).map(|i| ((i * 7) % 13) as f32 / 12.0).collect();
        RAFrame::new(1, hw, hw, px, Some(Label::Person), "ramp").unwrap()
    }

    #[test]
    fn gap_weights_match_linear_oracle() {
        let toy = LinearToy {
            gains: vec![1.0, 2.0, 0.5],
            weights: vec![0.3, -1.2, 2.5],
        };
        let cam = latent_gradcam(&toy, &ramp_frame(16), Label::Person).unwrap();
        // ∂s/∂F_ij = w_c / 16 everywhere, so the spatial mean is w_c / 16
        for (a, w) in cam.alphas.iter().zip(&toy.weights) {
            let expect = w / 16.0;
            assert!(((a - expect) / expect).abs() < 1e-6);
        }
        assert!(cam.values.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_channel_unit_weight_is_relu_of_features() {
        let f = FeatureMap {
            channels: 1,
            height: 2,
            width: 2,
            values: vec![-1.0, 0.5, 2.0, -0.1],
        };
        let cam = cam_from_gradient(&f, &[1.0; 4]).unwrap();
        assert_eq!(cam.values, vec![0.0, 0.5, 2.0, 0.0]);
        let zero = cam_from_gradient(&f, &[0.0; 4]).unwrap();
        assert!(zero.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unperturbed_single_pass_is_upsampled_cam() {
        let toy = LinearToy {
            gains: vec![1.0],
            weights: vec![1.0],
        };
        let frame = ramp_frame(16);
        let raw = latent_gradcam(&toy, &frame, Label::Person).unwrap();
        let cfg = PerturbConfig { n: 1, sigma: 0.0, seed: 3 };
        let cam = perturbation_average(&toy, &frame, Label::Person, cfg).unwrap();
        let up = resize_plane(
            &raw.values.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            4,
            4,
            16,
            16,
        );
        let mut expect: Vec<f64> = up.iter().map(|&v| v as f64).collect();
        min_max_normalize(&mut expect);
        assert_eq!(cam.values, expect);
        assert_eq!((cam.height, cam.width), (16, 16));
    }

    #[test]
    fn vae_cam_has_frame_shape_and_leaves_model_untouched() {
        let arch = VAEArch {
            input_channels: 3,
            input_hw: [32, 32],
            conv_channels: vec![4, 6, 8, 8],
            latent_dim: 4,
        };
        let vae = Vae::<f64>::new(arch, 2).unwrap();
        let head = ProjectionHead::new(16, 4, 2);
        let anchors = TextAnchorSet::stub(["a", "b"], 16);
        let before = (vae.clone(), head.clone(), anchors.vector_digest());
        let scorer = LatentScorer { vae: &vae, head: &head, anchors: &anchors };
        let px = (0..3 * 32 * 32).map(|i| ((i * 31) % 97) as f32 / 96.0).collect();
        let frame = RAFrame::new(3, 32, 32, px, None, "x").unwrap();
        let cam = perturbation_average(&scorer, &frame, Label::Person, PerturbConfig::default()).unwrap();
        assert_eq!(cam.values.len(), 32 * 32);
        assert!(cam.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let again = perturbation_average(&scorer, &frame, Label::Person, PerturbConfig::default()).unwrap();
        assert_eq!(cam, again);
        assert_eq!((vae, head, anchors.vector_digest()), before);
    }

    #[test]
    fn vae_block_gradient_matches_finite_difference() {
        // checks ∂s_y/∂F by perturbing the score through the explained block
        let arch = VAEArch {
            input_channels: 1,
            input_hw: [16, 16],
            conv_channels: vec![2, 3, 3, 4],
            latent_dim: 3,
        };
        let vae = Vae::<f64>::new(arch, 5).unwrap();
        let head = ProjectionHead::new(8, 3, 5);
        let anchors = TextAnchorSet::stub(["a", "b"], 8);
        let scorer = LatentScorer { vae: &vae, head: &head, anchors: &anchors };
        let px = (0..256).map(|i| ((i * 13) % 29) as f32 / 28.0).collect();
        let frame = RAFrame::new(1, 16, 16, px, None, "x").unwrap();
        let (feat, grad) = scorer.features_and_gradient(&frame, Label::Empty).unwrap();

        let score_from_block = |block: &[f64]| -> f64 {
            let mut act = block.to_vec();
            let mut hw = (2, 2);
            for k in CAM_BLOCK + 1..4 {
                let (mut out, _) = vae.encoder[k].forward(&act, 1, hw.0, hw.1);
                out.iter_mut().for_each(|v| *v = v.max(0.0));
                act = out;
                hw = (hw.0 / 2, hw.1 / 2);
            }
            let mu = vae.fc_mu.forward(&act, 1);
            alignment_forward(&mu, &head, &anchors).unwrap().logits[0]
        };
        let h = 1e-6;
        for i in (0..feat.values.len()).step_by(5) {
            if feat.values[i] == 0.0 {
                continue;
            }
            let mut p = feat.values.clone();
            let mut m = feat.values.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (score_from_block(&p) - score_from_block(&m)) / (2.0 * h);
            assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-6);
        }
    }

    fn cam_of(values: Vec<f64>, w: usize) -> CAMMap {
        CAMMap {
            height: values.len() / w,
            width: w,
            values,
            target_class: Label::Person,
            n_perturbations: 1,
            perturb_sigma: 0.0,
        }
    }

    #[test]
    fn mask_cardinality_and_ties() {
        let cam = cam_of((0..100).map(|i| ((i * 37) % 100) as f64).collect(), 10);
        let m = threshold_mask(&cam, 0.15).unwrap();
        assert_eq!(m.count(), 15);
        for (i, &sel) in m.mask.iter().enumerate() {
            assert_eq!(sel, cam.values[i] >= 85.0);
        }
        let flat = cam_of(vec![0.3; 64], 8);
        assert_eq!(threshold_mask(&flat, 0.15).unwrap().count(), 0);
        let mut hot = vec![0.0; 64];
        hot[27] = 1.0;
        let m = threshold_mask(&cam_of(hot, 8), 0.01).unwrap();
        assert_eq!(m.count(), 1);
        assert!(m.mask[27]);
        // ties: two levels, lowest indices win among equals
        let two = cam_of((0..16).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect(), 4);
        let m = threshold_mask(&two, 0.2).unwrap();
        let picked: Vec<usize> = (0..16).filter(|&i| m.mask[i]).collect();
        assert_eq!(picked, vec![0, 2, 4, 6]);
        assert_eq!(mask_size(0.15, 4096), 615);
    }

    #[test]
    fn metric_examples() {
        let gt = GroundTruth {
            label: Label::Person,
            blob_center: Some([5.0, 7.0]),
            blob_radius_bins: Some(1.5),
        };
        let mut delta = vec![0.0; 256];
        delta[5 * 16 + 7] = 1.0;
        let cam = cam_of(delta, 16);
        let mask = threshold_mask(&cam, 0.001).unwrap();
        let m = cam_metrics(&cam, &mask, &gt).unwrap();
        assert_eq!(m.centroid_error_bins, Some(0.0));
        assert_eq!(m.mask_precision, 1.0);
        assert_abs_diff_eq!(normalized_entropy(&vec![2.0; 256]), 1.0, epsilon = 1e-12);
        assert!(cam_metrics(&cam, &mask, &GroundTruth::empty()).is_err());
    }

    #[test]
    fn blob_cam_localizes() {
        let gt = GroundTruth {
            label: Label::Person,
            blob_center: Some([20.3, 40.6]),
            blob_radius_bins: Some(2.0),
        };
        let mut blob = vec![0.0; 64 * 64];
        for (i, v) in blob.iter_mut().enumerate() {
            let (r, c) = ((i / 64) as f64, (i % 64) as f64);
            *v = (-((r - 20.3).powi(2) + (c - 40.6).powi(2)) / 8.0).exp();
        }
        let cam = cam_of(blob, 64);
        let mask = threshold_mask(&cam, 0.005).unwrap();
        let m = cam_metrics(&cam, &mask, &gt).unwrap();
        assert!(m.centroid_error_bins.unwrap() < 0.5);
        assert_eq!(m.mask_precision, 1.0);
    }
}
