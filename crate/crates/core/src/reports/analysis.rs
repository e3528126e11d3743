//! Per-frame explanations, CAM statistics and the prompt ablation report.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::figure::{frame_intensity, PanelFigure};
use crate::anchors::{ProjectionHead, TextAnchorSet};
use crate::error::{GlaError, Result};
use crate::frames::{Label, RAFrame};
use crate::gradcam::{
    cam_metrics, normalized_entropy, perturbation_average, threshold_mask, CamMetrics, LatentScorer,
    PerturbConfig, DEFAULT_PERTURBATIONS, DEFAULT_PERTURB_SIGMA, DEFAULT_QUANTILE,
};
use crate::rf_synth::GroundTruth;
use crate::seed::derive_seed;
use crate::trainer::{prepare_frame, TrainConfig};
use crate::util::{argmax, mean, median};
use crate::vae::Vae;

/// A trained model with the anchors it is explained against.
pub struct ModelView<'a> {
    pub config: &'a TrainConfig,
    pub vae: &'a Vae<f32>,
    pub head: &'a ProjectionHead,
    pub anchors: &'a TextAnchorSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExplainSettings {
    pub n_perturbations: usize,
    pub sigma: f64,
    pub quantile: f64,
    /// Explain this class instead of the frame's own label.
    pub target: Option<Label>,
    pub render: bool,
}

impl Default for ExplainSettings {
    fn default() -> Self {
        Self {
            n_perturbations: DEFAULT_PERTURBATIONS,
            sigma: DEFAULT_PERTURB_SIGMA,
            quantile: DEFAULT_QUANTILE,
            target: None,
            render: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameExplanation {
    pub frame_id: String,
    pub label: Option<Label>,
    pub target: Label,
    pub predicted: Label,
    pub logits: [f64; 2],
    pub normalized_entropy: f64,
    pub mask_pixels: usize,
    /// Present for person frames explained as person.
    pub metrics: Option<CamMetrics>,
    pub figure: Option<PanelFigure>,
}

/// CAM for `frame` (stored form) plus metrics and, optionally, its figure.
///
/// Without an explicit target the frame's label is explained, falling back
/// to the predicted class for unlabeled frames.
pub fn explain_frame(
    model: &ModelView,
    frame: &RAFrame,
    gt: Option<&GroundTruth>,
    settings: &ExplainSettings,
) -> Result<FrameExplanation> {
    let input = prepare_frame(frame, model.config)?;
    let out = model.vae.encode(&input)?;
    let align = crate::anchors::alignment_forward(&out.code.mu, model.head, model.anchors)?;
    let predicted = Label::from_index(argmax(&align.logits))?;
    let target = settings.target.or(frame.label).unwrap_or(predicted);

    let scorer = LatentScorer {
        vae: model.vae,
        head: model.head,
        anchors: model.anchors,
    };
    let perturb = PerturbConfig {
        n: settings.n_perturbations,
        sigma: settings.sigma,
        seed: derive_seed(model.config.seed, &format!("explain:{}", frame.source_id), &[]),
    };
    let cam = perturbation_average(&scorer, &input, target, perturb)?;
    let mask = threshold_mask(&cam, settings.quantile)?;
    let metrics = match gt {
        Some(g) if g.label == Label::Person && target == Label::Person => Some(cam_metrics(&cam, &mask, g)?),
        _ => None,
    };
    let figure = if settings.render {
        let recon = model.vae.reconstruct(&input)?;
        Some(PanelFigure::compose(
            &frame.source_id,
            target,
            &frame_intensity(&input, model.config.channel_mode),
            &frame_intensity(&recon, model.config.channel_mode),
            &cam,
            &mask,
        )?)
    } else {
        None
    };
    Ok(FrameExplanation {
        frame_id: frame.source_id.clone(),
        label: frame.label,
        target,
        predicted,
        logits: align.logits,
        normalized_entropy: normalized_entropy(&cam.values),
        mask_pixels: mask.count(),
        metrics,
        figure,
    })
}

/// CAM statistics over the frames of one class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCamStats {
    pub n: usize,
    pub mean_normalized_entropy: f64,
    pub mean_centroid_error: Option<f64>,
    /// Frames with no CAM mass count as an infinite error here.
    pub median_centroid_error: Option<f64>,
    pub undefined_centroids: usize,
    pub mean_mask_precision: Option<f64>,
}

impl ClassCamStats {
    pub fn from_rows(rows: &[&FrameExplanation]) -> Self {
        let entropy: Vec<f64> = rows.iter().map(|r| r.normalized_entropy).collect();
        let metrics: Vec<&CamMetrics> = rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
        let (centroid, precision) = if metrics.is_empty() {
            (None, None)
        } else {
            let defined: Vec<f64> = metrics.iter().filter_map(|m| m.centroid_error_bins).collect();
            let all: Vec<f64> = metrics
                .iter()
                .map(|m| m.centroid_error_bins.unwrap_or(f64::INFINITY))
                .collect();
            let prec: Vec<f64> = metrics.iter().map(|m| m.mask_precision).collect();
            (
                Some((
                    (!defined.is_empty()).then(|| mean(&defined)),
                    Some(median(&all)),
                    metrics.len() - defined.len(),
                )),
                Some(mean(&prec)),
            )
        };
        let (mean_c, median_c, undefined) = centroid.unwrap_or((None, None, 0));
        Self {
            n: rows.len(),
            mean_normalized_entropy: if rows.is_empty() { f64::NAN } else { mean(&entropy) },
            mean_centroid_error: mean_c,
            median_centroid_error: median_c.filter(|v| v.is_finite()),
            undefined_centroids: undefined,
            mean_mask_precision: precision,
        }
    }
}

/// Accuracy and per-class CAM statistics of one model on one frame set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub prompts: Vec<String>,
    pub n_frames: usize,
    pub alignment_accuracy: f64,
    pub person: ClassCamStats,
    pub empty: ClassCamStats,
}

impl ConditionMetrics {
    pub fn from_rows(prompts: &[String], rows: &[FrameExplanation]) -> Result<Self> {
        if rows.iter().any(|r| r.label.is_none()) {
            return Err(GlaError::Validation("condition metrics need labeled frames".into()));
        }
        let class = |l: Label| -> Vec<&FrameExplanation> { rows.iter().filter(|r| r.label == Some(l)).collect() };
        let correct = rows.iter().filter(|r| Some(r.predicted) == r.label).count();
        Ok(Self {
            prompts: prompts.to_vec(),
            n_frames: rows.len(),
            alignment_accuracy: correct as f64 / rows.len().max(1) as f64,
            person: ClassCamStats::from_rows(&class(Label::Person)),
            empty: ClassCamStats::from_rows(&class(Label::Empty)),
        })
    }
}

fn opt_delta(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    Some(a? - b?)
}

/// `ablation − baseline` for each summary metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub alignment_accuracy: f64,
    pub person_mask_precision: Option<f64>,
    pub person_mean_centroid_error: Option<f64>,
    pub person_normalized_entropy: f64,
    pub empty_normalized_entropy: f64,
}

impl MetricDeltas {
    pub fn between(baseline: &ConditionMetrics, ablation: &ConditionMetrics) -> Self {
        Self {
            alignment_accuracy: ablation.alignment_accuracy - baseline.alignment_accuracy,
            person_mask_precision: opt_delta(ablation.person.mean_mask_precision, baseline.person.mean_mask_precision),
            person_mean_centroid_error: opt_delta(
                ablation.person.mean_centroid_error,
                baseline.person.mean_centroid_error,
            ),
            person_normalized_entropy: ablation.person.mean_normalized_entropy
                - baseline.person.mean_normalized_entropy,
            empty_normalized_entropy: ablation.empty.mean_normalized_entropy - baseline.empty.mean_normalized_entropy,
        }
    }
}

/// One frame under both conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationFrameRow {
    pub frame_id: String,
    pub label: Label,
    pub condition: String,
    pub logit_empty: f64,
    pub logit_person: f64,
    pub predicted: Label,
    pub centroid_error_bins: Option<f64>,
    pub mask_precision: Option<f64>,
    pub normalized_entropy: f64,
    pub mask_pixels: usize,
}

impl AblationFrameRow {
    pub fn new(condition: &str, r: &FrameExplanation) -> Self {
        Self {
            frame_id: r.frame_id.clone(),
            label: r.label.unwrap_or(r.target),
            condition: condition.to_string(),
            logit_empty: r.logits[0],
            logit_person: r.logits[1],
            predicted: r.predicted,
            centroid_error_bins: r.metrics.and_then(|m| m.centroid_error_bins),
            mask_precision: r.metrics.map(|m| m.mask_precision),
            normalized_entropy: r.normalized_entropy,
            mask_pixels: r.mask_pixels,
        }
    }
}

pub const EXPECTED_DIRECTION: &str = "With unrelated prompts the anchors carry no radar semantics, so the \
latent Grad-CAM is expected to approach a uniform map: person-frame normalized entropy should rise and \
mask precision should fall relative to the radar-prompt baseline.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub baseline_prompts: Vec<String>,
    pub ablation_prompts: Vec<String>,
    pub frame_ids: Vec<String>,
    pub baseline: ConditionMetrics,
    pub ablation: ConditionMetrics,
    pub deltas: MetricDeltas,
    pub expected_direction: String,
    pub frames: Vec<AblationFrameRow>,
}

impl AblationReport {
    pub fn build(baseline: &[FrameExplanation], ablation: &[FrameExplanation], base_prompts: &[String], abl_prompts: &[String]) -> Result<Self> {
        let ids = |rows: &[FrameExplanation]| -> BTreeSet<String> { rows.iter().map(|r| r.frame_id.clone()).collect() };
        if ids(baseline) != ids(ablation) || baseline.len() != ablation.len() {
            return Err(GlaError::Validation("ablation conditions were evaluated on different frames".into()));
        }
        let b = ConditionMetrics::from_rows(base_prompts, baseline)?;
        let a = ConditionMetrics::from_rows(abl_prompts, ablation)?;
        let mut frames: Vec<AblationFrameRow> = baseline.iter().map(|r| AblationFrameRow::new("baseline", r)).collect();
        frames.extend(ablation.iter().map(|r| AblationFrameRow::new("ablation", r)));
        Ok(Self {
            baseline_prompts: base_prompts.to_vec(),
            ablation_prompts: abl_prompts.to_vec(),
            frame_ids: baseline.iter().map(|r| r.frame_id.clone()).collect(),
            deltas: MetricDeltas::between(&b, &a),
            baseline: b,
            ablation: a,
            expected_direction: EXPECTED_DIRECTION.to_string(),
            frames,
        })
    }

    /// Plain-text summary for humans.
    pub fn summary(&self) -> String {
        let f = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:+.4}"));
        let g = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x:.4}"));
        let mut s = String::new();
        s.push_str("Prompt ablation\n===============\n\n");
        s.push_str(&format!("baseline prompts: {:?}\n", self.baseline_prompts));
        s.push_str(&format!("ablation prompts: {:?}\n", self.ablation_prompts));
        s.push_str(&format!("frames: {} (identical set in both conditions)\n\n", self.frame_ids.len()));
        s.push_str(&format!("expected: {}\n\n", self.expected_direction));
        s.push_str("metric                         baseline    ablation    delta\n");
        let rows = [
            ("alignment accuracy", Some(self.baseline.alignment_accuracy), Some(self.ablation.alignment_accuracy), Some(self.deltas.alignment_accuracy)),
            ("person mask precision", self.baseline.person.mean_mask_precision, self.ablation.person.mean_mask_precision, self.deltas.person_mask_precision),
            ("person mean centroid error", self.baseline.person.mean_centroid_error, self.ablation.person.mean_centroid_error, self.deltas.person_mean_centroid_error),
            ("person normalized entropy", Some(self.baseline.person.mean_normalized_entropy), Some(self.ablation.person.mean_normalized_entropy), Some(self.deltas.person_normalized_entropy)),
            ("empty normalized entropy", Some(self.baseline.empty.mean_normalized_entropy), Some(self.ablation.empty.mean_normalized_entropy), Some(self.deltas.empty_normalized_entropy)),
        ];
        for (name, b, a, d) in rows {
            s.push_str(&format!("{name:<30} {:>9}   {:>9}   {:>9}\n", g(b), g(a), f(d)));
        }
        let entropy_up = self.deltas.person_normalized_entropy > 0.0;
        let precision_down = self.deltas.person_mask_precision.is_some_and(|d| d < 0.0);
        s.push_str(&format!(
            "\nmeasured: person entropy {} and mask precision {} under the unrelated prompts.\n",
            if entropy_up { "rose" } else { "did not rise" },
            if precision_down { "fell" } else { "did not fall" },
        ));
        s
    }
}
