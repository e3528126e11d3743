//! Latent Grad-CAM on an untrained model: the mechanics of the perturbation
//! average, the top-15% mask and the localization metrics.

use gla::anchors::{ProjectionHead, TextAnchorSet, EMPTY_PROMPT, PERSON_PROMPT};
use gla::frames::Label;
use gla::trainer::{prepare_frame, TrainConfig};
use gla::gradcam::{cam_metrics, perturbation_average, threshold_mask, LatentScorer, PerturbConfig, DEFAULT_QUANTILE};
use gla::rf_synth::{synth_ra_image, PersonTarget, RadarParams, SceneSpec};
use gla::vae::{VAEArch, Vae};

fn main() -> gla::Result<()> {
    let params = RadarParams::default();
    let scene = SceneSpec::empty(9).with_person(PersonTarget {
        range_m: 4.0,
        angle_deg: -25.0,
        reflectivity: 1.8,
        blob_radius_bins: 2.0,
    });
    let (raw, gt) = synth_ra_image(&scene, &params)?;
    let frame = prepare_frame(&raw.normalize()?, &TrainConfig::default())?;

    let arch = VAEArch::default();
    let vae = Vae::<f32>::new(arch.clone(), 3)?;
    let anchors = TextAnchorSet::stub([EMPTY_PROMPT, PERSON_PROMPT], 512);
    let head = ProjectionHead::new(512, arch.latent_dim, 3);
    let scorer = LatentScorer { vae: &vae, head: &head, anchors: &anchors };

    for target in Label::ALL {
        let cam = perturbation_average(&scorer, &frame, target, PerturbConfig::default())?;
        let mask = threshold_mask(&cam, DEFAULT_QUANTILE)?;
        let m = cam_metrics(&cam, &mask, &gt)?;
        println!(
            "{target}: mask {} of {} pixels, centroid error {:?} bins, precision {:.3}, entropy {:.4}",
            mask.count(),
            cam.values.len(),
            m.centroid_error_bins,
            m.mask_precision,
            m.normalized_entropy
        );
    }
    Ok(())
}
