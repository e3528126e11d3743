//! Generates the reference dataset, trains the default model and prints
//! held-out accuracy and CAM localization metrics.
//!
//! cargo run --release --example train_reference -- /tmp/gla-ref

use std::path::PathBuf;
use std::time::Instant;

use gla::frames::{Label, Split};
use gla::gradcam::{cam_metrics, perturbation_average, threshold_mask, LatentScorer, PerturbConfig, DEFAULT_QUANTILE};
use gla::rf_synth::{generate_dataset, DatasetSpec};
use gla::trainer::{evaluate, prepare_frame, train, TrainConfig};
use gla::util::{mean, median};

fn main() -> gla::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let out: PathBuf = std::env::args().nth(1).unwrap_or_else(|| "gla-reference".into()).into();
    let t0 = Instant::now();
    let manifest = generate_dataset(&DatasetSpec::default(), &out.join("data"))?;
    println!("dataset: {} frames in {:.1?}", manifest.entries.len(), t0.elapsed());

    let config = TrainConfig::default();
    let t1 = Instant::now();
    let ckpt = train(&config, &manifest)?;
    println!("trained {} epochs (best {}) in {:.1?}", ckpt.epochs_run, ckpt.best_epoch, t1.elapsed());

    let held_out = [Split::Val, Split::Test];
    let eval = evaluate(&ckpt, &manifest, &held_out)?;
    let train_eval = evaluate(&ckpt, &manifest, &[Split::Train])?;
    println!(
        "held-out accuracy {:.3}; train recon {:.2} -> {:.2}",
        eval.alignment_accuracy, ckpt.history[0].train_recon, train_eval.mean_recon_bce
    );

    let anchors = ckpt.anchors()?;
    let scorer = LatentScorer { vae: &ckpt.vae, head: &ckpt.head, anchors: &anchors };
    let (mut err, mut prec, mut ent_p, mut ent_e) = (vec![], vec![], vec![], vec![]);
    let t2 = Instant::now();
    for e in manifest.entries_in(&held_out) {
        let frame = prepare_frame(&manifest.load_entry(e)?, &config)?;
        let cfg = PerturbConfig { seed: config.seed, ..Default::default() };
        let cam = perturbation_average(&scorer, &frame, e.label, cfg)?;
        let mask = threshold_mask(&cam, DEFAULT_QUANTILE)?;
        match e.label {
            Label::Person => {
                let m = cam_metrics(&cam, &mask, &manifest.pixel_ground_truth(e))?;
                err.push(m.centroid_error_bins.unwrap_or(f64::INFINITY));
                prec.push(m.mask_precision);
                ent_p.push(m.normalized_entropy);
            }
            Label::Empty => ent_e.push(gla::gradcam::normalized_entropy(&cam.values)),
        }
    }
    println!(
        "{} person frames: median centroid error {:.2}, mean precision {:.3}, entropy person {:.4} empty {:.4} ({:.1?})",
        err.len(),
        median(&err),
        mean(&prec),
        mean(&ent_p),
        mean(&ent_e),
        t2.elapsed()
    );
    Ok(())
}
