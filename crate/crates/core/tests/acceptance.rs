//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). By default it reports and exits
//! 0 so that the numbers always reach the log; set `GLA_ACCEPTANCE_STRICT=1`
//! to turn any FAIL into a nonzero exit.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use gla::anchors::{alignment_loss, cosine_logits, project_and_normalize, ProjectionHead, TextAnchorSet, UNRELATED_PROMPTS};
use gla::frames::{Label, RAFrame, Split};
use gla::gradcam::{mask_size, perturbation_average, threshold_mask, CAMMap, LatentScorer, PerturbConfig};
use gla::reports::{
    cmd_ablate, cmd_eval, cmd_explain, cmd_synth, cmd_train, AblateArgs, EvalArgs, ExplainArgs, FrameExplanation,
    SynthArgs, TrainArgs, CHECKPOINT_FILE, HELD_OUT,
};
use gla::rf_synth::{
    mvdr_spectrum_from_covariance, signal_chain_ra_map, DiagonalLoading, FftWindows, PersonTarget, RadarParams,
    SceneSpec,
};
use gla::trainer::{forward_backward, init_model, load_checkpoint, prepare_frame, Grads, PreparedSet, TrainConfig};
use gla::vae::{kld_loss, recon_loss_bce, Vae};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Self::new(false, format!("error: {e}"))
    }
}

fn timed(budget: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let t = Instant::now();
    let mut o = f();
    let dt = t.elapsed();
    if dt > budget {
        o.pass = false;
        o.detail.push_str(&format!("; over budget {budget:?}"));
    }
    o.detail.push_str(&format!(" [{:.1}s]", dt.as_secs_f64()));
    o
}

fn analytic_losses() -> Outcome {
    let kld = kld_loss(&[1.0f64], &[0.0], 1);
    let bce = recon_loss_bce(&[1.0f64], &[0.5f64], 1).unwrap();
    let align = alignment_loss([0.0, 0.0], 1);
    let ln2 = std::f64::consts::LN_2;
    let pass = (kld - 0.5).abs() <= 1e-9 && (bce - ln2).abs() <= 1e-9 && (align - ln2).abs() <= 1e-9;
    Outcome::new(pass, format!("KLD {kld:.12}, BCE {bce:.12}, align {align:.12}"))
}

fn tiny_config() -> TrainConfig {
    TrainConfig {
        resolution: [16, 16],
        conv_channels: vec![4, 4, 8, 8],
        latent_dim: 2,
        embed_dim: 16,
        ..Default::default()
    }
}

fn tiny_batch(cfg: &TrainConfig, n: usize) -> (Vec<f64>, Vec<Label>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let frames: Vec<RAFrame> = (0..n)
        .map(|i| {
            let px = (0..256).map(|_| rng.random::<f32>()).collect();
            RAFrame::new(1, 16, 16, px, Some(Label::ALL[i % 2]), format!("f{i}")).unwrap()
        })
        .collect();
    let set = PreparedSet::from_frames(&frames, cfg).unwrap();
    let idx: Vec<usize> = (0..n).collect();
    let eps = (0..n * cfg.latent_dim).map(|_| rng.random_range(-1.5..1.5)).collect();
    (set.batch::<f64>(&idx, cfg.input_channels), set.labels.clone(), eps)
}

fn gradient_check() -> Outcome {
    let cfg = tiny_config();
    let (vae, head) = init_model(&cfg).unwrap();
    let vae: Vae<f64> = vae.cast();
    let anchors = cfg.anchors().unwrap();
    let (x, labels, eps) = tiny_batch(&cfg, 4);
    let w = cfg.weights();
    let mut g = Grads::zeros(&vae, &head);
    forward_backward(&vae, &head, &anchors, &x, &labels, Some(&eps), w, Some(&mut g)).unwrap();
    let analytic: Vec<Vec<f64>> = g.vae.params().iter().map(|(_, _, t)| t.to_vec()).collect();
    let loss = |v: &Vae<f64>| forward_backward(v, &head, &anchors, &x, &labels, Some(&eps), w, None).unwrap().total;

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let h = 1e-4;
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
    while checked < 10 && skipped < 500 {
        let t = rng.random_range(0..analytic.len());
        let i = rng.random_range(0..analytic[t].len());
        let (mut p, mut m) = (vae.clone(), vae.clone());
        p.params_mut()[t][i] += h;
        m.params_mut()[t][i] -= h;
        let numeric = (loss(&p) - loss(&m)) / (2.0 * h);
        let scale = analytic[t][i].abs().max(numeric.abs());
        if scale < 1e-6 {
            // dead ReLU path: relative error is undefined
            skipped += 1;
            continue;
        }
        worst = worst.max((analytic[t][i] - numeric).abs() / scale);
        checked += 1;
    }
    Outcome::new(
        checked == 10 && worst < 1e-3,
        format!("16x16 input, d=2, {checked} parameters, max relative error {worst:.2e} ({skipped} zero-gradient draws skipped)"),
    )
}

fn mvdr_oracle() -> Outcome {
    let params = RadarParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut hits = 0;
    let mut worst = 0.0f64;
    for s in 0..50u64 {
        let range_m = params.bin_to_range(rng.random_range(6.0..58.0));
        let angle_deg = rng.random_range(-50.0..50.0);
        let amplitude = 1.0;
        let mut scene = SceneSpec::empty(1000 + s).with_person(PersonTarget {
            range_m,
            angle_deg,
            reflectivity: amplitude,
            blob_radius_bins: 2.0,
        });
        // per-sample SNR of 20 dB
        scene.noise_power = amplitude * amplitude / 100.0;
        let map = match signal_chain_ra_map(&scene, &params, FftWindows::default(), DiagonalLoading::default()) {
            Ok(m) => m,
            Err(e) => return Outcome::error(e),
        };
        let row = params.range_to_bin(range_m).round() as usize;
        let spectrum = &map[row * params.angle_bins..(row + 1) * params.angle_bins];
        let arg = gla::util::argmax(spectrum);
        let err = (arg as f64 - params.angle_to_bin(angle_deg)).abs();
        worst = worst.max(err);
        if err <= 1.0 {
            hits += 1;
        }
    }
    let m = params.num_rx_antennas;
    let flat = mvdr_spectrum_from_covariance(
        &DMatrix::<Complex64>::zeros(m, m),
        &params,
        DiagonalLoading::Absolute(1.0),
    )
    .unwrap();
    let flat_err = flat.iter().map(|v| (v - 1.0 / m as f64).abs()).fold(0.0, f64::max);
    Outcome::new(
        hits == 50 && flat_err <= 1e-6,
        format!("{hits}/50 within 1 bin (worst {worst:.2} bins); loaded identity deviates {flat_err:.1e} from 1/M"),
    )
}

/// Artifacts of one full run of criteria 4 to 6.
struct Run {
    dir: PathBuf,
    train_time: Duration,
    explain_time: Duration,
    ablate_time: Duration,
    held_out_accuracy: f64,
    recon_initial: f64,
    recon_final: f64,
    explained: Vec<FrameExplanation>,
    ablation: gla::reports::AblationReport,
}

fn full_run(dir: &Path) -> gla::Result<Run> {
    let data = dir.join("data");
    let manifest_path = data.join("manifest.json");
    cmd_synth(&SynthArgs { out: data.clone(), ..Default::default() })?;
    let train_dir = dir.join("train");
    let t = Instant::now();
    let ckpt = cmd_train(&TrainArgs {
        manifest: manifest_path.clone(),
        out: train_dir.clone(),
        config: TrainConfig::default(),
    })?;
    let train_time = t.elapsed();
    let ckpt_path = train_dir.join(CHECKPOINT_FILE);
    let held = cmd_eval(&EvalArgs {
        checkpoint: ckpt_path.clone(),
        manifest: manifest_path.clone(),
        splits: HELD_OUT.to_vec(),
        out: Some(dir.join("eval_held_out")),
    })?;
    let train_eval = cmd_eval(&EvalArgs {
        checkpoint: ckpt_path.clone(),
        manifest: manifest_path.clone(),
        splits: vec![Split::Train],
        out: Some(dir.join("eval_train")),
    })?;

    let t = Instant::now();
    let explained = cmd_explain(&ExplainArgs {
        checkpoint: ckpt_path.clone(),
        manifest: manifest_path.clone(),
        frame_ids: vec![],
        out: dir.join("explain"),
        settings: Default::default(),
    })?;
    let explain_time = t.elapsed();

    let t = Instant::now();
    let ablation = cmd_ablate(&AblateArgs {
        manifest: manifest_path,
        out: dir.join("ablation"),
        config: TrainConfig::default(),
        ablation_prompts: UNRELATED_PROMPTS.iter().map(|s| s.to_string()).collect(),
        baseline_checkpoint: Some(ckpt_path),
    })?;
    let ablate_time = t.elapsed() + train_time;

    Ok(Run {
        dir: dir.to_path_buf(),
        train_time,
        explain_time,
        ablate_time,
        held_out_accuracy: held.alignment_accuracy,
        recon_initial: ckpt.history[0].train_recon,
        recon_final: train_eval.mean_recon_bce,
        explained,
        ablation,
    })
}

fn training_outcome(run: &Run) -> Outcome {
    let ratio = run.recon_final / run.recon_initial;
    let within = run.train_time <= Duration::from_secs(600);
    Outcome::new(
        run.held_out_accuracy >= 0.95 && ratio <= 0.7 && within,
        format!(
            "held-out accuracy {:.3} (need >= 0.95), train recon {:.1} -> {:.1} = {:.3} x initial (need <= 0.7), trained in {:.1}s",
            run.held_out_accuracy,
            run.recon_initial,
            run.recon_final,
            ratio,
            run.train_time.as_secs_f64()
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn localization_outcome(run: &Run) -> Outcome {
    let person: Vec<&FrameExplanation> = run.explained.iter().filter(|r| r.label == Some(Label::Person)).collect();
    let empty: Vec<&FrameExplanation> = run.explained.iter().filter(|r| r.label == Some(Label::Empty)).collect();
    let errors: Vec<f64> = person
        .iter()
        .map(|r| r.metrics.as_ref().and_then(|m| m.centroid_error_bins).unwrap_or(f64::INFINITY))
        .collect();
    let precision: f64 = person
        .iter()
        .map(|r| r.metrics.as_ref().map_or(0.0, |m| m.mask_precision))
        .sum::<f64>()
        / person.len().max(1) as f64;
    let mean_entropy = |rows: &[&FrameExplanation]| rows.iter().map(|r| r.normalized_entropy).sum::<f64>() / rows.len().max(1) as f64;
    let (ent_p, ent_e) = (mean_entropy(&person), mean_entropy(&empty));
    let med = median(errors);
    let within = run.explain_time <= Duration::from_secs(120);
    Outcome::new(
        person.len() >= 50 && med <= 3.0 && precision >= 0.5 && ent_e > ent_p && within,
        format!(
            "{} person frames: median centroid error {med:.2} bins (need <= 3), mean precision {precision:.3} (need >= 0.5), entropy empty {ent_e:.4} vs person {ent_p:.4}",
            person.len()
        ),
    )
}

fn ablation_outcome(run: &Run) -> Outcome {
    let r = &run.ablation;
    let same_frames = r.baseline.n_frames == r.ablation.n_frames && r.frame_ids.len() == r.baseline.n_frames;
    let written = ["ablation_report.json", "ablation_frames.csv", "ablation_summary.txt"]
        .iter()
        .all(|f| run.dir.join("ablation").join(f).exists());
    let d = &r.deltas;
    let within = run.ablate_time <= Duration::from_secs(1200);
    Outcome::new(
        same_frames && written && d.person_normalized_entropy.is_finite() && within,
        format!(
            "{} frames per condition; person precision delta {}, person entropy delta {:+.4}, accuracy delta {:+.3}",
            r.frame_ids.len(),
            d.person_mask_precision.map_or("NA".into(), |v| format!("{v:+.3}")),
            d.person_normalized_entropy,
            d.alignment_accuracy
        ),
    )
}

const METRIC_FILES: [&str; 9] = [
    "train/history.csv",
    "train/model.ckpt",
    "eval_held_out/eval_metrics.json",
    "eval_train/eval_metrics.json",
    "explain/cam_metrics.csv",
    "ablation/ablation_report.json",
    "ablation/ablation_frames.csv",
    "ablation/ablation_summary.txt",
    "data/manifest.json",
];

fn determinism_outcome(a: &Run, b: &Run) -> Outcome {
    let differing: Vec<&str> = METRIC_FILES
        .iter()
        .copied()
        .filter(|f| fs::read(a.dir.join(f)).ok() != fs::read(b.dir.join(f)).ok() || !a.dir.join(f).exists())
        .collect();
    Outcome::new(
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} files byte-identical across two runs", METRIC_FILES.len())
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

fn invariant_suite(run: &Run) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut failures = Vec::new();

    // anchors are never trained: the checkpoint reproduces its anchor digest
    let ckpt = load_checkpoint(&run.dir.join("train").join(CHECKPOINT_FILE)).unwrap();
    let rebuilt = TextAnchorSet::embed_prompts(&ckpt.config.prompts, &ckpt.config.provider(), ckpt.config.embed_dim).unwrap();
    if rebuilt.vector_digest() != ckpt.anchor_digest {
        failures.push("anchor digest changed");
    }

    for _ in 0..2000 {
        let mu: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
        let lv: Vec<f64> = (0..4).map(|_| rng.random_range(-8.0..8.0)).collect();
        if kld_loss(&mu, &lv, 1) < 0.0 {
            failures.push("negative KLD");
            break;
        }
    }

    for _ in 0..200 {
        let (h, w) = (rng.random_range(2..20), rng.random_range(2..20));
        let values: Vec<f64> = (0..h * w).map(|_| (rng.random_range(0..50) as f64) / 49.0).collect();
        if values.iter().all(|&v| v == values[0]) {
            continue;
        }
        let q = rng.random_range(0.01..0.99);
        let cam = CAMMap { height: h, width: w, values, target_class: Label::Person, n_perturbations: 1, perturb_sigma: 0.0 };
        if threshold_mask(&cam, q).unwrap().count() != mask_size(q, h * w) {
            failures.push("mask cardinality");
            break;
        }
    }

    let config = &ckpt.config;
    let anchors = ckpt.anchors().unwrap();
    let scorer = LatentScorer { vae: &ckpt.vae, head: &ckpt.head, anchors: &anchors };
    let manifest = gla::frames::DatasetManifest::load(&run.dir.join("data/manifest.json")).unwrap();
    for e in manifest.entries_in(&HELD_OUT).into_iter().take(6) {
        let frame = prepare_frame(&manifest.load_entry(e).unwrap(), config).unwrap();
        for target in Label::ALL {
            let cam = perturbation_average(&scorer, &frame, target, PerturbConfig { n: 2, ..Default::default() }).unwrap();
            if cam.values.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                failures.push("CAM outside [0,1]");
            }
        }
    }

    let head = ProjectionHead::new(32, 8, 5);
    for _ in 0..200 {
        let mu: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = rng.random_range(0.01..100.0);
        let scaled: Vec<f64> = mu.iter().map(|v| v * c).collect();
        let anchors = TextAnchorSet::stub(["a", "b"], 32);
        let (Ok(a), Ok(b)) = (project_and_normalize(&mu, &head), project_and_normalize(&scaled, &head)) else {
            continue;
        };
        let (sa, sb) = (cosine_logits(&a, &anchors, 10.0), cosine_logits(&b, &anchors, 10.0));
        if (sa[0] - sb[0]).abs() > 1e-9 || (sa[1] - sb[1]).abs() > 1e-9 {
            failures.push("scale changed logits");
            break;
        }
    }

    let cfg = tiny_config();
    let (vae, head) = init_model(&cfg).unwrap();
    let vae: Vae<f64> = vae.cast();
    let anchors = cfg.anchors().unwrap();
    for n in [2, 4, 6] {
        let (x, labels, eps) = tiny_batch(&cfg, n);
        let l = forward_backward(&vae, &head, &anchors, &x, &labels, Some(&eps), cfg.weights(), None).unwrap();
        if (l.total - (5.0 * l.recon + 1.0 * l.align + 0.01 * l.kld)).abs() > 1e-9 {
            failures.push("loss decomposition");
        }
    }

    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            "anchor frozenness, KLD >= 0, mask cardinality, CAM range, scale invariance, loss decomposition".to_string()
        } else {
            format!("violations: {failures:?}")
        },
    )
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let mut lines: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut report = |n: usize, name: &'static str, o: Outcome| {
        println!("criterion {n} [{name}]: {} {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        lines.push((n, name, o));
    };

    report(1, "analytic losses", timed(Duration::from_secs(1), analytic_losses));
    report(2, "gradient check", timed(Duration::from_secs(30), gradient_check));
    report(3, "MVDR oracle", timed(Duration::from_secs(30), mvdr_oracle));

    let root = tempfile::tempdir().expect("temp dir");
    let first = full_run(&root.path().join("run_a"));
    match &first {
        Ok(run) => {
            report(4, "desk-scale training", training_outcome(run));
            report(5, "CAM localization", localization_outcome(run));
            report(6, "prompt ablation", ablation_outcome(run));
            let second = full_run(&root.path().join("run_b"));
            report(
                7,
                "determinism",
                match &second {
                    Ok(b) => determinism_outcome(run, b),
                    Err(e) => Outcome::error(e),
                },
            );
            report(8, "invariant suite", timed(Duration::from_secs(120), || invariant_suite(run)));
        }
        Err(e) => {
            for (n, name) in [(4, "desk-scale training"), (5, "CAM localization"), (6, "prompt ablation"), (7, "determinism")] {
                report(n, name, Outcome::error(e));
            }
            report(8, "invariant suite", Outcome::new(false, "needs a trained run"));
        }
    }

    let passed = lines.iter().filter(|l| l.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", lines.len());
    if passed < lines.len() && std::env::var_os("GLA_ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
