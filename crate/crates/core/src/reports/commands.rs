//! The `gla` subcommands as library functions.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::analysis::{explain_frame, AblationReport, ExplainSettings, FrameExplanation, ModelView};
use crate::anchors::UNRELATED_PROMPTS;
use crate::error::{GlaError, Result};
use crate::frames::{DatasetManifest, Label, Split};
use crate::rf_synth::{generate_dataset, DatasetSpec, SynthMode};
use crate::trainer::{evaluate, load_checkpoint, save_checkpoint, train, Checkpoint, EvalMetrics, FrameEval, TrainConfig};

/// Splits that are never trained on; early stopping sees only `Val`.
pub const HELD_OUT: [Split; 2] = [Split::Val, Split::Test];
pub const SEED_ENV: &str = "GLA_SEED";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(value).map_err(|e| GlaError::json(path, e))?;
    json.push(b'\n');
    fs::write(path, json).map_err(|e| GlaError::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| GlaError::Validation(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| GlaError::Validation(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| GlaError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| GlaError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthArgs {
    pub n_empty: usize,
    pub n_person: usize,
    pub mode: SynthMode,
    pub seed: u64,
    pub out: PathBuf,
    pub resolution: [usize; 2],
}

impl Default for SynthArgs {
    fn default() -> Self {
        let spec = DatasetSpec::default();
        Self {
            n_empty: spec.n_empty,
            n_person: spec.n_person,
            mode: spec.mode,
            seed: spec.seed,
            out: PathBuf::from("data"),
            resolution: spec.resolution,
        }
    }
}

pub fn cmd_synth(args: &SynthArgs) -> Result<DatasetManifest> {
    if args.n_empty + args.n_person == 0 {
        return Err(GlaError::Config("at least one frame must be requested".into()));
    }
    if args.resolution.iter().any(|&r| r < 8) {
        return Err(GlaError::Config(format!("resolution {:?} is below 8", args.resolution)));
    }
    let spec = DatasetSpec {
        n_empty: args.n_empty,
        n_person: args.n_person,
        mode: args.mode,
        seed: args.seed,
        resolution: args.resolution,
        ..Default::default()
    };
    let manifest = generate_dataset(&spec, &args.out)?;
    let counts = manifest.label_counts();
    println!("manifest: {}", args.out.join("manifest.json").display());
    for (label, n) in counts {
        println!("  {label}: {n}");
    }
    Ok(manifest)
}

/// Command-line overrides applied on top of a configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainOverrides {
    pub max_epochs: Option<usize>,
    pub patience: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub lambda_r: Option<f64>,
    pub lambda_a: Option<f64>,
    pub lambda_k: Option<f64>,
    pub seed: Option<u64>,
    pub prompts: Option<Vec<String>>,
}

/// Defaults, then the config file, then `GLA_SEED`, then explicit flags.
pub fn resolve_config(path: Option<&Path>, o: &TrainOverrides) -> Result<TrainConfig> {
    let mut c = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Ok(v) = std::env::var(SEED_ENV) {
        let seed = v
            .trim()
            .parse()
            .map_err(|_| GlaError::Config(format!("{SEED_ENV}={v:?} is not an integer")))?;
        log::info!("seed {seed} taken from {SEED_ENV}");
        c.seed = seed;
    }
    if let Some(v) = o.max_epochs {
        c.max_epochs = v;
        c.patience = c.patience.min(v);
    }
    if let Some(v) = o.patience {
        c.patience = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = o.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = o.lambda_r {
        c.lambda_recon = v;
    }
    if let Some(v) = o.lambda_a {
        c.lambda_align = v;
    }
    if let Some(v) = o.lambda_k {
        c.lambda_kld = v;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(p) = &o.prompts {
        c.prompts = p.clone();
    }
    c.validate()?;
    Ok(c)
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    pub config: TrainConfig,
}

pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// Trains and writes `model.ckpt`, `config.json` and `history.csv` under `out`.
pub fn cmd_train(args: &TrainArgs) -> Result<Checkpoint> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let ckpt = train(&args.config, &manifest)?;
    create_dir(&args.out)?;
    save_checkpoint(&ckpt, &args.out.join(CHECKPOINT_FILE))?;
    write_json(&args.out.join("config.json"), &ckpt.config)?;
    write_csv(&args.out.join("history.csv"), &ckpt.history)?;
    println!("epoch  train_total  train_recon  train_align  train_kld   val_total  val_acc");
    for r in &ckpt.history {
        println!(
            "{:>5}  {:>11.4}  {:>11.4}  {:>11.5}  {:>9.4}  {:>10.4}  {:>7.3}",
            r.epoch, r.train_total, r.train_recon, r.train_align, r.train_kld, r.val_total, r.val_accuracy
        );
    }
    println!(
        "best epoch {} (val loss {:.4}); checkpoint {}",
        ckpt.best_epoch,
        ckpt.best_val_loss,
        args.out.join(CHECKPOINT_FILE).display()
    );
    Ok(ckpt)
}

/// Explains the given manifest entries (all held-out frames when `ids` is empty).
pub fn explain_entries(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    ids: &[String],
    prompts: Option<&[String]>,
    settings: &ExplainSettings,
) -> Result<Vec<FrameExplanation>> {
    let anchors = match prompts {
        Some(p) => ckpt.anchors_for(p)?,
        None => ckpt.anchors()?,
    };
    let model = ModelView {
        config: &ckpt.config,
        vae: &ckpt.vae,
        head: &ckpt.head,
        anchors: &anchors,
    };
    let entries: Vec<_> = if ids.is_empty() {
        manifest.entries_in(&HELD_OUT)
    } else {
        ids.iter()
            .map(|id| {
                manifest
                    .entries
                    .iter()
                    .find(|e| &e.id == id)
                    .ok_or_else(|| GlaError::Validation(format!("frame {id} is not in the manifest")))
            })
            .collect::<Result<_>>()?
    };
    entries
        .into_iter()
        .map(|e| {
            let mut frame = manifest.load_entry(e)?;
            frame.source_id = e.id.clone();
            frame.label = Some(e.label);
            let gt = manifest.pixel_ground_truth(e);
            explain_frame(&model, &frame, Some(&gt), settings)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct CamRow {
    frame_id: String,
    label: String,
    target_class: Label,
    predicted: Label,
    logit_empty: f64,
    logit_person: f64,
    centroid_error_bins: String,
    mask_precision: String,
    normalized_entropy: f64,
    mask_pixels: usize,
}

fn na(v: Option<f64>) -> String {
    v.map_or("NA".to_string(), |x| x.to_string())
}

fn cam_rows(rows: &[FrameExplanation]) -> Vec<CamRow> {
    rows.iter()
        .map(|r| CamRow {
            frame_id: r.frame_id.clone(),
            label: r.label.map_or("NA".into(), |l| l.to_string()),
            target_class: r.target,
            predicted: r.predicted,
            logit_empty: r.logits[0],
            logit_person: r.logits[1],
            centroid_error_bins: na(r.metrics.and_then(|m| m.centroid_error_bins)),
            mask_precision: na(r.metrics.map(|m| m.mask_precision)),
            normalized_entropy: r.normalized_entropy,
            mask_pixels: r.mask_pixels,
        })
        .collect()
}

pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub frame_ids: Vec<String>,
    pub out: PathBuf,
    pub settings: ExplainSettings,
}

/// Writes one PNG (+ metadata) per frame under `out/figures` and `out/cam_metrics.csv`.
pub fn cmd_explain(args: &ExplainArgs) -> Result<Vec<FrameExplanation>> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let settings = ExplainSettings {
        render: true,
        ..args.settings
    };
    let rows = explain_entries(&ckpt, &manifest, &args.frame_ids, None, &settings)?;
    let fig_dir = args.out.join("figures");
    create_dir(&fig_dir)?;
    for r in &rows {
        if let Some(fig) = &r.figure {
            fig.render(&fig_dir.join(format!("{}_{}.png", r.frame_id, r.target)))?;
        }
    }
    write_csv(&args.out.join("cam_metrics.csv"), &cam_rows(&rows))?;
    println!("explained {} frames into {}", rows.len(), args.out.display());
    Ok(rows)
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    pub splits: Vec<Split>,
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRow<'a> {
    frame_id: &'a str,
    label: Label,
    logit_empty: f64,
    logit_person: f64,
    predicted: Label,
    recon_bce: f64,
    kld: f64,
    align: f64,
}

impl<'a> From<&'a FrameEval> for EvalRow<'a> {
    fn from(f: &'a FrameEval) -> Self {
        Self {
            frame_id: &f.id,
            label: f.label,
            logit_empty: f.logits[0],
            logit_person: f.logits[1],
            predicted: f.predicted,
            recon_bce: f.recon_bce,
            kld: f.kld,
            align: f.align,
        }
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalMetrics> {
    let ckpt = load_checkpoint(&args.checkpoint)?;
    let manifest = DatasetManifest::load(&args.manifest)?;
    let metrics = evaluate(&ckpt, &manifest, &args.splits)?;
    println!(
        "{} frames: alignment accuracy {:.4}, mean BCE {:.4}, mean KLD {:.4}",
        metrics.n, metrics.alignment_accuracy, metrics.mean_recon_bce, metrics.mean_kld
    );
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(&out.join("eval_metrics.json"), &metrics)?;
        let rows: Vec<EvalRow> = metrics.frames.iter().map(EvalRow::from).collect();
        write_csv(&out.join("eval_frames.csv"), &rows)?;
    }
    Ok(metrics)
}

pub struct AblateArgs {
    pub manifest: PathBuf,
    pub out: PathBuf,
    /// Radar-prompt configuration; the ablation differs only in `prompts`.
    pub config: TrainConfig,
    pub ablation_prompts: Vec<String>,
    /// Reuse an already trained baseline instead of retraining it.
    pub baseline_checkpoint: Option<PathBuf>,
}

impl Default for AblateArgs {
    fn default() -> Self {
        Self {
            manifest: PathBuf::from("data/manifest.json"),
            out: PathBuf::from("ablation"),
            config: TrainConfig::default(),
            ablation_prompts: UNRELATED_PROMPTS.iter().map(|s| s.to_string()).collect(),
            baseline_checkpoint: None,
        }
    }
}

/// Top-level config keys whose values differ.
pub fn config_diff(a: &TrainConfig, b: &TrainConfig) -> BTreeSet<String> {
    let (va, vb) = (serde_json::to_value(a).expect("config"), serde_json::to_value(b).expect("config"));
    let (ma, mb) = (va.as_object().expect("object"), vb.as_object().expect("object"));
    ma.keys()
        .chain(mb.keys())
        .filter(|k| ma.get(*k) != mb.get(*k))
        .cloned()
        .collect()
}

/// Trains (or loads) the baseline, retrains with unrelated prompts from the
/// same seed, explains both on the held-out frames and writes the report.
pub fn cmd_ablate(args: &AblateArgs) -> Result<AblationReport> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    create_dir(&args.out)?;
    let baseline = match &args.baseline_checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let c = train(&args.config, &manifest)?;
            save_checkpoint(&c, &args.out.join("baseline.ckpt"))?;
            c
        }
    };
    let ablation_config = TrainConfig {
        prompts: args.ablation_prompts.clone(),
        ..baseline.config.clone()
    };
    let diff = config_diff(&baseline.config, &ablation_config);
    if diff.iter().any(|k| k != "prompts") {
        return Err(GlaError::Config(format!("ablation configs differ beyond prompts: {diff:?}")));
    }
    let ablation = train(&ablation_config, &manifest)?;
    save_checkpoint(&ablation, &args.out.join("ablation.ckpt"))?;

    let settings = ExplainSettings::default();
    let base_rows = explain_entries(&baseline, &manifest, &[], None, &settings)?;
    let abl_rows = explain_entries(&ablation, &manifest, &[], None, &settings)?;
    let report = AblationReport::build(&base_rows, &abl_rows, &baseline.config.prompts, &ablation_config.prompts)?;
    write_json(&args.out.join("ablation_report.json"), &report)?;
    write_csv(&args.out.join("ablation_frames.csv"), &report.frames)?;
    let summary = report.summary();
    fs::write(args.out.join("ablation_summary.txt"), &summary).map_err(|e| GlaError::io(&args.out, e))?;
    print!("{summary}");
    Ok(report)
}
