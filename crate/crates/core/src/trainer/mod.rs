//! Joint objective, optimization loop, evaluation and checkpoints.

mod adam;
mod checkpoint;

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::anchors::{
    alignment_backward, alignment_forward, alignment_loss, alignment_loss_grad, AnchorProvider,
    ProjectionHead, TextAnchorSet, DEFAULT_EMBED_DIM, EMPTY_PROMPT, PERSON_PROMPT,
};
use crate::error::{GlaError, Result};
use crate::frames::{apply_colormap, resize_frame, ColorMode, DatasetManifest, Label, RAFrame, Split};
use crate::seed::derive_rng;
use crate::util::argmax;
use crate::vae::{
    bce_grad_logit, kld_loss, recon_loss_bce, reparameterize_batch, Real, VAEArch, Vae, NUM_BLOCKS,
};

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProviderKind {
    #[default]
    Stub,
    ExternalFile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMonitor {
    /// Lowest total validation loss.
    #[default]
    ValTotal,
    /// Highest validation alignment accuracy.
    ValAccuracy,
}

/// Flat training configuration; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_recon: f64,
    pub lambda_align: f64,
    pub lambda_kld: f64,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub prompts: Vec<String>,
    pub anchor_provider: ProviderKind,
    pub anchor_file: Option<String>,
    pub embed_dim: usize,
    pub input_channels: usize,
    pub conv_channels: Vec<usize>,
    pub latent_dim: usize,
    /// Model input `[height, width]`; frames are resized when they differ.
    pub resolution: [usize; 2],
    pub channel_mode: ColorMode,
    pub freeze_tau: bool,
    pub early_stop_monitor: StopMonitor,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let arch = VAEArch::default();
        Self {
            lambda_recon: 5.0,
            lambda_align: 1.0,
            lambda_kld: 0.01,
            learning_rate: 5e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            max_epochs: 20,
            patience: 5,
            batch_size: 32,
            seed: 7,
            prompts: vec![EMPTY_PROMPT.to_string(), PERSON_PROMPT.to_string()],
            anchor_provider: ProviderKind::Stub,
            anchor_file: None,
            embed_dim: DEFAULT_EMBED_DIM,
            input_channels: arch.input_channels,
            conv_channels: arch.conv_channels,
            latent_dim: arch.latent_dim,
            resolution: arch.input_hw,
            channel_mode: ColorMode::Replicate,
            freeze_tau: false,
            early_stop_monitor: StopMonitor::ValTotal,
        }
    }
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GlaError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| GlaError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_recon", self.lambda_recon),
            ("lambda_align", self.lambda_align),
            ("lambda_kld", self.lambda_kld),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GlaError::Config(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(GlaError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(GlaError::Config("Adam betas must lie in [0, 1) and eps be positive".into()));
        }
        if self.patience > self.max_epochs {
            return Err(GlaError::Config(format!(
                "patience {} exceeds max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(GlaError::Config("batch_size must be positive".into()));
        }
        if self.prompts.len() != 2 || self.prompts.iter().any(|p| p.trim().is_empty()) {
            return Err(GlaError::Config("exactly 2 non-empty prompts are required".into()));
        }
        if self.anchor_provider == ProviderKind::ExternalFile && self.anchor_file.is_none() {
            return Err(GlaError::Config("external-file provider needs anchor_file".into()));
        }
        if self.embed_dim == 0 {
            return Err(GlaError::Config("embed_dim must be positive".into()));
        }
        self.arch().validate()
    }

    pub fn arch(&self) -> VAEArch {
        VAEArch {
            input_channels: self.input_channels,
            input_hw: self.resolution,
            conv_channels: self.conv_channels.clone(),
            latent_dim: self.latent_dim,
        }
    }

    pub fn provider(&self) -> AnchorProvider {
        match self.anchor_provider {
            ProviderKind::Stub => AnchorProvider::Stub,
            ProviderKind::ExternalFile => AnchorProvider::ExternalFile {
                path: self.anchor_file.clone().unwrap_or_default(),
            },
        }
    }

    pub fn anchors(&self) -> Result<TextAnchorSet> {
        TextAnchorSet::embed_prompts(&self.prompts, &self.provider(), self.embed_dim)
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            recon: self.lambda_recon,
            align: self.lambda_align,
            kld: self.lambda_kld,
        }
    }

    pub fn adam(&self) -> AdamHyper {
        AdamHyper {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub recon: f64,
    pub align: f64,
    pub kld: f64,
}

/// Converts a stored frame into model input: resize, then channel expansion.
pub fn prepare_frame(frame: &RAFrame, config: &TrainConfig) -> Result<RAFrame> {
    let [h, w] = config.resolution;
    let sized = if (frame.height, frame.width) != (h, w) {
        resize_frame(frame, (h, w))?
    } else {
        frame.clone()
    };
    match (sized.channels, config.input_channels) {
        (a, b) if a == b => Ok(sized),
        (1, 3) => apply_colormap(&sized, config.channel_mode),
        (3, 1) => {
            let gray = sized.gray();
            RAFrame::new(1, h, w, gray, sized.label, sized.source_id.clone())
        }
        (a, b) => Err(GlaError::Structural(format!(
            "cannot map {a}-channel frames to {b} model channels"
        ))),
    }
}

/// Frames of one or more splits, prepared for the model and held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSet {
    pub ids: Vec<String>,
    pub labels: Vec<Label>,
    /// `C·H·W`
    pub sample_len: usize,
    /// Samples stored back to back.
    pub data: Vec<f32>,
}

impl PreparedSet {
    pub fn from_frames(frames: &[RAFrame], config: &TrainConfig) -> Result<Self> {
        let mut set = PreparedSet {
            ids: Vec::new(),
            labels: Vec::new(),
            sample_len: config.arch().input_len(),
            data: Vec::new(),
        };
        for f in frames {
            let label = f.label.ok_or_else(|| {
                GlaError::Validation(format!("frame {} has no label", f.source_id))
            })?;
            let p = prepare_frame(f, config)?;
            set.ids.push(f.source_id.clone());
            set.labels.push(label);
            set.data.extend_from_slice(&p.pixels);
        }
        Ok(set)
    }

    pub fn load(manifest: &DatasetManifest, splits: &[Split], config: &TrainConfig) -> Result<Self> {
        let frames = manifest
            .entries_in(splits)
            .into_iter()
            .map(|e| {
                let mut f = manifest.load_entry(e)?;
                f.source_id = e.id.clone();
                f.label = Some(e.label);
                Ok(f)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_frames(&frames, config)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        &self.data[i * self.sample_len..][..self.sample_len]
    }

    /// Stacks the given samples into the `[C, N, H, W]` layout.
    pub fn batch<T: Real>(&self, indices: &[usize], channels: usize) -> Vec<T> {
        let n = indices.len();
        let s = self.sample_len / channels;
        let mut x = vec![T::zero(); self.sample_len * n];
        for (b, &i) in indices.iter().enumerate() {
            let src = self.sample(i);
            for c in 0..channels {
                let dst = &mut x[(c * n + b) * s..][..s];
                for (d, v) in dst.iter_mut().zip(&src[c * s..][..s]) {
                    *d = T::lit(*v as f64);
                }
            }
        }
        x
    }
}

/// Parameter gradients of the whole model.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads<T> {
    pub vae: Vae<T>,
    pub head: ProjectionHead,
}

impl<T: Real> Grads<T> {
    pub fn zeros(vae: &Vae<T>, head: &ProjectionHead) -> Self {
        Self {
            vae: vae.zeros_like(),
            head: head.zeros_like(),
        }
    }
}

/// Loss components of one batch; each is a batch mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub total: f64,
    pub recon: f64,
    pub align: f64,
    pub kld: f64,
    pub logits: Vec<[f64; 2]>,
    pub recon_per_frame: Vec<f64>,
    pub kld_per_frame: Vec<f64>,
    pub align_per_frame: Vec<f64>,
}

fn check_finite(parts: [(&str, f64); 3]) -> Result<()> {
    for (name, v) in parts {
        if !v.is_finite() {
            return Err(GlaError::Numerical(format!("{name} loss became {v}")));
        }
    }
    Ok(())
}

/// `λ_r·L_recon + λ_a·L_align + λ_k·L_KLD` on one batch, with gradients.
///
/// Reconstruction decodes `z = mu + σ⊙ε` (or `mu` itself when `epsilon` is
/// `None`); alignment always uses `mu`. Gradients are accumulated into
/// `grads` when given.
#[allow(clippy::too_many_arguments)]
pub fn forward_backward<T: Real>(
    vae: &Vae<T>,
    head: &ProjectionHead,
    anchors: &TextAnchorSet,
    x: &[T],
    labels: &[Label],
    epsilon: Option<&[T]>,
    weights: LossWeights,
    grads: Option<&mut Grads<T>>,
) -> Result<BatchLoss> {
    let n = labels.len();
    if n == 0 {
        return Err(GlaError::Validation("empty batch".into()));
    }
    let d = vae.arch.latent_dim;
    let enc = vae.encode_batch(x, n);
    let z = match epsilon {
        Some(eps) => reparameterize_batch(&enc.mu, &enc.log_var, eps),
        None => enc.mu.clone(),
    };
    let dec = vae.decode_batch(&z, n);
    let x_hat: Vec<T> = dec.logits.iter().map(|&l| T::lit(crate::vae::sigmoid(l.as_f64()))).collect();

    let s = x.len() / (n * vae.arch.input_channels);
    let mut recon_per_frame = vec![0.0; n];
    for (i, (xc, pc)) in x.chunks_exact(s).zip(x_hat.chunks_exact(s)).enumerate() {
        recon_per_frame[i % n] += recon_loss_bce(xc, pc, 1)?;
    }
    let kld_per_frame: Vec<f64> = (0..n)
        .map(|b| kld_loss(&enc.mu[b * d..][..d], &enc.log_var[b * d..][..d], 1))
        .collect();
    let mut passes = Vec::with_capacity(n);
    let mut align_per_frame = Vec::with_capacity(n);
    let mut logits = Vec::with_capacity(n);
    for (b, label) in labels.iter().enumerate() {
        let mu: Vec<f64> = enc.mu[b * d..][..d].iter().map(|v| v.as_f64()).collect();
        let pass = alignment_forward(&mu, head, anchors)?;
        align_per_frame.push(alignment_loss(pass.logits, label.index()));
        logits.push(pass.logits);
        passes.push(pass);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (recon, align, kld) = (mean(&recon_per_frame), mean(&align_per_frame), mean(&kld_per_frame));
    check_finite([("reconstruction", recon), ("alignment", align), ("KL", kld)])?;
    let total = weights.recon * recon + weights.align * align + weights.kld * kld;

    if let Some(g) = grads {
        let scale_r = T::lit(weights.recon / n as f64);
        let mut d_logits = bce_grad_logit(x, &x_hat);
        d_logits.iter_mut().for_each(|v| *v *= scale_r);
        let dz = vae.decoder_backward(&dec, &d_logits, Some(&mut g.vae));

        let k = weights.kld / n as f64;
        let mut d_mu = vec![T::zero(); n * d];
        let mut d_lv = vec![T::zero(); n * d];
        for i in 0..n * d {
            let (mu, lv) = (enc.mu[i].as_f64(), enc.log_var[i].as_f64());
            let mut gm = k * mu;
            let mut gl = k * 0.5 * (lv.exp() - 1.0);
            gm += dz[i].as_f64();
            if let Some(eps) = epsilon {
                gl += dz[i].as_f64() * 0.5 * (0.5 * lv).exp() * eps[i].as_f64();
            }
            d_mu[i] = T::lit(gm);
            d_lv[i] = T::lit(gl);
        }
        if weights.align != 0.0 {
            let a = weights.align / n as f64;
            for (b, (pass, label)) in passes.iter().zip(labels).enumerate() {
                let gs = alignment_loss_grad(pass.logits, label.index()).map(|v| v * a);
                let dm = alignment_backward(pass, gs, head, anchors, &mut g.head);
                for (j, v) in dm.into_iter().enumerate() {
                    d_mu[b * d + j] += T::lit(v);
                }
            }
        }
        vae.encoder_backward(&enc, &d_mu, &d_lv, Some(&mut g.vae), NUM_BLOCKS);
    }

    Ok(BatchLoss {
        total,
        recon,
        align,
        kld,
        logits,
        recon_per_frame,
        kld_per_frame,
        align_per_frame,
    })
}

/// Per-frame evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEval {
    pub id: String,
    pub label: Label,
    pub logits: [f64; 2],
    pub predicted: Label,
    pub recon_bce: f64,
    pub kld: f64,
    pub align: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub n: usize,
    pub alignment_accuracy: f64,
    pub mean_recon_bce: f64,
    pub mean_kld: f64,
    pub mean_align: f64,
    /// Weighted total loss with `z = mu`.
    pub mean_total: f64,
    pub frames: Vec<FrameEval>,
}

/// Deterministic evaluation (`z = mu`) of a prepared set.
pub fn evaluate_set(
    vae: &Vae<f32>,
    head: &ProjectionHead,
    anchors: &TextAnchorSet,
    set: &PreparedSet,
    weights: LossWeights,
    batch_size: usize,
) -> Result<EvalMetrics> {
    if set.is_empty() {
        return Err(GlaError::Validation("cannot evaluate an empty split".into()));
    }
    let mut frames = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = set.batch::<f32>(chunk, vae.arch.input_channels);
        let labels: Vec<Label> = chunk.iter().map(|&i| set.labels[i]).collect();
        let out = forward_backward(vae, head, anchors, &x, &labels, None, weights, None)?;
        for (b, &i) in chunk.iter().enumerate() {
            frames.push(FrameEval {
                id: set.ids[i].clone(),
                label: set.labels[i],
                logits: out.logits[b],
                predicted: Label::from_index(argmax(&out.logits[b]))?,
                recon_bce: out.recon_per_frame[b],
                kld: out.kld_per_frame[b],
                align: out.align_per_frame[b],
            });
        }
    }
    let n = frames.len() as f64;
    let mean = |f: fn(&FrameEval) -> f64| frames.iter().map(f).sum::<f64>() / n;
    let (r, a, k) = (mean(|f| f.recon_bce), mean(|f| f.align), mean(|f| f.kld));
    Ok(EvalMetrics {
        n: frames.len(),
        alignment_accuracy: frames.iter().filter(|f| f.predicted == f.label).count() as f64 / n,
        mean_recon_bce: r,
        mean_kld: k,
        mean_align: a,
        mean_total: weights.recon * r + weights.align * a + weights.kld * k,
        frames,
    })
}

/// Evaluates a checkpoint on the given splits of a dataset.
pub fn evaluate(ckpt: &Checkpoint, manifest: &DatasetManifest, splits: &[Split]) -> Result<EvalMetrics> {
    let set = PreparedSet::load(manifest, splits, &ckpt.config)?;
    let anchors = ckpt.anchors()?;
    evaluate_set(&ckpt.vae, &ckpt.head, &anchors, &set, ckpt.config.weights(), ckpt.config.batch_size)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Epoch 0 holds deterministic metrics of the initialized model; later
    /// epochs hold running means over training batches.
    pub train_total: f64,
    pub train_recon: f64,
    pub train_align: f64,
    pub train_kld: f64,
    pub val_total: f64,
    pub val_recon: f64,
    pub val_align: f64,
    pub val_kld: f64,
    pub val_accuracy: f64,
    pub tau: f64,
}

fn round_head(head: &mut ProjectionHead) {
    head.weight.iter_mut().for_each(|w| *w = *w as f32 as f64);
    head.log_tau = head.log_tau as f32 as f64;
}

/// Freshly initialized model for a configuration.
pub fn init_model(config: &TrainConfig) -> Result<(Vae<f32>, ProjectionHead)> {
    config.validate()?;
    let vae = Vae::<f32>::new(config.arch(), config.seed)?;
    let mut head = ProjectionHead::new(config.embed_dim, config.latent_dim, config.seed);
    // parameters live on the f32 grid so checkpoints are lossless
    round_head(&mut head);
    Ok((vae, head))
}

fn first_bad_grad(g: &Grads<f32>) -> Option<String> {
    for (name, _, t) in g.vae.params() {
        if t.iter().any(|v| !v.is_finite()) {
            return Some(name);
        }
    }
    if g.head.weight.iter().any(|v| !v.is_finite()) {
        return Some("head.weight".into());
    }
    if !g.head.log_tau.is_finite() {
        return Some("head.log_tau".into());
    }
    None
}

fn optimizer_step(
    vae: &mut Vae<f32>,
    head: &mut ProjectionHead,
    g: &Grads<f32>,
    adam: &mut AdamState,
    config: &TrainConfig,
) {
    let hyper = config.adam();
    adam.begin_step();
    let grads: Vec<&[f32]> = g.vae.params().into_iter().map(|(_, _, t)| t).collect();
    let slots = grads.len();
    for (i, (p, gr)) in vae.params_mut().into_iter().zip(grads).enumerate() {
        adam.update(i, &hyper, p, gr);
    }
    adam.update(slots, &hyper, &mut head.weight, &g.head.weight);
    if !config.freeze_tau {
        let mut lt = [head.log_tau];
        adam.update(slots + 1, &hyper, &mut lt, &[g.head.log_tau]);
        head.log_tau = lt[0];
    }
    round_head(head);
}

/// Adam state sized for a model.
pub fn new_optimizer(vae: &Vae<f32>, head: &ProjectionHead) -> AdamState {
    let mut sizes: Vec<usize> = vae.params().iter().map(|(_, _, t)| t.len()).collect();
    sizes.push(head.weight.len());
    sizes.push(1);
    AdamState::new(&sizes)
}

fn record(epoch: usize, train: (f64, f64, f64, f64), val: &EvalMetrics, tau: f64) -> EpochRecord {
    EpochRecord {
        epoch,
        train_total: train.0,
        train_recon: train.1,
        train_align: train.2,
        train_kld: train.3,
        val_total: val.mean_total,
        val_recon: val.mean_recon_bce,
        val_align: val.mean_align,
        val_kld: val.mean_kld,
        val_accuracy: val.alignment_accuracy,
        tau,
    }
}

/// Trains on the manifest's train split with early stopping on the val split.
pub fn train(config: &TrainConfig, manifest: &DatasetManifest) -> Result<Checkpoint> {
    config.validate()?;
    let train_set = PreparedSet::load(manifest, &[Split::Train], config)?;
    let val_set = PreparedSet::load(manifest, &[Split::Val], config)?;
    train_prepared(config, &train_set, &val_set, &manifest.params_digest)
}

/// Training loop over in-memory sets.
pub fn train_prepared(
    config: &TrainConfig,
    train_set: &PreparedSet,
    val_set: &PreparedSet,
    dataset_digest: &str,
) -> Result<Checkpoint> {
    config.validate()?;
    for label in Label::ALL {
        if !train_set.labels.contains(&label) {
            return Err(GlaError::Config(format!(
                "training split has no {label} frames; both classes are required"
            )));
        }
    }
    if val_set.is_empty() {
        return Err(GlaError::Config("validation split is empty".into()));
    }
    let anchors = config.anchors()?;
    let anchor_digest = anchors.vector_digest();
    let weights = config.weights();
    let (mut vae, mut head) = init_model(config)?;
    let mut adam = new_optimizer(&vae, &head);
    let channels = config.input_channels;
    let d = config.latent_dim;

    let init_train = evaluate_set(&vae, &head, &anchors, train_set, weights, config.batch_size)?;
    let init_val = evaluate_set(&vae, &head, &anchors, val_set, weights, config.batch_size)?;
    let mut history = vec![record(
        0,
        (
            init_train.mean_total,
            init_train.mean_recon_bce,
            init_train.mean_align,
            init_train.mean_kld,
        ),
        &init_val,
        head.tau(),
    )];
    log::info!(
        "epoch 0: val loss {:.4}, val accuracy {:.3}",
        init_val.mean_total,
        init_val.alignment_accuracy
    );
    let score = |m: &EvalMetrics| match config.early_stop_monitor {
        StopMonitor::ValTotal => m.mean_total,
        StopMonitor::ValAccuracy => -m.alignment_accuracy,
    };
    let mut best = (vae.clone(), head.clone(), adam.clone(), 0usize, init_val.mean_total);
    let mut best_score = score(&init_val);
    let mut since_best = 0;
    let mut epochs_run = 0;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut derive_rng(config.seed, "epoch-order", &[epoch as u64]));
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let n = chunk.len();
            let x = train_set.batch::<f32>(chunk, channels);
            let labels: Vec<Label> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let mut eps = Vec::with_capacity(n * d);
            for &i in chunk {
                let mut rng = derive_rng(config.seed, "epsilon", &[epoch as u64, i as u64]);
                eps.extend((0..d).map(|_| {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    e as f32
                }));
            }
            let mut grads = Grads::zeros(&vae, &head);
            let out = forward_backward(&vae, &head, &anchors, &x, &labels, Some(&eps), weights, Some(&mut grads))
                .map_err(|e| match e {
                    GlaError::Numerical(msg) => {
                        GlaError::Numerical(format!("epoch {epoch}, batch {bi}: {msg}"))
                    }
                    other => other,
                })?;
            if let Some(name) = first_bad_grad(&grads) {
                return Err(GlaError::Numerical(format!(
                    "epoch {epoch}, batch {bi}: non-finite gradient in {name}"
                )));
            }
            optimizer_step(&mut vae, &mut head, &grads, &mut adam, config);
            let w = n as f64;
            sums.0 += out.total * w;
            sums.1 += out.recon * w;
            sums.2 += out.align * w;
            sums.3 += out.kld * w;
        }
        epochs_run = epoch;
        if anchors.vector_digest() != anchor_digest {
            return Err(GlaError::Validation(format!("anchors changed during epoch {epoch}")));
        }
        let nt = train_set.len() as f64;
        let val = evaluate_set(&vae, &head, &anchors, val_set, weights, config.batch_size)?;
        history.push(record(
            epoch,
            (sums.0 / nt, sums.1 / nt, sums.2 / nt, sums.3 / nt),
            &val,
            head.tau(),
        ));
        log::info!(
            "epoch {epoch}: train loss {:.4} (recon {:.2}, align {:.4}, kld {:.2}), val loss {:.4}, val accuracy {:.3}",
            sums.0 / nt,
            sums.1 / nt,
            sums.2 / nt,
            sums.3 / nt,
            val.mean_total,
            val.alignment_accuracy
        );
        let s = score(&val);
        if s < best_score {
            best_score = s;
            best = (vae.clone(), head.clone(), adam.clone(), epoch, val.mean_total);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                log::info!("early stop after epoch {epoch}; best epoch {}", best.3);
                break;
            }
        }
    }

    let (vae, head, optimizer, best_epoch, best_val_loss) = best;
    Ok(Checkpoint {
        config: config.clone(),
        vae,
        head,
        optimizer,
        epochs_run,
        best_epoch,
        best_val_loss,
        history,
        anchor_provider: anchors.provider_id().to_string(),
        prompt_digest: anchors.prompt_digest(),
        anchor_digest,
        dataset_digest: dataset_digest.to_string(),
    })
}
