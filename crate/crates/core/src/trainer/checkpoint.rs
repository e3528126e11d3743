//! Binary checkpoint archive.
//!
//! Layout: 8-byte magic, little-endian `u64` header length, compact JSON
//! header, then the little-endian `f32` tensor blobs listed in the header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{new_optimizer, AdamState, EpochRecord, TrainConfig};
use crate::anchors::{ProjectionHead, TextAnchorSet};
use crate::error::{GlaError, Result};
use crate::seed::sha256_hex;
use crate::vae::Vae;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GLACKPT\0";
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vae: Vae<f32>,
    pub head: ProjectionHead,
    /// Optimizer state at the best epoch.
    pub optimizer: AdamState,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub history: Vec<EpochRecord>,
    pub anchor_provider: String,
    pub prompt_digest: String,
    pub anchor_digest: String,
    pub dataset_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
    len: u64,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    schema_version: u32,
    config: TrainConfig,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
    history: Vec<EpochRecord>,
    anchor_provider: String,
    prompt_digest: String,
    anchor_digest: String,
    dataset_digest: String,
    optimizer_step: u64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    /// Named tensors in archive order.
    fn tensors(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        let mut out: Vec<(String, Vec<usize>, Vec<f32>)> = self
            .vae
            .params()
            .into_iter()
            .map(|(n, s, t)| (n, s, t.to_vec()))
            .collect();
        out.push((
            "head.weight".into(),
            vec![self.head.embed_dim, self.head.latent_dim],
            self.head.weight.iter().map(|&v| v as f32).collect(),
        ));
        out.push(("head.log_tau".into(), vec![1], vec![self.head.log_tau as f32]));
        let shapes: Vec<(String, Vec<usize>)> = out.iter().map(|(n, s, _)| (n.clone(), s.clone())).collect();
        for (kind, moments) in [("m", &self.optimizer.m), ("v", &self.optimizer.v)] {
            for ((name, shape), buf) in shapes.iter().zip(moments) {
                out.push((format!("adam.{kind}.{name}"), shape.clone(), buf.clone()));
            }
        }
        out
    }

    /// Re-embeds the training prompts, warning when the vectors differ from
    /// those the model was trained against.
    pub fn anchors(&self) -> Result<TextAnchorSet> {
        let anchors = self.config.anchors()?;
        if anchors.vector_digest() != self.anchor_digest {
            log::warn!(
                "anchor vectors differ from the checkpoint's ({} vs {})",
                anchors.vector_digest(),
                self.anchor_digest
            );
        }
        Ok(anchors)
    }

    /// Anchors for other prompts; warns because the model was not trained on them.
    pub fn anchors_for(&self, prompts: &[String]) -> Result<TextAnchorSet> {
        let anchors = TextAnchorSet::embed_prompts(prompts, &self.config.provider(), self.config.embed_dim)?;
        if anchors.prompt_digest() != self.prompt_digest {
            log::warn!("prompts differ from the ones this checkpoint was trained with");
        }
        Ok(anchors)
    }

    /// SHA-256 over all model parameters (not optimizer state).
    pub fn parameter_digest(&self) -> String {
        let mut bytes = Vec::new();
        for (_, _, t) in self.vae.params() {
            bytes.extend(t.iter().flat_map(|v| v.to_le_bytes()));
        }
        bytes.extend(self.head.weight.iter().flat_map(|v| (*v as f32).to_le_bytes()));
        bytes.extend((self.head.log_tau as f32).to_le_bytes());
        sha256_hex(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let tensors = self.tensors();
        let mut entries = Vec::with_capacity(tensors.len());
        let mut blob = Vec::new();
        for (name, shape, data) in &tensors {
            let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
            entries.push(TensorEntry {
                name: name.clone(),
                shape: shape.clone(),
                offset: blob.len() as u64,
                len: data.len() as u64,
                sha256: sha256_hex(&bytes),
            });
            blob.extend(bytes);
        }
        let header = Header {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config: self.config.clone(),
            epochs_run: self.epochs_run,
            best_epoch: self.best_epoch,
            best_val_loss: self.best_val_loss,
            history: self.history.clone(),
            anchor_provider: self.anchor_provider.clone(),
            prompt_digest: self.prompt_digest.clone(),
            anchor_digest: self.anchor_digest.clone(),
            dataset_digest: self.dataset_digest.clone(),
            optimizer_step: self.optimizer.step,
            tensors: entries,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + blob.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend((json.len() as u64).to_le_bytes());
        out.extend(json);
        out.extend(blob);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: &str| GlaError::Validation(format!("{}: {msg}", path.display()));
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint archive"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let json = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let value: serde_json::Value = serde_json::from_slice(json).map_err(|e| GlaError::json(path, e))?;
        let found = value
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| GlaError::Field {
                path: path.to_path_buf(),
                field: "schema_version".into(),
            })? as u32;
        if found != CHECKPOINT_SCHEMA_VERSION {
            return Err(GlaError::Version {
                found,
                expected: CHECKPOINT_SCHEMA_VERSION,
            });
        }
        let header: Header = serde_json::from_value(value).map_err(|e| GlaError::json(path, e))?;
        header.config.validate()?;
        let blob = &bytes[16 + hlen..];

        let mut read = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            let start = t.offset as usize;
            let end = start + 4 * t.len as usize;
            let raw = blob.get(start..end).ok_or_else(|| bad(&format!("tensor {} out of bounds", t.name)))?;
            if sha256_hex(raw) != t.sha256 {
                return Err(bad(&format!("digest mismatch for tensor {}", t.name)));
            }
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            read.push((t.name.clone(), t.shape.clone(), data));
        }

        let config = header.config.clone();
        let mut vae = Vae::<f32>::new(config.arch(), 0)?;
        let mut head = ProjectionHead {
            embed_dim: config.embed_dim,
            latent_dim: config.latent_dim,
            weight: Vec::new(),
            log_tau: 0.0,
        };
        let optimizer = new_optimizer(&vae, &head_shape(&config));
        let mut ckpt = Checkpoint {
            config,
            vae: vae.clone(),
            head: head.clone(),
            optimizer,
            epochs_run: header.epochs_run,
            best_epoch: header.best_epoch,
            best_val_loss: header.best_val_loss,
            history: header.history,
            anchor_provider: header.anchor_provider,
            prompt_digest: header.prompt_digest,
            anchor_digest: header.anchor_digest,
            dataset_digest: header.dataset_digest,
        };
        ckpt.optimizer.step = header.optimizer_step;
        ckpt.head = head_shape(&ckpt.config);
        let expected = ckpt.tensors();
        if expected.len() != read.len() {
            return Err(bad(&format!(
                "archive holds {} tensors, configuration needs {}",
                read.len(),
                expected.len()
            )));
        }
        for ((en, es, ed), (rn, rs, _)) in expected.iter().zip(&read) {
            if en != rn || es != rs || ed.len() != read_len(rs) {
                return Err(bad(&format!("tensor {rn} {rs:?} does not match {en} {es:?}")));
            }
        }
        let mut it = read.into_iter().map(|(_, _, d)| d);
        for p in vae.params_mut() {
            *p = it.next().expect("counted");
        }
        head.weight = it.next().expect("counted").into_iter().map(f64::from).collect();
        head.log_tau = f64::from(it.next().expect("counted")[0]);
        for buf in ckpt.optimizer.m.iter_mut() {
            *buf = it.next().expect("counted");
        }
        for buf in ckpt.optimizer.v.iter_mut() {
            *buf = it.next().expect("counted");
        }
        ckpt.vae = vae;
        ckpt.head = head;
        Ok(ckpt)
    }
}

fn read_len(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn head_shape(config: &TrainConfig) -> ProjectionHead {
    ProjectionHead {
        embed_dim: config.embed_dim,
        latent_dim: config.latent_dim,
        weight: vec![0.0; config.embed_dim * config.latent_dim],
        log_tau: 0.0,
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| GlaError::io(dir, e))?;
    }
    std::fs::write(path, ckpt.to_bytes()).map_err(|e| GlaError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| GlaError::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}
