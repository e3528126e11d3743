//! Frozen text anchors, the latent-to-anchor projection head and the
//! cosine-logit alignment loss.

use std::collections::BTreeMap;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::seed::{derive_rng, sha256_hex};

pub const DEFAULT_EMBED_DIM: usize = 512;
pub const INITIAL_TEMPERATURE: f64 = 10.0;
/// Master seed of the offline stub encoder.
pub const STUB_SEED: u64 = 0x5EED_A11C;
const DEGENERATE_NORM: f64 = 1e-12;

pub const EMPTY_PROMPT: &str = "radar heatmap of an empty room without any person";
pub const PERSON_PROMPT: &str = "radar heatmap of a person present in the room";
pub const UNRELATED_PROMPTS: [&str; 2] = ["clouds in the sky", "an iceberg floating in the ocean"];

/// Source of prompt embeddings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnchorProvider {
    /// Deterministic hash-seeded Gaussian directions.
    Stub,
    /// JSON object mapping prompt strings to float arrays.
    ExternalFile { path: String },
}

impl AnchorProvider {
    pub fn id(&self) -> &'static str {
        match self {
            AnchorProvider::Stub => "stub-v1",
            AnchorProvider::ExternalFile { .. } => "external-file",
        }
    }
}

/// Two unit-norm anchor vectors, one per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextAnchorSet {
    prompts: [String; 2],
    vectors: [Vec<f64>; 2],
    provider_id: String,
}

fn unit(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !norm.is_finite() || norm < DEGENERATE_NORM {
        return Err(GlaError::Validation(format!("embedding for {what:?} has zero norm")));
    }
    v.iter_mut().for_each(|x| *x /= norm);
    Ok(v)
}

/// Stub embedding of one prompt.
pub fn stub_embedding(prompt: &str, embed_dim: usize) -> Vec<f64> {
    let mut rng = derive_rng(STUB_SEED, &format!("anchor-stub-v1:{prompt}"), &[]);
    let v = (0..embed_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    unit(v, prompt).expect("gaussian draw has positive norm")
}

impl TextAnchorSet {
    pub fn embed_prompts(prompts: &[String], provider: &AnchorProvider, embed_dim: usize) -> Result<Self> {
        let [p0, p1] = prompts else {
            return Err(GlaError::Config(format!("expected 2 prompts, got {}", prompts.len())));
        };
        if p0.trim().is_empty() || p1.trim().is_empty() {
            return Err(GlaError::Config("prompts must be non-empty".into()));
        }
        if embed_dim == 0 {
            return Err(GlaError::Config("embed_dim must be positive".into()));
        }
        let vectors = match provider {
            AnchorProvider::Stub => [stub_embedding(p0, embed_dim), stub_embedding(p1, embed_dim)],
            AnchorProvider::ExternalFile { path } => {
                let path = Path::new(path);
                let text = std::fs::read_to_string(path).map_err(|e| GlaError::io(path, e))?;
                let table: BTreeMap<String, Vec<f64>> =
                    serde_json::from_str(&text).map_err(|e| GlaError::json(path, e))?;
                let fetch = |p: &String| -> Result<Vec<f64>> {
                    let v = table.get(p).ok_or_else(|| GlaError::Lookup(p.clone()))?;
                    if v.len() != embed_dim {
                        return Err(GlaError::Structural(format!(
                            "embedding for {p:?} has {} values, expected {embed_dim}",
                            v.len()
                        )));
                    }
                    unit(v.clone(), p)
                };
                [fetch(p0)?, fetch(p1)?]
            }
        };
        Ok(Self {
            prompts: [p0.clone(), p1.clone()],
            vectors,
            provider_id: provider.id().to_string(),
        })
    }

    pub fn stub(prompts: [&str; 2], embed_dim: usize) -> Self {
        let prompts: Vec<String> = prompts.iter().map(|s| s.to_string()).collect();
        Self::embed_prompts(&prompts, &AnchorProvider::Stub, embed_dim).expect("valid stub prompts")
    }

    pub fn prompts(&self) -> &[String; 2] {
        &self.prompts
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k]
    }

    pub fn embed_dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn prompt_digest(&self) -> String {
        sha256_hex(format!("{}\n{}", self.prompts[0], self.prompts[1]).as_bytes())
    }

    /// Digest of the exact anchor bits; unchanged for the lifetime of the set.
    pub fn vector_digest(&self) -> String {
        let bytes: Vec<u8> = self.vectors.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        sha256_hex(&bytes)
    }

    pub fn cosine(&self) -> f64 {
        dot(&self.vectors[0], &self.vectors[1])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Linear map from latent means to anchor space plus a log-temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub embed_dim: usize,
    pub latent_dim: usize,
    /// Row-major `[embed_dim × latent_dim]`.
    pub weight: Vec<f64>,
    pub log_tau: f64,
}

impl ProjectionHead {
    pub fn new(embed_dim: usize, latent_dim: usize, seed: u64) -> Self {
        let mut rng = derive_rng(seed, "projection-init", &[]);
        let scale = 1.0 / (latent_dim as f64).sqrt();
        let weight = (0..embed_dim * latent_dim)
            .map(|_| {
                let e: f64 = StandardNormal.sample(&mut rng);
                scale * e
            })
            .collect();
        Self {
            embed_dim,
            latent_dim,
            weight,
            log_tau: INITIAL_TEMPERATURE.ln(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            log_tau: 0.0,
            ..*self
        }
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    /// Unnormalized projection `W·mu`.
    pub fn project(&self, mu: &[f64]) -> Result<Vec<f64>> {
        if mu.len() != self.latent_dim {
            return Err(GlaError::Structural(format!(
                "latent has {} entries, projection expects {}",
                mu.len(),
                self.latent_dim
            )));
        }
        Ok(self.weight.chunks_exact(self.latent_dim).map(|row| dot(row, mu)).collect())
    }
}

/// `W·mu / ‖W·mu‖`.
pub fn project_and_normalize(mu: &[f64], head: &ProjectionHead) -> Result<Vec<f64>> {
    let p = head.project(mu)?;
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(GlaError::Numerical(format!(
            "degenerate projection: ‖W·mu‖ = {norm:e}"
        )));
    }
    Ok(p.into_iter().map(|x| x / norm).collect())
}

pub fn cosine_logits(mu_bar: &[f64], anchors: &TextAnchorSet, tau: f64) -> [f64; 2] {
    [
        tau * dot(mu_bar, anchors.vector(0)),
        tau * dot(mu_bar, anchors.vector(1)),
    ]
}

pub fn softmax2(s: [f64; 2]) -> [f64; 2] {
    let m = s[0].max(s[1]);
    let e = [(s[0] - m).exp(), (s[1] - m).exp()];
    let z = e[0] + e[1];
    [e[0] / z, e[1] / z]
}

/// `-log softmax(s)_label`, evaluated stably.
pub fn alignment_loss(s: [f64; 2], label: usize) -> f64 {
    let m = s[0].max(s[1]);
    let lse = m + ((s[0] - m).exp() + (s[1] - m).exp()).ln();
    lse - s[label]
}

/// `∂L/∂s = softmax(s) − onehot(label)`.
pub fn alignment_loss_grad(s: [f64; 2], label: usize) -> [f64; 2] {
    let mut g = softmax2(s);
    g[label] -= 1.0;
    g
}

/// Forward state of the head for one sample.
#[derive(Debug, Clone)]
pub struct AlignmentPass {
    pub mu: Vec<f64>,
    pub norm: f64,
    pub mu_bar: Vec<f64>,
    pub logits: [f64; 2],
}

pub fn alignment_forward(mu: &[f64], head: &ProjectionHead, anchors: &TextAnchorSet) -> Result<AlignmentPass> {
    if anchors.embed_dim() != head.embed_dim {
        return Err(GlaError::Structural(format!(
            "anchors have dimension {}, projection head {}",
            anchors.embed_dim(),
            head.embed_dim
        )));
    }
    let p = head.project(mu)?;
    let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(norm >= DEGENERATE_NORM) {
        return Err(GlaError::Numerical(format!(
            "degenerate projection: ‖W·mu‖ = {norm:e}"
        )));
    }
    let mu_bar: Vec<f64> = p.into_iter().map(|x| x / norm).collect();
    let logits = cosine_logits(&mu_bar, anchors, head.tau());
    Ok(AlignmentPass {
        mu: mu.to_vec(),
        norm,
        mu_bar,
        logits,
    })
}

/// Backpropagates `d_logits` through the head.
///
/// Accumulates into `grads` (weight and log-temperature) and returns `∂L/∂mu`.
pub fn alignment_backward(
    pass: &AlignmentPass,
    d_logits: [f64; 2],
    head: &ProjectionHead,
    anchors: &TextAnchorSet,
    grads: &mut ProjectionHead,
) -> Vec<f64> {
    let tau = head.tau();
    grads.log_tau += d_logits[0] * pass.logits[0] + d_logits[1] * pass.logits[1];
    let (t0, t1) = (anchors.vector(0), anchors.vector(1));
    let a: Vec<f64> = t0
        .iter()
        .zip(t1)
        .map(|(x, y)| tau * (d_logits[0] * x + d_logits[1] * y))
        .collect();
    let along = dot(&pass.mu_bar, &a);
    let d_proj: Vec<f64> = a
        .iter()
        .zip(&pass.mu_bar)
        .map(|(ai, bi)| (ai - bi * along) / pass.norm)
        .collect();
    let d = head.latent_dim;
    let mut d_mu = vec![0.0; d];
    for (r, &g) in d_proj.iter().enumerate() {
        let row = &head.weight[r * d..][..d];
        let grow = &mut grads.weight[r * d..][..d];
        for j in 0..d {
            grow[j] += g * pass.mu[j];
            d_mu[j] += g * row[j];
        }
    }
    d_mu
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn radar_anchors() -> TextAnchorSet {
        TextAnchorSet::stub([EMPTY_PROMPT, PERSON_PROMPT], DEFAULT_EMBED_DIM)
    }

    #[test]
    fn stub_is_deterministic_and_unit_norm() {
        let a = stub_embedding("a person walking", 512);
        assert_eq!(a, stub_embedding("a person walking", 512));
        for p in ["x", "radar", EMPTY_PROMPT] {
            let n = stub_embedding(p, 512).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert_abs_diff_eq!(n, 1.0, epsilon = 1e-6);
        }
        assert_ne!(a, stub_embedding("a person walking.", 512));
    }

    #[test]
    fn stub_cosine_between_class_prompts_is_frozen() {
        let c = radar_anchors().cosine();
        assert!(c > -0.5 && c < 0.5);
        assert_abs_diff_eq!(c, STUB_CLASS_COSINE, epsilon = 1e-12);
    }

    // Regression value for the shipped stub seed.
    const STUB_CLASS_COSINE: f64 = -0.036767008667418055;

    #[test]
    fn prompt_count_and_lookup_errors() {
        let one = vec!["a".to_string()];
        assert!(TextAnchorSet::embed_prompts(&one, &AnchorProvider::Stub, 8).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("emb.json");
        std::fs::write(&path, r#"{"a": [3.0, 4.0]}"#).unwrap();
        let provider = AnchorProvider::ExternalFile {
            path: path.to_string_lossy().into(),
        };
        let err = TextAnchorSet::embed_prompts(&["a".into(), "b".into()], &provider, 2).unwrap_err();
        assert!(matches!(err, GlaError::Lookup(ref p) if p == "b"));
        std::fs::write(&path, r#"{"a": [3.0, 4.0], "b": [0.0, -2.0]}"#).unwrap();
        let set = TextAnchorSet::embed_prompts(&["a".into(), "b".into()], &provider, 2).unwrap();
        assert_eq!(set.vector(0), &[0.6, 0.8]);
        assert_eq!(set.vector(1), &[0.0, -1.0]);
        assert_eq!(set.provider_id(), "external-file");
    }

    fn identity_head(d: usize) -> ProjectionHead {
        let mut h = ProjectionHead::new(d, d, 0);
        h.weight = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        h
    }

    #[test]
    fn projection_examples() {
        let h = identity_head(4);
        assert_eq!(project_and_normalize(&[3.0, 4.0, 0.0, 0.0], &h).unwrap(), vec![0.6, 0.8, 0.0, 0.0]);
        assert!(matches!(project_and_normalize(&[0.0; 4], &h), Err(GlaError::Numerical(_))));
        let h = ProjectionHead::new(16, 4, 3);
        let mu = [0.2, -1.0, 0.7, 0.05];
        let a = project_and_normalize(&mu, &h).unwrap();
        let b = project_and_normalize(&mu.map(|v| v * 7.5), &h).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(a.iter().map(|v| v * v).sum::<f64>(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(h.tau(), 10.0, epsilon = 1e-12);
    }

    #[test]
    fn logit_examples() {
        let anchors = radar_anchors();
        let t0 = anchors.vector(0).to_vec();
        assert_abs_diff_eq!(cosine_logits(&t0, &anchors, 10.0)[0], 10.0, epsilon = 1e-9);
        let neg: Vec<f64> = anchors.vector(1).iter().map(|v| -v).collect();
        assert_abs_diff_eq!(cosine_logits(&neg, &anchors, 3.0)[1], -3.0, epsilon = 1e-9);
        // Gram-Schmidt: remove the t1 component from t0
        let c = anchors.cosine();
        let orth: Vec<f64> = t0.iter().zip(anchors.vector(1)).map(|(a, b)| a - c * b).collect();
        assert_abs_diff_eq!(cosine_logits(&orth, &anchors, 10.0)[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn loss_examples() {
        assert_abs_diff_eq!(alignment_loss([0.0, 0.0], 0), 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(alignment_loss([0.0, 0.0], 1), 2f64.ln(), epsilon = 1e-9);
        assert_abs_diff_eq!(alignment_loss([10.0, -10.0], 0), 2.061e-9, epsilon = 1e-12);
        assert_abs_diff_eq!(alignment_loss([10.0, -10.0], 1), 20.0 + (-20f64).exp().ln_1p(), epsilon = 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_difference() {
        let s = [1.3, -0.4];
        let h = 1e-6;
        for y in 0..2 {
            let g = alignment_loss_grad(s, y);
            for k in 0..2 {
                let (mut p, mut m) = (s, s);
                p[k] += h;
                m[k] -= h;
                let fd = (alignment_loss(p, y) - alignment_loss(m, y)) / (2.0 * h);
                assert_abs_diff_eq!(g[k], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn head_backward_matches_finite_difference() {
        let anchors = TextAnchorSet::stub(["p0", "p1"], 6);
        let mut head = ProjectionHead::new(6, 3, 9);
        head.log_tau = 0.4;
        let mu = vec![0.5, -0.3, 1.1];
        let loss = |h: &ProjectionHead, m: &[f64]| {
            alignment_loss(alignment_forward(m, h, &anchors).unwrap().logits, 1)
        };
        let pass = alignment_forward(&mu, &head, &anchors).unwrap();
        let mut grads = head.zeros_like();
        let d_mu = alignment_backward(&pass, alignment_loss_grad(pass.logits, 1), &head, &anchors, &mut grads);
        let e = 1e-6;
        for j in 0..3 {
            let (mut p, mut m) = (mu.clone(), mu.clone());
            p[j] += e;
            m[j] -= e;
            let fd = (loss(&head, &p) - loss(&head, &m)) / (2.0 * e);
            assert_abs_diff_eq!(d_mu[j], fd, epsilon = 1e-7);
        }
        for i in [0, 5, 11, 17] {
            let (mut p, mut m) = (head.clone(), head.clone());
            p.weight[i] += e;
            m.weight[i] -= e;
            let fd = (loss(&p, &mu) - loss(&m, &mu)) / (2.0 * e);
            assert_abs_diff_eq!(grads.weight[i], fd, epsilon = 1e-7);
        }
        let (mut p, mut m) = (head.clone(), head.clone());
        p.log_tau += e;
        m.log_tau -= e;
        let fd = (loss(&p, &mu) - loss(&m, &mu)) / (2.0 * e);
        assert_abs_diff_eq!(grads.log_tau, fd, epsilon = 1e-7);
    }

    #[test]
    fn logits_are_bounded_and_scale_invariant() {
        let anchors = TextAnchorSet::stub(["u", "v"], 32);
        let head = ProjectionHead::new(32, 8, 1);
        for s in 0..20u64 {
            let mu: Vec<f64> = (0..8).map(|j| ((s * 8 + j) as f64 * 0.37).sin()).collect();
            let a = alignment_forward(&mu, &head, &anchors).unwrap().logits;
            let scaled: Vec<f64> = mu.iter().map(|v| v * 3.3).collect();
            let b = alignment_forward(&scaled, &head, &anchors).unwrap().logits;
            for k in 0..2 {
                assert!(a[k].abs() <= head.tau() + 1e-12);
                assert_abs_diff_eq!(a[k], b[k], epsilon = 1e-9);
            }
        }
    }
}
