//! Convolutional VAE over Range-Angle frames.
//!
//! Encoder: four stride-2 conv blocks (ReLU), flatten, and two linear heads
//! for `mu` and `log_var`. Decoder: a linear layer back to the deepest feature
//! grid followed by four stride-2 transposed convolutions, ReLU between them
//! and a sigmoid on the output.

mod layers;
mod loss;
mod scalar;

use serde::{Deserialize, Serialize};

use crate::error::{GlaError, Result};
use crate::frames::RAFrame;
use crate::seed::derive_rng;

pub use layers::{col2im, im2col, Conv2d, ConvTranspose2d, Linear, KERNEL};
pub use loss::{
    bce_grad_logit, kld_loss, recon_loss_bce, reparameterize, reparameterize_batch, sigmoid, BCE_EPS, LOG_VAR_CLAMP,
};
pub use scalar::{gemm, Real};

/// Number of stride-2 blocks in the encoder and decoder.
pub const NUM_BLOCKS: usize = 4;
/// Encoder block (0-based) whose activations Grad-CAM explains.
pub const CAM_BLOCK: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VAEArch {
    pub input_channels: usize,
    /// `[height, width]`
    pub input_hw: [usize; 2],
    pub conv_channels: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for VAEArch {
    fn default() -> Self {
        Self {
            input_channels: 3,
            input_hw: [64, 64],
            conv_channels: vec![32, 64, 128, 256],
            latent_dim: 32,
        }
    }
}

impl VAEArch {
    pub fn validate(&self) -> Result<()> {
        let [h, w] = self.input_hw;
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(GlaError::Config(format!(
                "input {h}x{w} must be positive and divisible by 16"
            )));
        }
        if self.conv_channels.len() != NUM_BLOCKS || self.conv_channels.contains(&0) {
            return Err(GlaError::Config(format!(
                "conv_channels must list {NUM_BLOCKS} positive widths"
            )));
        }
        if self.latent_dim < 2 {
            return Err(GlaError::Config("latent_dim must be >= 2".into()));
        }
        if self.input_channels == 0 {
            return Err(GlaError::Config("input_channels must be >= 1".into()));
        }
        Ok(())
    }

    /// Spatial size after encoder block `k` (0-based).
    pub fn block_hw(&self, k: usize) -> (usize, usize) {
        (self.input_hw[0] >> (k + 1), self.input_hw[1] >> (k + 1))
    }

    pub fn flat_features(&self) -> usize {
        let (h, w) = self.block_hw(NUM_BLOCKS - 1);
        self.conv_channels[NUM_BLOCKS - 1] * h * w
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_hw[0] * self.input_hw[1]
    }
}

/// Posterior parameters of one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentCode {
    pub mu: Vec<f64>,
    /// Clamped to `[-LOG_VAR_CLAMP, LOG_VAR_CLAMP]`.
    pub log_var: Vec<f64>,
    pub z: Option<Vec<f64>>,
}

/// Activations of one encoder block for one frame, `[channels × h × w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub code: LatentCode,
    /// Post-ReLU activations of every encoder block.
    pub blocks: Vec<FeatureMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae<T> {
    pub arch: VAEArch,
    pub encoder: Vec<Conv2d<T>>,
    pub fc_mu: Linear<T>,
    pub fc_log_var: Linear<T>,
    pub decoder_fc: Linear<T>,
    pub decoder: Vec<ConvTranspose2d<T>>,
}

/// Forward state of the encoder for a batch, kept for the backward pass.
pub struct EncoderPass<T> {
    pub n: usize,
    /// im2col buffers of each block input.
    pub cols: Vec<Vec<T>>,
    /// Post-ReLU block outputs, `[C, N, h, w]`.
    pub acts: Vec<Vec<T>>,
    /// `[N, flat_features]`
    pub flat: Vec<T>,
    /// `[N, d]`
    pub mu: Vec<T>,
    /// Unclamped head output `[N, d]`.
    pub log_var_raw: Vec<T>,
    /// Clamped log-variance `[N, d]`.
    pub log_var: Vec<T>,
}

/// Forward state of the decoder for a batch.
pub struct DecoderPass<T> {
    pub n: usize,
    pub z: Vec<T>,
    /// Post-ReLU decoder input grid, `[C4, N, h4, w4]`.
    pub grid: Vec<T>,
    /// Post-ReLU outputs of the first three transposed convolutions.
    pub acts: Vec<Vec<T>>,
    /// Pre-sigmoid output `[C, N, H, W]`.
    pub logits: Vec<T>,
}

/// `[N, C·S]` (row per sample) to `[C, N, S]`.
pub fn samples_to_channels<T: Real>(x: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..n {
        for ci in 0..c {
            out[(ci * n + b) * s..][..s].copy_from_slice(&x[(b * c + ci) * s..][..s]);
        }
    }
    out
}

/// `[C, N, S]` to `[N, C·S]`.
pub fn channels_to_samples<T: Real>(x: &[T], n: usize, c: usize, s: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ci in 0..c {
        for b in 0..n {
            out[(b * c + ci) * s..][..s].copy_from_slice(&x[(ci * n + b) * s..][..s]);
        }
    }
    out
}

fn relu_in_place<T: Real>(x: &mut [T]) {
    x.iter_mut().for_each(|v| {
        if *v < T::zero() {
            *v = T::zero()
        }
    });
}

/// Zeroes gradient entries whose post-ReLU activation is not positive.
fn relu_mask<T: Real>(grad: &mut [T], act: &[T]) {
    for (g, a) in grad.iter_mut().zip(act) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

impl<T: Real> Vae<T> {
    pub fn new(arch: VAEArch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = derive_rng(seed, "vae-init", &[]);
        let ch = &arch.conv_channels;
        let mut encoder = Vec::with_capacity(NUM_BLOCKS);
        let mut cin = arch.input_channels;
        for &cout in ch {
            encoder.push(Conv2d::new(cin, cout, &mut rng));
            cin = cout;
        }
        let flat = arch.flat_features();
        let d = arch.latent_dim;
        let fc_mu = Linear::new(flat, d, &mut rng);
        let fc_log_var = Linear::new(flat, d, &mut rng);
        let decoder_fc = Linear::new(d, flat, &mut rng);
        let mut widths: Vec<usize> = ch.iter().rev().copied().collect();
        widths.push(arch.input_channels);
        let decoder = widths
            .windows(2)
            .map(|w| ConvTranspose2d::new(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            arch,
            encoder,
            fc_mu,
            fc_log_var,
            decoder_fc,
            decoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            arch: self.arch.clone(),
            encoder: self.encoder.iter().map(Conv2d::zeros_like).collect(),
            fc_mu: self.fc_mu.zeros_like(),
            fc_log_var: self.fc_log_var.zeros_like(),
            decoder_fc: self.decoder_fc.zeros_like(),
            decoder: self.decoder.iter().map(ConvTranspose2d::zeros_like).collect(),
        }
    }

    /// Named parameter tensors with their shapes, in a fixed order.
    pub fn params(&self) -> Vec<(String, Vec<usize>, &[T])> {
        let mut out: Vec<(String, Vec<usize>, &[T])> = Vec::new();
        for (k, l) in self.encoder.iter().enumerate() {
            out.push((
                format!("vae.encoder.{k}.weight"),
                vec![l.out_channels, l.in_channels, KERNEL, KERNEL],
                &l.weight,
            ));
            out.push((format!("vae.encoder.{k}.bias"), vec![l.out_channels], &l.bias));
        }
        for (name, l) in [("fc_mu", &self.fc_mu), ("fc_log_var", &self.fc_log_var)] {
            out.push((format!("vae.{name}.weight"), vec![l.out_features, l.in_features], &l.weight));
            out.push((format!("vae.{name}.bias"), vec![l.out_features], &l.bias));
        }
        let l = &self.decoder_fc;
        out.push(("vae.decoder_fc.weight".into(), vec![l.out_features, l.in_features], &l.weight));
        out.push(("vae.decoder_fc.bias".into(), vec![l.out_features], &l.bias));
        for (k, l) in self.decoder.iter().enumerate() {
            out.push((
                format!("vae.decoder.{k}.weight"),
                vec![l.in_channels, l.out_channels, KERNEL, KERNEL],
                &l.weight,
            ));
            out.push((format!("vae.decoder.{k}.bias"), vec![l.out_channels], &l.bias));
        }
        out
    }

    /// Mutable parameter buffers in the same order as [`Vae::params`].
    pub fn params_mut(&mut self) -> Vec<&mut Vec<T>> {
        let mut out: Vec<&mut Vec<T>> = Vec::new();
        for l in self.encoder.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.fc_mu.weight);
        out.push(&mut self.fc_mu.bias);
        out.push(&mut self.fc_log_var.weight);
        out.push(&mut self.fc_log_var.bias);
        out.push(&mut self.decoder_fc.weight);
        out.push(&mut self.decoder_fc.bias);
        for l in self.decoder.iter_mut() {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, _, p)| p.len()).sum()
    }

    /// Converts parameters to another precision.
    pub fn cast<U: Real>(&self) -> Vae<U> {
        let mut out = Vae::<U> {
            arch: self.arch.clone(),
            encoder: self
                .encoder
                .iter()
                .map(|l| Conv2d {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    weight: Vec::new(),
                    bias: Vec::new(),
                })
                .collect(),
            fc_mu: empty_linear(&self.fc_mu),
            fc_log_var: empty_linear(&self.fc_log_var),
            decoder_fc: empty_linear(&self.decoder_fc),
            decoder: self
                .decoder
                .iter()
                .map(|l| ConvTranspose2d {
                    in_channels: l.in_channels,
                    out_channels: l.out_channels,
                    weight: Vec::new(),
                    bias: Vec::new(),
                })
                .collect(),
        };
        for (dst, (_, _, src)) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.iter().map(|v| U::lit(v.as_f64())).collect();
        }
        out
    }

    /// Stacks frames into the `[C, N, H, W]` batch layout.
    pub fn batch_input(&self, frames: &[&RAFrame]) -> Result<Vec<T>> {
        let [h, w] = self.arch.input_hw;
        let c = self.arch.input_channels;
        let n = frames.len();
        let mut x = vec![T::zero(); c * n * h * w];
        for (b, f) in frames.iter().enumerate() {
            if f.shape() != [c, h, w] {
                return Err(GlaError::Structural(format!(
                    "frame {} has shape {:?}, model expects {:?}",
                    f.source_id,
                    f.shape(),
                    [c, h, w]
                )));
            }
            for ci in 0..c {
                let dst = &mut x[(ci * n + b) * h * w..][..h * w];
                for (d, s) in dst.iter_mut().zip(f.plane(ci)) {
                    *d = T::lit(*s as f64);
                }
            }
        }
        Ok(x)
    }

    pub fn encode_batch(&self, x: &[T], n: usize) -> EncoderPass<T> {
        let [mut h, mut w] = self.arch.input_hw;
        let mut cols = Vec::with_capacity(NUM_BLOCKS);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(NUM_BLOCKS);
        for (k, layer) in self.encoder.iter().enumerate() {
            let input = if k == 0 { x } else { &acts[k - 1] };
            let (mut out, c) = layer.forward(input, n, h, w);
            relu_in_place(&mut out);
            cols.push(c);
            acts.push(out);
            h /= 2;
            w /= 2;
        }
        let c4 = self.arch.conv_channels[NUM_BLOCKS - 1];
        let flat = channels_to_samples(&acts[NUM_BLOCKS - 1], n, c4, h * w);
        let mu = self.fc_mu.forward(&flat, n);
        let log_var_raw = self.fc_log_var.forward(&flat, n);
        let lim = T::lit(LOG_VAR_CLAMP);
        let log_var = log_var_raw.iter().map(|v| v.max(-lim).min(lim)).collect();
        EncoderPass {
            n,
            cols,
            acts,
            flat,
            mu,
            log_var_raw,
            log_var,
        }
    }

    /// Backpropagates `d_mu` and `d_log_var` (w.r.t. the clamped values).
    ///
    /// Parameter gradients are accumulated into `grads` when given. The
    /// gradient with respect to the post-ReLU output of block `capture` is
    /// returned; without `grads` the pass stops there.
    pub fn encoder_backward(
        &self,
        pass: &EncoderPass<T>,
        d_mu: &[T],
        d_log_var: &[T],
        mut grads: Option<&mut Vae<T>>,
        capture: usize,
    ) -> Vec<T> {
        let n = pass.n;
        let lim = T::lit(LOG_VAR_CLAMP);
        let d_lv: Vec<T> = d_log_var
            .iter()
            .zip(&pass.log_var_raw)
            .map(|(&g, &raw)| if raw < -lim || raw > lim { T::zero() } else { g })
            .collect();
        let mut d_flat = self
            .fc_mu
            .backward(d_mu, &pass.flat, n, grads.as_deref_mut().map(|g| &mut g.fc_mu), true)
            .expect("input grad");
        let d_flat_lv = self
            .fc_log_var
            .backward(&d_lv, &pass.flat, n, grads.as_deref_mut().map(|g| &mut g.fc_log_var), true)
            .expect("input grad");
        d_flat.iter_mut().zip(&d_flat_lv).for_each(|(a, b)| *a += *b);

        let (h4, w4) = self.arch.block_hw(NUM_BLOCKS - 1);
        let c4 = self.arch.conv_channels[NUM_BLOCKS - 1];
        let mut d_act = samples_to_channels(&d_flat, n, c4, h4 * w4);
        let mut captured = Vec::new();
        for k in (0..NUM_BLOCKS).rev() {
            if k == capture {
                captured = d_act.clone();
                if grads.is_none() {
                    break;
                }
            }
            relu_mask(&mut d_act, &pass.acts[k]);
            let (h_in, w_in) = if k == 0 {
                (self.arch.input_hw[0], self.arch.input_hw[1])
            } else {
                self.arch.block_hw(k - 1)
            };
            let need_input = k > 0 && (grads.is_some() || k > capture);
            let next = self.encoder[k].backward(
                &d_act,
                &pass.cols[k],
                n,
                h_in,
                w_in,
                grads.as_deref_mut().map(|g| &mut g.encoder[k]),
                need_input,
            );
            match next {
                Some(d) => d_act = d,
                None => break,
            }
        }
        captured
    }

    pub fn decode_batch(&self, z: &[T], n: usize) -> DecoderPass<T> {
        let (mut h, mut w) = self.arch.block_hw(NUM_BLOCKS - 1);
        let c4 = self.arch.conv_channels[NUM_BLOCKS - 1];
        let mut hidden = self.decoder_fc.forward(z, n);
        relu_in_place(&mut hidden);
        let grid = samples_to_channels(&hidden, n, c4, h * w);
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(NUM_BLOCKS - 1);
        let mut logits = Vec::new();
        for (k, layer) in self.decoder.iter().enumerate() {
            let input = if k == 0 { &grid } else { &acts[k - 1] };
            let mut out = layer.forward(input, n, h, w);
            h *= 2;
            w *= 2;
            if k + 1 < NUM_BLOCKS {
                relu_in_place(&mut out);
                acts.push(out);
            } else {
                logits = out;
            }
        }
        DecoderPass {
            n,
            z: z.to_vec(),
            grid,
            acts,
            logits,
        }
    }

    /// Backpropagates the gradient w.r.t. the output logits; returns `dL/dz`.
    pub fn decoder_backward(
        &self,
        pass: &DecoderPass<T>,
        d_logits: &[T],
        mut grads: Option<&mut Vae<T>>,
    ) -> Vec<T> {
        let n = pass.n;
        let mut d = d_logits.to_vec();
        for k in (0..NUM_BLOCKS).rev() {
            let (h_in, w_in) = self.arch.block_hw(NUM_BLOCKS - 1 - k);
            let input = if k == 0 { &pass.grid } else { &pass.acts[k - 1] };
            let mut dx = self.decoder[k]
                .backward(&d, input, n, h_in, w_in, grads.as_deref_mut().map(|g| &mut g.decoder[k]), true)
                .expect("input grad");
            relu_mask(&mut dx, input);
            d = dx;
        }
        let (h4, w4) = self.arch.block_hw(NUM_BLOCKS - 1);
        let c4 = self.arch.conv_channels[NUM_BLOCKS - 1];
        let d_hidden = channels_to_samples(&d, n, c4, h4 * w4);
        self.decoder_fc
            .backward(&d_hidden, &pass.z, n, grads.map(|g| &mut g.decoder_fc), true)
            .expect("input grad")
    }

    /// Encodes one frame, returning the posterior and every block's activations.
    pub fn encode(&self, frame: &RAFrame) -> Result<EncodeOutput> {
        let x = self.batch_input(&[frame])?;
        let pass = self.encode_batch(&x, 1);
        let blocks = pass
            .acts
            .iter()
            .enumerate()
            .map(|(k, a)| {
                let (h, w) = self.arch.block_hw(k);
                FeatureMap {
                    channels: self.arch.conv_channels[k],
                    height: h,
                    width: w,
                    values: a.iter().map(|v| v.as_f64()).collect(),
                }
            })
            .collect();
        Ok(EncodeOutput {
            code: LatentCode {
                mu: pass.mu.iter().map(|v| v.as_f64()).collect(),
                log_var: pass.log_var.iter().map(|v| v.as_f64()).collect(),
                z: None,
            },
            blocks,
        })
    }

    /// Decodes one latent vector into a `[C × H × W]` reconstruction in (0, 1).
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.arch.latent_dim {
            return Err(GlaError::Structural(format!(
                "latent has {} entries, model expects {}",
                z.len(),
                self.arch.latent_dim
            )));
        }
        let zt: Vec<T> = z.iter().map(|&v| T::lit(v)).collect();
        let pass = self.decode_batch(&zt, 1);
        Ok(pass.logits.iter().map(|v| sigmoid(v.as_f64())).collect())
    }

    /// Reconstruction from the posterior mean, as a frame with the input's metadata.
    pub fn reconstruct(&self, frame: &RAFrame) -> Result<RAFrame> {
        let out = self.encode(frame)?;
        let xhat = self.decode(&out.code.mu)?;
        let [h, w] = self.arch.input_hw;
        let mut f = RAFrame::new(
            self.arch.input_channels,
            h,
            w,
            xhat.iter().map(|&v| v as f32).collect(),
            frame.label,
            frame.source_id.clone(),
        )?;
        f.normalization = frame.normalization;
        Ok(f)
    }
}

fn empty_linear<T, U>(l: &Linear<T>) -> Linear<U> {
    Linear {
        in_features: l.in_features,
        out_features: l.out_features,
        weight: Vec::new(),
        bias: Vec::new(),
    }
}
