//! ELBO terms and the reparameterization trick.

use crate::error::{GlaError, Result};

use super::scalar::Real;
use super::LatentCode;

pub const LOG_VAR_CLAMP: f64 = 10.0;
pub const BCE_EPS: f64 = 1e-7;

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// `z = mu + exp(0.5·log_var) ⊙ epsilon`; the result is stored in `code.z`.
pub fn reparameterize(code: &mut LatentCode, epsilon: &[f64]) -> Result<Vec<f64>> {
    if epsilon.len() != code.mu.len() || code.log_var.len() != code.mu.len() {
        return Err(GlaError::Structural(format!(
            "epsilon has {} entries, latent has {}",
            epsilon.len(),
            code.mu.len()
        )));
    }
    let z: Vec<f64> = code
        .mu
        .iter()
        .zip(&code.log_var)
        .zip(epsilon)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect();
    code.z = Some(z.clone());
    Ok(z)
}

/// Batched reparameterization over flat `[n, d]` buffers.
pub fn reparameterize_batch<T: Real>(mu: &[T], log_var: &[T], epsilon: &[T]) -> Vec<T> {
    let half = T::lit(0.5);
    mu.iter()
        .zip(log_var)
        .zip(epsilon)
        .map(|((&m, &lv), &e)| m + (half * lv).exp() * e)
        .collect()
}

fn check_targets<T: Real>(x: &[T]) -> Result<()> {
    match x.iter().find(|v| !(v.as_f64() >= 0.0 && v.as_f64() <= 1.0)) {
        Some(v) => Err(GlaError::Validation(format!(
            "BCE target {:?} outside [0, 1]",
            v.as_f64()
        ))),
        None => Ok(()),
    }
}

/// Pixel-summed binary cross-entropy averaged over `n` samples.
pub fn recon_loss_bce<T: Real>(x: &[T], x_hat: &[T], n: usize) -> Result<f64> {
    if x.len() != x_hat.len() || n == 0 {
        return Err(GlaError::Structural(format!(
            "BCE inputs have {} and {} values over {n} samples",
            x.len(),
            x_hat.len()
        )));
    }
    check_targets(x)?;
    let total: f64 = x
        .iter()
        .zip(x_hat)
        .map(|(&t, &p)| {
            let t = t.as_f64();
            let p = p.as_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / n as f64)
}

/// Gradient of the summed BCE with respect to the pre-sigmoid logits.
///
/// Saturated outputs (where the clamp is active) pass no gradient.
pub fn bce_grad_logit<T: Real>(x: &[T], x_hat: &[T]) -> Vec<T> {
    let lo = T::lit(BCE_EPS);
    let hi = T::lit(1.0 - BCE_EPS);
    x.iter()
        .zip(x_hat)
        .map(|(&t, &p)| if p < lo || p > hi { T::zero() } else { p - t })
        .collect()
}

/// Closed-form KL(q ‖ N(0, I)) summed over latent dims and averaged over `n`.
pub fn kld_loss<T: Real>(mu: &[T], log_var: &[T], n: usize) -> f64 {
    let total: f64 = mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| {
            let (m, lv) = (m.as_f64(), lv.as_f64());
            -0.5 * (1.0 + lv - m * m - lv.exp())
        })
        .sum();
    total / n.max(1) as f64
}

impl LatentCode {
    pub fn kld(&self) -> f64 {
        kld_loss(&self.mu, &self.log_var, 1)
    }
}
