use super::{Gradients, Model, TrainConfig};
use crate::error::{Result, SeqMixError};

/// Scheduled rate: η₀ · 2^(−⌊epoch/k⌋), floored.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    let halvings = if cfg.lr_halve_every == 0 { 0 } else { epoch / cfg.lr_halve_every };
    (cfg.lr * 0.5f64.powi(halvings as i32)).max(cfg.lr_floor)
}

/// Scale gradients so the global norm does not exceed `threshold`; direction
/// is preserved.
pub fn clip_global_norm(grads: &mut Gradients, threshold: f64) {
    let norm = grads.global_norm();
    if norm > threshold {
        grads.scale(threshold / norm);
    }
}

/// One SGD update: optional global-norm clip, then θ ← θ − η(epoch)·grad.
pub fn sgd_step(model: &mut Model, grads: &Gradients, cfg: &TrainConfig, epoch: usize) -> Result<()> {
    if !grads.is_finite() {
        return Err(SeqMixError::Numeric("non-finite gradient; step aborted".into()));
    }
    let mut grads = grads.clone();
    if let Some(threshold) = cfg.clip {
        clip_global_norm(&mut grads, threshold);
    }
    let eta = learning_rate(cfg, epoch);
    let g = grads.to_flat();
    let mut theta = model.to_flat();
    for (t, gv) in theta.iter_mut().zip(&g) {
        *t -= eta * gv;
    }
    model.set_flat(&theta);
    Ok(())
}
