//! Adam with bias correction, global-norm gradient clipping, and the cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::scalar::Scalar;
use super::weights::ModelWeights;
use super::ModelConfig;

pub const DEFAULT_LR0: f64 = 1e-3;
pub const DEFAULT_LR_MIN: f64 = 1e-4;
pub const DEFAULT_EPOCHS: usize = 1000;

/// Adam hyperparameters (conventional defaults).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates per weight tensor plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar> {
    pub m: ModelWeights<T>,
    pub v: ModelWeights<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelWeights::zeros(config),
            v: ModelWeights::zeros(config),
            step: 0,
        }
    }

    /// One optimizer step: w ← w − lr · m̂ / (√v̂ + ε).
    pub fn step(
        &mut self,
        weights: &mut ModelWeights<T>,
        grads: &ModelWeights<T>,
        cfg: &AdamConfig,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let b1 = T::from_f64(cfg.beta1);
        let b2 = T::from_f64(cfg.beta2);
        let one_m_b1 = T::from_f64(1.0 - cfg.beta1);
        let one_m_b2 = T::from_f64(1.0 - cfg.beta2);
        let corr1 = T::from_f64(1.0 / (1.0 - cfg.beta1.powi(t)));
        let corr2 = T::from_f64(1.0 / (1.0 - cfg.beta2.powi(t)));
        let eps = T::from_f64(cfg.eps);
        let lr_t = T::from_f64(lr);
        weights.zip_adam(grads, &mut self.m, &mut self.v, |w, g, m, v| {
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            let m_hat = *m * corr1;
            let v_hat = *v * corr2;
            *w = *w - lr_t * m_hat / (v_hat.sqrt() + eps);
        });
    }
}

/// Rescale gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm<T: Scalar>(grads: &mut ModelWeights<T>, max_norm: f64) -> f64 {
    let norm = grads.sq_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grads.scale(T::from_f64(max_norm / norm));
    }
    norm
}

/// Cosine decay from `lr0` at epoch 0 to `lr_min` at epoch `total`;
/// endpoints are exact by construction.
pub fn cosine_lr(epoch: usize, total: usize, lr0: f64, lr_min: f64) -> f64 {
    if epoch == 0 || total == 0 {
        return lr0;
    }
    if epoch >= total {
        return lr_min;
    }
    let progress = epoch as f64 / total as f64;
    lr_min + 0.5 * (lr0 - lr_min) * (1.0 + (std::f64::consts::PI * progress).cos())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            seq_len: 4,
            in_channels: 2,
            d_model: 4,
            n_heads: 2,
            n_layers: 1,
            ffn_dim: 4,
            embed_hidden: 4,
            dropout: 0.0,
            out_params: 3,
        }
    }

    #[test]
    fn schedule_endpoints_are_exact() {
        assert_eq!(cosine_lr(0, DEFAULT_EPOCHS, DEFAULT_LR0, DEFAULT_LR_MIN), 1e-3);
        assert_eq!(cosine_lr(1000, DEFAULT_EPOCHS, DEFAULT_LR0, DEFAULT_LR_MIN), 1e-4);
        assert_eq!(cosine_lr(1500, DEFAULT_EPOCHS, DEFAULT_LR0, DEFAULT_LR_MIN), 1e-4);
    }

    #[test]
    fn schedule_midpoint() {
        // 1e-4 + 0.5·9e-4·(1 + cos(π/2)) = 5.5e-4
        assert_abs_diff_eq!(
            cosine_lr(500, 1000, 1e-3, 1e-4),
            5.5e-4,
            epsilon = 1e-18
        );
    }

    #[test]
    fn schedule_is_monotone_decreasing() {
        let mut prev = f64::INFINITY;
        for e in 0..=1000 {
            let lr = cosine_lr(e, 1000, 1e-3, 1e-4);
            assert!(lr <= prev);
            assert!((1e-4..=1e-3).contains(&lr));
            prev = lr;
        }
    }

    #[test]
    fn clip_rescales_norm_exactly() {
        let cfg = tiny_config();
        let mut g = ModelWeights::<f64>::zeros(&cfg);
        // put known values in one tensor: norm 5
        g.embed_w1 = Array2::from_shape_vec((2, 4), vec![3.0, 4.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            .unwrap();
        let pre = clip_global_norm(&mut g, 1.0);
        assert_abs_diff_eq!(pre, 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g.embed_w1[[0, 0]], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(g.embed_w1[[0, 1]], 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(g.sq_norm().sqrt(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let cfg = tiny_config();
        let mut g = ModelWeights::<f64>::zeros(&cfg);
        g.embed_b1[0] = 0.25;
        clip_global_norm(&mut g, 1.0);
        assert_eq!(g.embed_b1[0], 0.25);
    }

    #[test]
    fn adam_first_step_moves_by_lr_against_gradient_sign() {
        let cfg = tiny_config();
        let mut w = ModelWeights::<f64>::zeros(&cfg);
        let mut g = ModelWeights::<f64>::zeros(&cfg);
        g.embed_b1[0] = 0.5;
        g.embed_b1[1] = -2.0;
        let mut state = AdamState::new(&cfg);
        state.step(&mut w, &g, &AdamConfig::default(), 1e-3);
        // with bias correction, the first update is ≈ lr·sign(g)
        assert_abs_diff_eq!(w.embed_b1[0], -1e-3, epsilon = 1e-7);
        assert_abs_diff_eq!(w.embed_b1[1], 1e-3, epsilon = 1e-7);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradients_do_not_move_weights() {
        let cfg = tiny_config();
        let mut w = ModelWeights::<f64>::zeros(&cfg);
        w.embed_b1[0] = 0.7;
        let g = ModelWeights::zeros(&cfg);
        let mut state = AdamState::new(&cfg);
        state.step(&mut w, &g, &AdamConfig::default(), 1e-3);
        assert_eq!(w.embed_b1[0], 0.7);
    }
}
