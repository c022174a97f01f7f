use crate::error::Result;

use super::params::ParameterStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global L2 clipping threshold; `0` disables clipping.
    pub clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: 5.0,
        }
    }
}

/// Adam with bias correction and global-norm gradient clipping.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: ParameterStore,
    second: ParameterStore,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParameterStore) -> Self {
        Self {
            config,
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update and returns the pre-clipping gradient norm.
    ///
    /// Fails with `NaNGradient` naming the first offending block, leaving
    /// parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &ParameterStore) -> Result<f64> {
        grads.ensure_finite()?;
        let norm = grads.l2_norm();
        let scale = if self.config.clip_norm > 0.0 && norm > self.config.clip_norm {
            self.config.clip_norm / norm
        } else {
            1.0
        };
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            ..
        } = self.config;
        let t = self.step as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        let blocks = params
            .blocks_mut()
            .into_iter()
            .zip(grads.blocks())
            .zip(self.first.blocks_mut())
            .zip(self.second.blocks_mut());
        for ((((_, p), (_, g)), (_, m)), (_, v)) in blocks {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / bias1;
                let v_hat = v[i] / bias2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(norm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::CaperError;
    use crate::numeric::{CellKind, Dims, ParamLayout};

    fn store(seed: u64) -> ParameterStore {
        ParameterStore::init(
            ParamLayout {
                dims: Dims {
                    d: 2,
                    users: 2,
                    companies: 2,
                    positions: 2,
                },
                cell: CellKind::Rnn,
                position_evolution: false,
            },
            seed,
        )
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = store(1);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let g = p.zeros_like();
        for _ in 0..5 {
            adam.step(&mut p, &g).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut p = store(1);
        let before = p.clone();
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.0,
                ..AdamConfig::default()
            },
            &p,
        );
        let g = store(2);
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_descends() {
        let mut p = store(1);
        let before = p.clone();
        let mut adam = Adam::new(AdamConfig::default(), &p);
        let mut g = p.zeros_like();
        g.pos_emb[[0, 0]] = 0.5;
        g.pos_emb[[1, 1]] = -2.0;
        for _ in 0..50 {
            adam.step(&mut p, &g).unwrap();
        }
        assert!(p.pos_emb[[0, 0]] < before.pos_emb[[0, 0]]);
        assert!(p.pos_emb[[1, 1]] > before.pos_emb[[1, 1]]);
    }

    #[test]
    fn single_step_matches_hand_formula() {
        // With zero moments, step 1: m = (1-b1) g, v = (1-b2) g^2,
        // m_hat = g, v_hat = g^2, update = lr * g / (|g| + eps).
        let mut p = store(1);
        let x0 = p.pos_emb[[0, 1]];
        let cfg = AdamConfig {
            lr: 0.01,
            clip_norm: 0.0,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &p);
        let mut g = p.zeros_like();
        g.pos_emb[[0, 1]] = 0.3;
        adam.step(&mut p, &g).unwrap();
        let expected = x0 - 0.01 * 0.3 / (0.3 + 1e-8);
        assert!((p.pos_emb[[0, 1]] - expected).abs() < 1e-15);

        // Second step with gradient -0.1, moments carried by hand.
        let m = 0.9 * (0.1 * 0.3) + 0.1 * -0.1;
        let v = 0.999 * (0.001 * 0.09) + 0.001 * 0.01;
        let m_hat = m / (1.0 - 0.9f64.powi(2));
        let v_hat = v / (1.0 - 0.999f64.powi(2));
        let expected2 = expected - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        g.pos_emb[[0, 1]] = -0.1;
        adam.step(&mut p, &g).unwrap();
        assert!((p.pos_emb[[0, 1]] - expected2).abs() < 1e-15);
    }

    #[test]
    fn clipping_scales_large_gradients() {
        let p0 = store(1);
        let mut clipped = p0.clone();
        let mut g = p0.zeros_like();
        g.user_init[[0, 0]] = 100.0;
        let mut adam = Adam::new(
            AdamConfig {
                clip_norm: 1.0,
                ..AdamConfig::default()
            },
            &p0,
        );
        let norm = adam.step(&mut clipped, &g).unwrap();
        assert_eq!(norm, 100.0);
        assert!(clipped.user_init[[0, 0]] < p0.user_init[[0, 0]]);
    }

    #[test]
    fn nan_gradient_names_the_block() {
        let mut p = store(1);
        let before = p.clone();
        let mut g = p.zeros_like();
        g.comp_grnn.mats[1][[0, 0]] = f64::NAN;
        let mut adam = Adam::new(AdamConfig::default(), &p);
        match adam.step(&mut p, &g) {
            Err(CaperError::NaNGradient { block }) => assert_eq!(block, "comp_grnn.W_2"),
            other => panic!("expected NaNGradient, got {other:?}"),
        }
        assert_eq!(p, before);
        assert_eq!(adam.steps_taken(), 0);
    }
}
