use serde::{Deserialize, Serialize};

use super::{RewardScheme, TrainError};
use crate::models::{EncoderMode, ModelLayout};

/// Every knob of a training run. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder: EncoderMode,
    pub vdb: bool,
    pub di: bool,
    pub reward: RewardScheme,

    pub gamma: f64,
    pub gae_lambda: f64,
    pub ppo_clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    /// Environment steps per iteration, summed over all workers.
    pub rollout_steps: usize,
    pub n_envs: usize,
    pub total_steps: u64,
    pub lr_policy: f64,

    pub lr_disc: f64,
    pub disc_epochs: usize,
    pub disc_minibatch: usize,
    /// Information constraint of the bottleneck.
    pub ic: f64,
    pub beta_lr: f64,
    pub beta_init: f64,

    /// Weight of the `log q(c_t | c_{t-1}, s_t)` bonus.
    pub di_bonus_weight: f64,

    pub bc_epochs: usize,
    pub bc_minibatch: usize,
    pub lr_bc: f64,
    pub bc_holdout: f64,

    pub posterior_epochs: usize,
    /// Demonstration episodes per posterior update.
    pub posterior_batch_episodes: usize,
    pub lr_posterior: f64,
    pub posterior_kl_weight: f64,
    pub gumbel_temperature: f64,

    /// Episodes per score-curve point.
    pub eval_episodes: usize,
    pub final_eval_episodes: usize,
    /// Iterations between score-curve points.
    pub eval_interval: usize,

    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            encoder: EncoderMode::LoadFix,
            vdb: false,
            di: false,
            reward: RewardScheme::LogShift,
            gamma: 0.99,
            gae_lambda: 0.95,
            ppo_clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            ppo_epochs: 4,
            minibatch: 256,
            rollout_steps: 2048,
            n_envs: 8,
            total_steps: 200_000,
            lr_policy: 3e-4,
            lr_disc: 1e-3,
            disc_epochs: 1,
            disc_minibatch: 256,
            ic: 0.5,
            beta_lr: 1e-5,
            beta_init: 0.1,
            di_bonus_weight: 0.01,
            bc_epochs: 10,
            bc_minibatch: 256,
            lr_bc: 1e-3,
            bc_holdout: 0.1,
            posterior_epochs: 10,
            posterior_batch_episodes: 32,
            lr_posterior: 1e-3,
            posterior_kl_weight: 0.1,
            gumbel_temperature: 1.0,
            eval_episodes: 20,
            final_eval_episodes: 200,
            eval_interval: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn layout(&self) -> ModelLayout {
        ModelLayout { encoder: self.encoder, vdb: self.vdb, di: self.di }
    }

    pub fn iterations(&self) -> usize {
        (self.total_steps as usize).div_ceil(self.rollout_steps)
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        let positive = [
            ("ppo_clip", self.ppo_clip),
            ("lr_policy", self.lr_policy),
            ("lr_disc", self.lr_disc),
            ("lr_bc", self.lr_bc),
            ("lr_posterior", self.lr_posterior),
            ("beta_lr", self.beta_lr),
            ("max_grad_norm", self.max_grad_norm),
            ("gumbel_temperature", self.gumbel_temperature),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("entropy_coef", self.entropy_coef),
            ("value_coef", self.value_coef),
            ("ic", self.ic),
            ("beta_init", self.beta_init),
            ("di_bonus_weight", self.di_bonus_weight),
            ("posterior_kl_weight", self.posterior_kl_weight),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("gae_lambda", self.gae_lambda)] {
            if !(v > 0.0 && v <= 1.0) {
                return bad(format!("{name} must lie in (0, 1], got {v}"));
            }
        }
        if !(self.bc_holdout >= 0.0 && self.bc_holdout < 1.0) {
            return bad(format!("bc_holdout must lie in [0, 1), got {}", self.bc_holdout));
        }
        let counts = [
            ("ppo_epochs", self.ppo_epochs),
            ("minibatch", self.minibatch),
            ("rollout_steps", self.rollout_steps),
            ("n_envs", self.n_envs),
            ("disc_epochs", self.disc_epochs),
            ("disc_minibatch", self.disc_minibatch),
            ("bc_epochs", self.bc_epochs),
            ("bc_minibatch", self.bc_minibatch),
            ("posterior_epochs", self.posterior_epochs),
            ("posterior_batch_episodes", self.posterior_batch_episodes),
            ("eval_episodes", self.eval_episodes),
            ("final_eval_episodes", self.final_eval_episodes),
            ("eval_interval", self.eval_interval),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.total_steps == 0 {
            return bad("total_steps must be at least 1".into());
        }
        if self.rollout_steps % self.n_envs != 0 {
            return bad(format!(
                "rollout_steps ({}) must be a multiple of n_envs ({})",
                self.rollout_steps, self.n_envs
            ));
        }
        if self.encoder == EncoderMode::RandomFixExcluded {
            return bad(
                "encoder strategy random_fix_excluded is not supported: a random, fixed encoder is skipped by design"
                    .into(),
            );
        }
        if self.di && !self.encoder.loads() {
            return bad("latent-code runs need a loaded behavior-cloned encoder (load_fix or load_train)".into());
        }
        Ok(())
    }
}
