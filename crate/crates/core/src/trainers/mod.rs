//! Training: behavior cloning, posterior pre-training, discriminator and PPO
//! updates, reward shaping, evaluation and the composed adversarial loop.

mod bc;
mod config;
mod disc;
mod eval;
mod features;
mod posterior;
mod ppo;
mod reward;
mod rollout;
mod train;

use diffcore::{Adam, Gradients, ParamSet};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::models::ModelError;
use crate::navenv::EnvError;

pub use bc::{bc_pretrain, BcEpoch, BcReport};
pub use config::TrainConfig;
pub use disc::{discriminator_update, dual_update, DiscBatch, DiscStats};
pub use eval::{
    evaluate, run_episodes, Decision, EvalReport, ExpertPolicy, NetworkPolicy, Policy, TraceStep, UniformPolicy,
};
pub use features::FeatureStore;
pub use posterior::{posterior_pretrain, sample_codes, PosteriorReport};
pub use ppo::{clipped_surrogate, ppo_update, PpoStats};
pub use reward::{compute_reward, RewardScheme, D_CLAMP};
pub use rollout::{gae, normalize, RolloutBuffer, Step};
pub use train::{train, CurvePoint, IterationStats, TrainInputs, TrainReport, MEETS_THRESHOLD, MEETS_WINDOW};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    EmptyData(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Core(#[from] diffcore::Error),
    #[error(transparent)]
    Env(#[from] EnvError),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Independent, reproducible random stream `stream` of a run seeded `seed`.
pub(crate) fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

pub(crate) fn sample_index(probs: &[f32], rng: &mut ChaCha8Rng) -> usize {
    WeightedIndex::new(probs).expect("probabilities are finite and not all zero").sample(rng)
}

/// Adds `grads`, rescales them to a global norm of at most `max_norm`, and
/// takes an optimizer step. Returns the pre-clip norm.
pub(crate) fn apply_gradients(
    ps: &mut ParamSet,
    opt: &mut Adam,
    grads: &Gradients<f32>,
    max_norm: Option<f64>,
) -> Result<f64> {
    let norm = grads.norm();
    ps.accumulate(grads);
    if let Some(max) = max_norm {
        if norm > max {
            let scale = (max / norm) as f32;
            let ids: Vec<_> = opt.ids().collect();
            for id in ids {
                if let Some(mut g) = ps.get_mut(id).take_grad() {
                    g.iter_mut().for_each(|x| *x *= scale);
                    ps.get_mut(id).set_grad(g)?;
                }
            }
        }
    }
    opt.step(ps)?;
    Ok(norm)
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
