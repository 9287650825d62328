use diffcore::{Adam, Tape};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{apply_gradients, FeatureStore, Result, RolloutBuffer, TrainConfig};
use crate::models::{Networks, Role};
use crate::navenv::{View, N_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean KL(old || new) over the buffer after the update.
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Clipped-surrogate epochs over shuffled minibatches of `buffer`.
/// `advantages` are already normalized; `returns` are the value targets.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update(
    nets: &mut Networks,
    opt: &mut Adam,
    store: &mut FeatureStore,
    buffer: &RolloutBuffer,
    advantages: &[f64],
    returns: &[f64],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats> {
    let n = buffer.len();
    let mut order: Vec<usize> = (0..n).collect();
    let (mut pl_sum, mut vl_sum, mut ent_sum, mut clipped, mut batches) = (0.0, 0.0, 0.0, 0usize, 0usize);
    let clip = cfg.ppo_clip as f32;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let m = idx.len();
            let views: Vec<View> = idx.iter().map(|&i| buffer.steps[i].view).collect();
            let actions: Vec<usize> = idx.iter().map(|&i| buffer.steps[i].action).collect();
            let codes: Option<Vec<usize>> = nets
                .layout
                .di
                .then(|| idx.iter().map(|&i| buffer.steps[i].code.expect("code-conditioned step")).collect());
            let old: Vec<f32> = idx.iter().map(|&i| buffer.steps[i].logp).collect();
            let adv: Vec<f32> = idx.iter().map(|&i| advantages[i] as f32).collect();
            let ret: Vec<f32> = idx.iter().map(|&i| returns[i] as f32).collect();
            let grads = {
                let mut t = Tape::new(&nets.params);
                let f = store.node(&mut t, nets, Role::Policy, &views)?;
                let logits = nets.actor.logits(&mut t, f, codes.as_deref())?;
                let lp = t.log_softmax(logits);
                let lpa = t.gather(lp, &actions)?;
                let old = t.constant([m], old)?;
                let diff = t.sub(lpa, old)?;
                let ratio = t.exp(diff);
                let a = t.constant([m], adv)?;
                let s1 = t.mul(ratio, a)?;
                let rc = t.clamp(ratio, 1.0 - clip, 1.0 + clip);
                let s2 = t.mul(rc, a)?;
                let surr = t.minimum(s1, s2)?;
                let surr = t.mean(surr);
                let policy_loss = t.scale(surr, -1.0);
                let p = t.softmax(logits);
                let plogp = t.mul(p, lp)?;
                let neg_ent = t.sum_last(plogp);
                let neg_ent = t.mean(neg_ent);
                let v = nets.critic.values(&mut t, f)?;
                let r = t.constant([m], ret)?;
                let dv = t.sub(v, r)?;
                let sq = t.square(dv);
                let value_loss = t.mean(sq);
                let vl = t.scale(value_loss, cfg.value_coef as f32);
                let el = t.scale(neg_ent, cfg.entropy_coef as f32);
                let loss = t.add(policy_loss, vl)?;
                let loss = t.add(loss, el)?;
                pl_sum += t.item(policy_loss) as f64;
                vl_sum += t.item(value_loss) as f64;
                ent_sum -= t.item(neg_ent) as f64;
                clipped += t.value(ratio).iter().filter(|&&r| (r - 1.0).abs() > clip).count();
                batches += 1;
                t.backward(loss)?
            };
            apply_gradients(&mut nets.params, opt, &grads, Some(cfg.max_grad_norm))?;
            store.invalidate(Role::Policy);
        }
    }
    let approx_kl = buffer_kl(nets, store, buffer)?;
    Ok(PpoStats {
        policy_loss: pl_sum / batches as f64,
        value_loss: vl_sum / batches as f64,
        entropy: ent_sum / batches as f64,
        approx_kl,
        clip_fraction: clipped as f64 / (n * cfg.ppo_epochs) as f64,
    })
}

/// Mean KL(behavior || current) over the buffer's states.
fn buffer_kl(nets: &Networks, store: &mut FeatureStore, buffer: &RolloutBuffer) -> Result<f64> {
    let views: Vec<View> = buffer.steps.iter().map(|s| s.view).collect();
    let feats = store.rows(nets, Role::Policy, &views)?;
    let codes: Option<Vec<usize>> = nets.layout.di.then(|| buffer.steps.iter().map(|s| s.code.unwrap()).collect());
    let probs = nets.actor.probs(&nets.params, &feats, codes.as_deref())?;
    let mut kl = 0.0;
    for (s, new) in buffer.steps.iter().zip(probs.chunks(N_ACTIONS)) {
        for (&p, &q) in s.probs.iter().zip(new) {
            if p > 0.0 {
                kl += p as f64 * ((p as f64).ln() - (q as f64).max(1e-30).ln());
            }
        }
    }
    Ok(kl / buffer.len() as f64)
}
