use diffcore::{Adam, Tape};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{apply_gradients, FeatureStore, Result, TrainConfig, TrainError};
use crate::models::{Networks, Role, VDB_DIM};
use crate::navenv::View;

#[derive(Debug, Clone, Copy)]
pub struct DiscBatch<'a> {
    pub views: &'a [View],
    pub actions: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscStats {
    /// Total objective including the bottleneck penalty.
    pub loss: f64,
    /// `mean(-ln D(policy)) + mean(-ln(1 - D(expert)))`.
    pub bce: f64,
    /// Fraction classified correctly before the step.
    pub accuracy: f64,
    pub mean_d_policy: f64,
    pub mean_d_expert: f64,
    pub kl: Option<f64>,
    /// Multiplier after the dual update.
    pub beta: f64,
}

/// `beta <- max(0, beta + lr * (kl - ic))`.
pub fn dual_update(beta: f64, kl: f64, ic: f64, lr: f64) -> f64 {
    (beta + lr * (kl - ic)).max(0.0)
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n * VDB_DIM).map(|_| StandardNormal.sample(rng)).collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One gradient step pushing D toward 1 on policy pairs and toward 0 on
/// expert pairs, plus `beta (KL - Ic)` and the dual update when the
/// discriminator has a bottleneck.
#[allow(clippy::too_many_arguments)]
pub fn discriminator_update(
    nets: &mut Networks,
    opt: &mut Adam,
    store: &mut FeatureStore,
    policy: DiscBatch,
    expert: DiscBatch,
    beta: &mut f64,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<DiscStats> {
    if policy.views.is_empty() || expert.views.is_empty() {
        return Err(TrainError::EmptyData("discriminator update needs policy and expert pairs".into()));
    }
    let vdb = nets.disc.vdb.is_some();
    let (np, ne) = (policy.views.len(), expert.views.len());
    let (noise_p, noise_e) = if vdb { (Some(noise(rng, np)), Some(noise(rng, ne))) } else { (None, None) };
    let (grads, stats) = {
        let mut t = Tape::new(&nets.params);
        let fp = store.node(&mut t, nets, Role::Disc, policy.views)?;
        let fe = store.node(&mut t, nets, Role::Disc, expert.views)?;
        let op = nets.disc.forward(&mut t, fp, policy.actions, noise_p.as_deref())?;
        let oe = nets.disc.forward(&mut t, fe, expert.actions, noise_e.as_deref())?;
        let lp = t.sigmoid_cross_entropy(op.logits, &vec![1.0; np])?;
        let lp = t.mean(lp);
        let le = t.sigmoid_cross_entropy(oe.logits, &vec![0.0; ne])?;
        let le = t.mean(le);
        let bce = t.add(lp, le)?;
        let mut loss = bce;
        let mut kl_mean = None;
        if let (Some(kp), Some(ke)) = (op.kl, oe.kl) {
            let sp = t.sum(kp);
            let se = t.sum(ke);
            let s = t.add(sp, se)?;
            let kl = t.scale(s, 1.0 / (np + ne) as f32);
            kl_mean = Some(t.item(kl) as f64);
            let pen = t.add_scalar(kl, -(cfg.ic as f32));
            let pen = t.scale(pen, *beta as f32);
            loss = t.add(loss, pen)?;
        }
        let logits_p = t.value(op.logits);
        let logits_e = t.value(oe.logits);
        let correct = logits_p.iter().filter(|&&x| x > 0.0).count() + logits_e.iter().filter(|&&x| x < 0.0).count();
        let mean_d = |l: &[f32]| l.iter().map(|&x| sigmoid(x as f64)).sum::<f64>() / l.len() as f64;
        let stats = DiscStats {
            loss: t.item(loss) as f64,
            bce: t.item(bce) as f64,
            accuracy: correct as f64 / (np + ne) as f64,
            mean_d_policy: mean_d(logits_p),
            mean_d_expert: mean_d(logits_e),
            kl: kl_mean,
            beta: *beta,
        };
        (t.backward(loss)?, stats)
    };
    apply_gradients(&mut nets.params, opt, &grads, None)?;
    store.invalidate(Role::Disc);
    if let Some(kl) = stats.kl {
        *beta = dual_update(*beta, kl, cfg.ic, cfg.beta_lr);
    }
    Ok(DiscStats { beta: *beta, ..stats })
}
