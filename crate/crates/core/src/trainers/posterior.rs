use diffcore::{Adam, AdamConfig, ParamId, Tape, Var};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel};

use super::{apply_gradients, rng_stream, sample_index, Result, TrainConfig, TrainError};
use crate::demogen::{DemoDataset, DemoRecord};
use crate::models::{one_hot, FeatureCache, Posterior, PosteriorModel, FEATURE_DIM, N_CODES};

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorReport {
    /// Objective over the whole dataset with fixed relaxation noise; entry 0
    /// is before training, entry `k` after epoch `k`.
    pub epoch_loss: Vec<f64>,
    /// Mean `-ln pi(a | s, c)` part of `epoch_loss`.
    pub epoch_recon: Vec<f64>,
    /// Mean `KL(q || uniform)` part of `epoch_loss`.
    pub epoch_kl: Vec<f64>,
}

struct BatchLoss {
    total: Var,
    recon: f64,
    kl: f64,
    rows: usize,
}

fn feature_rows(features: &FeatureCache, recs: &[&DemoRecord]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(recs.len() * FEATURE_DIM);
    for r in recs {
        let f = features.get(&r.view()).ok_or_else(|| {
            TrainError::EmptyData("posterior pre-training needs encoder features for every demonstrated state".into())
        })?;
        out.extend_from_slice(f);
    }
    Ok(out)
}

/// Unrolls a batch of episodes step by step. At each step the code is a
/// straight-through Gumbel-softmax sample from q given the previous hard
/// code (treated as a constant).
fn unroll(
    t: &mut Tape,
    model: &PosteriorModel,
    episodes: &[&[DemoRecord]],
    features: &FeatureCache,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let gumbel = Gumbel::new(0.0f32, 1.0).expect("unit scale");
    let horizon = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
    let mut prev: Vec<Option<usize>> = vec![None; episodes.len()];
    let mut recon_sum: Option<Var> = None;
    let mut kl_sum: Option<Var> = None;
    let mut rows = 0;
    let ln_k = (N_CODES as f32).ln();
    for step in 0..horizon {
        let active: Vec<usize> = (0..episodes.len()).filter(|&e| episodes[e].len() > step).collect();
        let recs: Vec<&DemoRecord> = active.iter().map(|&e| &episodes[e][step]).collect();
        let m = recs.len();
        let f = t.constant([m, FEATURE_DIM], feature_rows(features, &recs)?)?;
        let prev_m: Vec<Option<usize>> = active.iter().map(|&e| prev[e]).collect();
        let logits = model.posterior.logits(t, f, &prev_m)?;
        let g = t.constant([m, N_CODES], (0..m * N_CODES).map(|_| gumbel.sample(rng)).collect())?;
        let noisy = t.add(logits, g)?;
        let noisy = t.scale(noisy, 1.0 / cfg.gumbel_temperature as f32);
        let y = t.softmax(noisy);
        let hard: Vec<usize> =
            t.value(y).chunks(N_CODES).map(|r| (0..N_CODES).fold(0, |b, i| if r[i] > r[b] { i } else { b })).collect();
        let y_const = t.detach(y);
        let delta = t.sub(y, y_const)?;
        let hard_node = t.constant([m, N_CODES], one_hot(&hard, N_CODES))?;
        let code = t.add(delta, hard_node)?;
        let al = model.actor.logits_with_code_node(t, f, code)?;
        let actions: Vec<usize> = recs.iter().map(|r| r.action.index()).collect();
        let ce = t.softmax_cross_entropy(al, &actions)?;
        let ce = t.sum(ce);
        let q = t.softmax(logits);
        let lq = t.log_softmax(logits);
        let qlq = t.mul(q, lq)?;
        let kl = t.sum_last(qlq);
        let kl = t.add_scalar(kl, ln_k);
        let kl = t.sum(kl);
        recon_sum = Some(match recon_sum {
            None => ce,
            Some(s) => t.add(s, ce)?,
        });
        kl_sum = Some(match kl_sum {
            None => kl,
            Some(s) => t.add(s, kl)?,
        });
        for (&e, &c) in active.iter().zip(&hard) {
            prev[e] = Some(c);
        }
        rows += m;
    }
    let (recon, kl) = match (recon_sum, kl_sum) {
        (Some(r), Some(k)) => (r, k),
        _ => return Err(TrainError::EmptyData("no demonstration steps in batch".into())),
    };
    let weighted = t.scale(kl, cfg.posterior_kl_weight as f32);
    let total = t.add(recon, weighted)?;
    let total = t.scale(total, 1.0 / rows as f32);
    Ok(BatchLoss { total, recon: t.item(recon) as f64, kl: t.item(kl) as f64, rows })
}

/// Whole-dataset objective with noise fixed by `seed`.
fn evaluate_loss(
    model: &PosteriorModel,
    episodes: &[&[DemoRecord]],
    features: &FeatureCache,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(f64, f64, f64)> {
    let mut rng = rng_stream(seed, 11);
    let (mut recon, mut kl, mut rows) = (0.0, 0.0, 0usize);
    for chunk in episodes.chunks(cfg.posterior_batch_episodes) {
        let mut t = Tape::new(&model.params);
        let b = unroll(&mut t, model, chunk, features, cfg, &mut rng)?;
        recon += b.recon;
        kl += b.kl;
        rows += b.rows;
    }
    let (recon, kl) = (recon / rows as f64, kl / rows as f64);
    Ok((recon + cfg.posterior_kl_weight * kl, recon, kl))
}

/// Fits the code posterior and a code-conditioned actor on demonstrations,
/// reading states through a frozen encoder's feature table.
pub fn posterior_pretrain(
    demos: &DemoDataset,
    features: &FeatureCache,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(PosteriorModel, PosteriorReport)> {
    if demos.is_empty() {
        return Err(TrainError::EmptyData("posterior pre-training needs demonstrations".into()));
    }
    if features.is_empty() {
        return Err(TrainError::EmptyData("posterior pre-training needs a behavior-cloned encoder".into()));
    }
    let mut model = PosteriorModel::new(seed)?;
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr_posterior), &model.params, ids);
    let episodes: Vec<&[DemoRecord]> = demos.episodes().collect();
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut rng = rng_stream(seed, 12);
    let mut report = PosteriorReport { epoch_loss: Vec::new(), epoch_recon: Vec::new(), epoch_kl: Vec::new() };
    let record = |model: &PosteriorModel, report: &mut PosteriorReport| -> Result<f64> {
        let (loss, recon, kl) = evaluate_loss(model, &episodes, features, cfg, seed)?;
        report.epoch_loss.push(loss);
        report.epoch_recon.push(recon);
        report.epoch_kl.push(kl);
        Ok(loss)
    };
    record(&model, &mut report)?;
    for epoch in 0..cfg.posterior_epochs {
        order.shuffle(&mut rng);
        for idx in order.chunks(cfg.posterior_batch_episodes) {
            let batch: Vec<&[DemoRecord]> = idx.iter().map(|&i| episodes[i]).collect();
            let grads = {
                let mut t = Tape::new(&model.params);
                let b = unroll(&mut t, &model, &batch, features, cfg, &mut rng)?;
                t.backward(b.total)?
            };
            apply_gradients(&mut model.params, &mut opt, &grads, None)?;
        }
        let loss = record(&model, &mut report)?;
        on_epoch(epoch, loss);
    }
    Ok((model, report))
}

/// Codes sampled along one demonstrated episode.
pub fn sample_codes(
    posterior: &Posterior,
    ps: &diffcore::ParamSet,
    features: &FeatureCache,
    episode: &[DemoRecord],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>> {
    let mut prev = None;
    let mut out = Vec::with_capacity(episode.len());
    for r in episode {
        let f = feature_rows(features, &[r])?;
        let q = posterior.probs(ps, &f, &[prev])?;
        let c = sample_index(&q, rng);
        out.push(c);
        prev = Some(c);
    }
    Ok(out)
}
