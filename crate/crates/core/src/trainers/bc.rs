use std::collections::BTreeMap;

use diffcore::{Adam, AdamConfig, ParamId, Tape};
use rand::seq::SliceRandom;

use super::{apply_gradients, rng_stream, Result, TrainConfig, TrainError};
use crate::demogen::DemoDataset;
use crate::models::{BcModel, Encoder};
use crate::navenv::{View, N_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BcEpoch {
    pub epoch: usize,
    /// Mean minibatch loss during the epoch.
    pub train_loss: f64,
    pub holdout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    /// Full train-split cross-entropy before the first update.
    pub initial_loss: f64,
    /// Full train-split cross-entropy after the last update.
    pub final_loss: f64,
    pub epochs: Vec<BcEpoch>,
}

impl BcReport {
    pub fn final_holdout_accuracy(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.holdout_accuracy)
    }
}

/// Distinct (view, action) pairs with their multiplicities, in a fixed order.
fn tally(ds: &DemoDataset) -> Vec<(View, usize, usize)> {
    let mut m: BTreeMap<(usize, usize, usize, bool, usize), (View, usize, usize)> = BTreeMap::new();
    for r in ds.records() {
        let key = (r.agent.index(), r.key.index(), r.car.index(), r.has_key, r.action.index());
        m.entry(key).or_insert((r.view(), r.action.index(), 0)).2 += 1;
    }
    m.into_values().collect()
}

/// Count-weighted (mean cross-entropy, accuracy) over a dataset.
fn score(model: &BcModel, ds: &DemoDataset) -> Result<(f64, f64)> {
    let pairs = tally(ds);
    let views: Vec<View> = pairs.iter().map(|p| p.0).collect();
    let feats = model.encoder.encode(&model.params, &views)?;
    let probs = model.actor.probs(&model.params, &feats, None)?;
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    for ((_, a, n), p) in pairs.iter().zip(probs.chunks(N_ACTIONS)) {
        loss += *n as f64 * -(p[*a].max(1e-30) as f64).ln();
        let best = (0..N_ACTIONS).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        if best == *a {
            correct += n;
        }
        total += n;
    }
    Ok((loss / total as f64, correct as f64 / total as f64))
}

/// Trains encoder and action classifier by cross-entropy on expert pairs,
/// holding out `cfg.bc_holdout` of the episodes. With no held-out episode
/// the accuracy is measured on the training split.
pub fn bc_pretrain(
    demos: &DemoDataset,
    cfg: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&BcEpoch),
) -> Result<(BcModel, BcReport)> {
    if demos.is_empty() {
        return Err(TrainError::EmptyData("behavior cloning needs at least one demonstration".into()));
    }
    let (train, holdout) = demos.split_episodes(1.0 - cfg.bc_holdout, seed);
    let holdout = if holdout.is_empty() { train.clone() } else { holdout };
    let mut model = BcModel::new(seed)?;
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut opt = Adam::new(AdamConfig::with_lr(cfg.lr_bc), &model.params, ids);
    let mut rng = rng_stream(seed, 7);
    let initial_loss = score(&model, &train)?.0;
    let records = train.records();
    let mut order: Vec<usize> = (0..records.len()).collect();
    let mut epochs = Vec::with_capacity(cfg.bc_epochs);
    for epoch in 0..cfg.bc_epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut batches) = (0.0, 0usize);
        for idx in order.chunks(cfg.bc_minibatch) {
            let views: Vec<View> = idx.iter().map(|&i| records[i].view()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| records[i].action.index()).collect();
            let grads = {
                let mut t = Tape::new(&model.params);
                let x = Encoder::input(&mut t, &views)?;
                let f = model.encoder.forward(&mut t, x)?;
                let l = model.actor.logits(&mut t, f, None)?;
                let ce = t.softmax_cross_entropy(l, &labels)?;
                let loss = t.mean(ce);
                sum += t.item(loss) as f64;
                batches += 1;
                t.backward(loss)?
            };
            apply_gradients(&mut model.params, &mut opt, &grads, None)?;
        }
        let e = BcEpoch { epoch, train_loss: sum / batches as f64, holdout_accuracy: score(&model, &holdout)?.1 };
        on_epoch(&e);
        epochs.push(e);
    }
    let final_loss = score(&model, &train)?.0;
    Ok((model, BcReport { train_pairs: train.len(), holdout_pairs: holdout.len(), initial_loss, final_loss, epochs }))
}
