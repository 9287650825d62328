use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{HarnessError, Result};
use crate::models::{Encoder, N_CODES};
use crate::navenv::{all_views, View};
use crate::trainers::{BcEpoch, CurvePoint, TraceStep};
use diffcore::ParamSet;

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).map_err(|e| HarnessError::Csv { path: path.to_path_buf(), source: e })
}

fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<()> {
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Learning curve as `step,score_mean,score_std,disc_acc,reward_mean`.
pub fn write_curve(path: &Path, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for p in curve {
        w.serialize(p).map_err(|e| HarnessError::Csv { path: path.to_path_buf(), source: e })?;
    }
    if curve.is_empty() {
        w.write_record(["step", "score_mean", "score_std", "disc_acc", "reward_mean"])
            .map_err(|e| HarnessError::Csv { path: path.to_path_buf(), source: e })?;
    }
    finish(path, w)
}

pub fn write_bc_epochs(path: &Path, epochs: &[BcEpoch]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    w.write_record(["epoch", "train_loss", "holdout_accuracy"]).map_err(err)?;
    for e in epochs {
        w.write_record([e.epoch.to_string(), e.train_loss.to_string(), e.holdout_accuracy.to_string()]).map_err(err)?;
    }
    finish(path, w)
}

/// Columns `epoch,loss,recon,kl`; epoch 0 is before training.
pub fn write_posterior_epochs(path: &Path, loss: &[f64], recon: &[f64], kl: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    w.write_record(["epoch", "loss", "recon", "kl"]).map_err(err)?;
    for (i, ((l, r), k)) in loss.iter().zip(recon).zip(kl).enumerate() {
        w.write_record([i.to_string(), l.to_string(), r.to_string(), k.to_string()]).map_err(err)?;
    }
    finish(path, w)
}

/// Samples `n` distinct reachable views, half without and half with the
/// key in hand (as far as each side allows). Returns `(state id, view)`
/// pairs where the id indexes [`all_views`].
pub fn sample_views(n: usize, seed: u64) -> Vec<(usize, View)> {
    let views = all_views();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut without, mut with): (Vec<usize>, Vec<usize>) = (0..views.len()).partition(|&i| views[i].key.is_some());
    without.shuffle(&mut rng);
    with.shuffle(&mut rng);
    let n = n.min(views.len());
    let a = n.div_ceil(2).min(without.len()).max(n.saturating_sub(with.len()));
    without.into_iter().take(a).chain(with.into_iter().take(n - a)).map(|i| (i, views[i])).collect()
}

pub const EMBEDDING_META: [&str; 5] = ["state_id", "has_key", "agent", "key", "car"];

/// One row per sampled view: metadata (cells as `row*7+col`, `-1` for a
/// held key) then the feature vector.
pub fn export_embeddings(path: &Path, encoder: &Encoder, ps: &ParamSet, n_states: usize, seed: u64) -> Result<usize> {
    let sample = sample_views(n_states, seed);
    let views: Vec<View> = sample.iter().map(|s| s.1).collect();
    let feats = encoder.encode(ps, &views)?;
    let dim = if views.is_empty() { 0 } else { feats.len() / views.len() };
    let mut w = csv_writer(path)?;
    let err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    let header: Vec<String> =
        EMBEDDING_META.iter().map(|s| s.to_string()).chain((0..dim).map(|i| format!("f{i}"))).collect();
    w.write_record(&header).map_err(err)?;
    for ((id, v), f) in sample.iter().zip(feats.chunks(dim.max(1))) {
        let mut row = vec![
            id.to_string(),
            (v.key.is_none() as u8).to_string(),
            v.agent.index().to_string(),
            v.key.map_or("-1".to_string(), |k| k.index().to_string()),
            v.car.index().to_string(),
        ];
        row.extend(f.iter().map(|x| x.to_string()));
        w.write_record(&row).map_err(err)?;
    }
    finish(path, w)?;
    Ok(sample.len())
}

/// Share of steps that used each code. Sums to 1 when any step has a code.
pub fn code_proportions(trace: &[TraceStep]) -> [f64; N_CODES] {
    let mut counts = [0usize; N_CODES];
    for c in trace.iter().filter_map(|s| s.code) {
        counts[c] += 1;
    }
    let total: usize = counts.iter().sum();
    counts.map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
}

/// `episode,timestep,code`, one row per step.
pub fn write_codes(path: &Path, trace: &[TraceStep]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    w.write_record(["episode", "timestep", "code"]).map_err(err)?;
    for s in trace {
        let code = s.code.map_or(String::new(), |c| c.to_string());
        w.write_record([s.episode.to_string(), s.t.to_string(), code]).map_err(err)?;
    }
    finish(path, w)
}

/// Positions, action and code of every step.
pub fn write_trajectories(path: &Path, trace: &[TraceStep]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| HarnessError::Csv { path: path.to_path_buf(), source: e };
    w.write_record([
        "episode",
        "timestep",
        "agent_row",
        "agent_col",
        "key_row",
        "key_col",
        "car_row",
        "car_col",
        "has_key",
        "action",
        "code",
    ])
    .map_err(err)?;
    for s in trace {
        w.write_record([
            s.episode.to_string(),
            s.t.to_string(),
            s.agent.row.to_string(),
            s.agent.col.to_string(),
            s.key.row.to_string(),
            s.key.col.to_string(),
            s.car.row.to_string(),
            s.car.col.to_string(),
            (s.has_key as u8).to_string(),
            format!("{:?}", s.action).to_lowercase(),
            s.code.map_or(String::new(), |c| c.to_string()),
        ])
        .map_err(err)?;
    }
    finish(path, w)
}
