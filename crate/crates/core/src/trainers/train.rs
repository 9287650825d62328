use std::path::Path;
use std::time::Instant;

use diffcore::{Adam, AdamConfig};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    discriminator_update, evaluate, normalize, ppo_update, rng_stream, sample_index, DiscBatch, DiscStats, EvalReport,
    FeatureStore, NetworkPolicy, PpoStats, Result, RolloutBuffer, Step, TrainConfig, TrainError,
};
use crate::demogen::DemoDataset;
use crate::metrics::{after_meets, meets_threshold};
use crate::models::{Networks, Role, N_CODES};
use crate::navenv::{self, Action, EnvState, View, N_ACTIONS};

/// Score threshold and rolling window of the "learned enough" statistic.
pub const MEETS_THRESHOLD: f64 = -10.0;
pub const MEETS_WINDOW: usize = 10;

pub struct TrainInputs<'a> {
    pub demos: &'a DemoDataset,
    /// Behavior-cloned encoder, required by the load strategies.
    pub encoder: Option<&'a Path>,
    /// Pre-trained posterior, required by code-conditioned runs.
    pub posterior: Option<&'a Path>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    /// Environment steps collected so far.
    pub step: u64,
    pub score_mean: f64,
    pub score_std: f64,
    /// Mean discriminator accuracy over this iteration's updates.
    pub disc_acc: f64,
    /// Mean shaped reward of this iteration's rollout.
    pub reward_mean: f64,
}

/// Diagnostics handed to the progress callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    pub iteration: usize,
    pub disc: DiscStats,
    pub ppo: PpoStats,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    pub final_eval: EvalReport,
    pub best_score: f64,
    pub meets_step: Option<u64>,
    /// Mean and std of curve scores after the threshold was met.
    pub after_meets: Option<(f64, f64)>,
    pub encoder_hash_start: String,
    pub encoder_hash_end: String,
    pub env_steps: u64,
    pub wall_clock_secs: f64,
}

impl TrainReport {
    pub fn scores(&self) -> Vec<(u64, f64)> {
        self.curve.iter().map(|p| (p.step, p.score_mean)).collect()
    }
}

fn encoder_hash(nets: &Networks) -> String {
    format!("{:x}", Sha256::digest(nets.params.group_bytes(&nets.policy_encoder.group)))
}

struct Workers {
    states: Vec<EnvState>,
    prev_codes: Vec<Option<usize>>,
    resets: ChaCha8Rng,
}

impl Workers {
    fn new(n: usize, mut resets: ChaCha8Rng) -> Self {
        Workers {
            states: (0..n).map(|_| navenv::reset(resets.next_u64())).collect(),
            prev_codes: vec![None; n],
            resets,
        }
    }
}

fn collect(
    nets: &Networks,
    store: &mut FeatureStore,
    cfg: &TrainConfig,
    workers: &mut Workers,
    rng: &mut ChaCha8Rng,
) -> Result<RolloutBuffer> {
    let n = workers.states.len();
    let mut buf = RolloutBuffer::new(n);
    buf.steps.reserve(cfg.rollout_steps);
    for _ in 0..cfg.rollout_steps / n {
        let views: Vec<View> = workers.states.iter().map(|s| s.view()).collect();
        let feats = store.rows(nets, Role::Policy, &views)?;
        let (codes, q) = match &nets.posterior {
            Some(post) => {
                let q = post.probs(&nets.params, &feats, &workers.prev_codes)?;
                let codes: Vec<usize> = q.chunks(N_CODES).map(|row| sample_index(row, rng)).collect();
                (Some(codes), q)
            }
            None => (None, Vec::new()),
        };
        let probs = nets.actor.probs(&nets.params, &feats, codes.as_deref())?;
        let values = nets.critic.predict(&nets.params, &feats)?;
        for e in 0..n {
            let p: [f32; N_ACTIONS] = probs[e * N_ACTIONS..(e + 1) * N_ACTIONS].try_into().unwrap();
            let a = sample_index(&p, rng);
            let code = codes.as_ref().map(|c| c[e]);
            let bonus = match code {
                Some(c) => cfg.di_bonus_weight * (q[e * N_CODES + c].max(1e-30) as f64).ln(),
                None => 0.0,
            };
            let tr = navenv::step(&workers.states[e], Action::ALL[a])?;
            buf.steps.push(Step {
                view: views[e],
                action: a,
                code,
                prev_code: workers.prev_codes[e],
                logp: p[a].max(1e-30).ln(),
                probs: p,
                value: values[e] as f64,
                d: 0.0,
                reward: 0.0,
                bonus,
                done: tr.done,
            });
            if tr.done {
                workers.states[e] = navenv::reset(workers.resets.next_u64());
                workers.prev_codes[e] = None;
            } else {
                workers.states[e] = tr.state;
                workers.prev_codes[e] = code;
            }
        }
    }
    let views: Vec<View> = workers.states.iter().map(|s| s.view()).collect();
    let feats = store.rows(nets, Role::Policy, &views)?;
    buf.bootstrap = nets.critic.predict(&nets.params, &feats)?.into_iter().map(f64::from).collect();
    Ok(buf)
}

/// The adversarial loop: collect a rollout, score it with the current
/// discriminator, update the discriminator, then the policy by PPO, and
/// evaluate. Returns the report and the final networks.
pub fn train(
    cfg: &TrainConfig,
    inputs: &TrainInputs,
    mut observe: impl FnMut(&CurvePoint, &IterationStats),
) -> Result<(TrainReport, Networks)> {
    cfg.validate()?;
    if inputs.demos.is_empty() {
        return Err(TrainError::EmptyData("adversarial training needs demonstrations".into()));
    }
    let started = Instant::now();
    let mut init = rng_stream(cfg.seed, 0);
    let mut nets = Networks::build(cfg.layout(), init.next_u64(), inputs.encoder, inputs.posterior)?;
    let eval_seed = init.next_u64();
    let final_seed = init.next_u64();
    let encoder_hash_start = encoder_hash(&nets);
    let mut store = FeatureStore::new(&nets)?;
    let mut policy_opt = Adam::new(AdamConfig::with_lr(cfg.lr_policy), &nets.params, nets.policy_ids());
    let mut disc_opt = Adam::new(AdamConfig::with_lr(cfg.lr_disc), &nets.params, nets.disc_ids());
    let mut workers = Workers::new(cfg.n_envs, rng_stream(cfg.seed, 1));
    let mut act_rng = rng_stream(cfg.seed, 2);
    let mut shuffle_rng = rng_stream(cfg.seed, 3);
    let mut expert_rng = rng_stream(cfg.seed, 4);
    let mut noise_rng = rng_stream(cfg.seed, 5);
    let expert: Vec<(View, usize)> = inputs.demos.records().iter().map(|r| (r.view(), r.action.index())).collect();
    let mut beta = cfg.beta_init;
    let mut curve = Vec::new();
    let iterations = cfg.iterations();
    for it in 0..iterations {
        let mut buf = collect(&nets, &mut store, cfg, &mut workers, &mut act_rng)?;
        let views: Vec<View> = buf.steps.iter().map(|s| s.view).collect();
        let actions: Vec<usize> = buf.steps.iter().map(|s| s.action).collect();
        let dfeats = store.rows(&nets, Role::Disc, &views)?;
        let (d, _) = nets.disc.probs(&nets.params, &dfeats, &actions)?;
        buf.assign_rewards(cfg.reward, &d);
        let reward_mean = buf.steps.iter().map(|s| s.reward).sum::<f64>() / buf.len() as f64;

        let mut order: Vec<usize> = (0..buf.len()).collect();
        let (mut acc_sum, mut updates) = (0.0, 0usize);
        let mut last_disc = None;
        for _ in 0..cfg.disc_epochs {
            order.shuffle(&mut shuffle_rng);
            for idx in order.chunks(cfg.disc_minibatch) {
                let pv: Vec<View> = idx.iter().map(|&i| views[i]).collect();
                let pa: Vec<usize> = idx.iter().map(|&i| actions[i]).collect();
                let picks: Vec<(View, usize)> =
                    (0..idx.len()).map(|_| expert[expert_rng.random_range(0..expert.len())]).collect();
                let ev: Vec<View> = picks.iter().map(|p| p.0).collect();
                let ea: Vec<usize> = picks.iter().map(|p| p.1).collect();
                let stats = discriminator_update(
                    &mut nets,
                    &mut disc_opt,
                    &mut store,
                    DiscBatch { views: &pv, actions: &pa },
                    DiscBatch { views: &ev, actions: &ea },
                    &mut beta,
                    cfg,
                    &mut noise_rng,
                )?;
                acc_sum += stats.accuracy;
                updates += 1;
                last_disc = Some(stats);
            }
        }

        let (mut adv, returns) = buf.advantages(cfg.gamma, cfg.gae_lambda);
        normalize(&mut adv);
        let ppo = ppo_update(&mut nets, &mut policy_opt, &mut store, &buf, &adv, &returns, cfg, &mut shuffle_rng)?;

        if (it + 1) % cfg.eval_interval == 0 || it + 1 == iterations {
            let mut policy = NetworkPolicy::new(&nets, store.cache_mut(Role::Policy));
            let ev = evaluate(&mut policy, cfg.eval_episodes, eval_seed)?;
            let point = CurvePoint {
                step: ((it + 1) * cfg.rollout_steps) as u64,
                score_mean: ev.mean,
                score_std: ev.std,
                disc_acc: acc_sum / updates as f64,
                reward_mean,
            };
            observe(
                &point,
                &IterationStats {
                    iteration: it,
                    disc: last_disc.expect("at least one discriminator update"),
                    ppo,
                    success_rate: ev.success_rate,
                },
            );
            curve.push(point);
        }
    }
    let mut policy = NetworkPolicy::new(&nets, store.cache_mut(Role::Policy));
    let final_eval = evaluate(&mut policy, cfg.final_eval_episodes, final_seed)?;
    let scores: Vec<(u64, f64)> = curve.iter().map(|p| (p.step, p.score_mean)).collect();
    let report = TrainReport {
        best_score: scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
        meets_step: meets_threshold(&scores, MEETS_THRESHOLD, MEETS_WINDOW).ok().flatten(),
        after_meets: after_meets(&scores, MEETS_THRESHOLD, MEETS_WINDOW),
        curve,
        final_eval,
        encoder_hash_start,
        encoder_hash_end: encoder_hash(&nets),
        env_steps: (iterations * cfg.rollout_steps) as u64,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    Ok((report, nets))
}
