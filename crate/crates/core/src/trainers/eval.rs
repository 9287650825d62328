use rand::{Rng, RngCore};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{mean_std, rng_stream, sample_index, Result};
use crate::demogen::expert_action;
use crate::models::{FeatureCache, Networks, Role};
use crate::navenv::{self, Action, Cell, EnvState, N_ACTIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub action: Action,
    pub code: Option<usize>,
}

pub trait Policy {
    /// Called before the first step of each episode.
    fn begin_episode(&mut self) {}
    fn act(&mut self, state: &EnvState, rng: &mut ChaCha8Rng) -> Result<Decision>;
}

/// The shortest-path expert.
pub struct ExpertPolicy;

impl Policy for ExpertPolicy {
    fn act(&mut self, state: &EnvState, _rng: &mut ChaCha8Rng) -> Result<Decision> {
        Ok(Decision { action: expert_action(state).unwrap_or(Action::Up), code: None })
    }
}

pub struct UniformPolicy;

impl Policy for UniformPolicy {
    fn act(&mut self, _state: &EnvState, rng: &mut ChaCha8Rng) -> Result<Decision> {
        Ok(Decision { action: Action::ALL[rng.random_range(0..N_ACTIONS)], code: None })
    }
}

/// Samples from the trained actor. In code-conditioned runs the code is
/// drawn from the posterior each step, given the previous code.
pub struct NetworkPolicy<'a> {
    nets: &'a Networks,
    cache: &'a mut FeatureCache,
    prev_code: Option<usize>,
}

impl<'a> NetworkPolicy<'a> {
    /// `cache` must hold features of the current policy encoder, or be empty.
    pub fn new(nets: &'a Networks, cache: &'a mut FeatureCache) -> Self {
        NetworkPolicy { nets, cache, prev_code: None }
    }
}

impl Policy for NetworkPolicy<'_> {
    fn begin_episode(&mut self) {
        self.prev_code = None;
    }

    fn act(&mut self, state: &EnvState, rng: &mut ChaCha8Rng) -> Result<Decision> {
        let nets = self.nets;
        let f = self.cache.rows(nets.encoder(Role::Policy), &nets.params, &[state.view()])?;
        let code = match &nets.posterior {
            Some(post) => {
                let q = post.probs(&nets.params, &f, &[self.prev_code])?;
                let c = sample_index(&q, rng);
                self.prev_code = Some(c);
                Some(c)
            }
            None => None,
        };
        let codes = code.map(|c| [c]);
        let p = nets.actor.probs(&nets.params, &f, codes.as_ref().map(|c| &c[..]))?;
        Ok(Decision { action: Action::ALL[sample_index(&p, rng)], code })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    pub success_rate: f64,
    pub mean_length: f64,
}

/// One visited step of a traced evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceStep {
    pub episode: usize,
    pub t: u32,
    pub agent: Cell,
    pub key: Cell,
    pub car: Cell,
    pub has_key: bool,
    pub action: Action,
    pub code: Option<usize>,
}

/// Rolls `n_episodes` fresh episodes whose layouts and action samples are
/// determined by `seed`.
pub fn evaluate(policy: &mut dyn Policy, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    Ok(run_episodes(policy, n_episodes, seed, false)?.0)
}

pub fn run_episodes(
    policy: &mut dyn Policy,
    n_episodes: usize,
    seed: u64,
    trace: bool,
) -> Result<(EvalReport, Vec<TraceStep>)> {
    let mut layouts = rng_stream(seed, 0);
    let mut acting = rng_stream(seed, 1);
    let mut returns = Vec::with_capacity(n_episodes);
    let (mut successes, mut steps) = (0usize, 0u64);
    let mut out = Vec::new();
    for episode in 0..n_episodes {
        let mut s = navenv::reset(layouts.next_u64());
        policy.begin_episode();
        let mut ret = 0.0;
        loop {
            let d = policy.act(&s, &mut acting)?;
            if trace {
                out.push(TraceStep {
                    episode,
                    t: s.t,
                    agent: s.agent,
                    key: s.key,
                    car: s.car,
                    has_key: s.has_key,
                    action: d.action,
                    code: d.code,
                });
            }
            let tr = navenv::step(&s, d.action)?;
            ret += tr.reward;
            s = tr.state;
            if tr.done {
                break;
            }
        }
        successes += s.is_success() as usize;
        steps += s.t as u64;
        returns.push(ret);
    }
    let (mean, std) = mean_std(&returns);
    Ok((
        EvalReport {
            episodes: n_episodes,
            mean,
            std,
            success_rate: successes as f64 / n_episodes as f64,
            mean_length: steps as f64 / n_episodes as f64,
        },
        out,
    ))
}
