use crate::navenv::{View, N_ACTIONS};

use super::{compute_reward, RewardScheme};

/// One environment step as seen by the learner.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub view: View,
    pub action: usize,
    pub code: Option<usize>,
    pub prev_code: Option<usize>,
    /// Behavior log-probability of `action`.
    pub logp: f32,
    /// Behavior distribution, kept for the KL diagnostic.
    pub probs: [f32; N_ACTIONS],
    pub value: f64,
    /// Discriminator output for (view, action).
    pub d: f64,
    /// `compute_reward(scheme, d)`.
    pub reward: f64,
    /// Latent-code bonus, zero outside code-conditioned runs.
    pub bonus: f64,
    /// Episode ended here, by success or by the step cap.
    pub done: bool,
}

/// Time-major steps of `n_envs` parallel workers.
#[derive(Debug, Clone, Default)]
pub struct RolloutBuffer {
    pub n_envs: usize,
    pub steps: Vec<Step>,
    /// Critic values of each worker's state after the last step.
    pub bootstrap: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_envs: usize) -> Self {
        RolloutBuffer { n_envs, steps: Vec::new(), bootstrap: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn horizon(&self) -> usize {
        self.steps.len() / self.n_envs
    }

    /// Sets `d` and the shaped reward of every step.
    pub fn assign_rewards(&mut self, scheme: RewardScheme, d: &[f32]) {
        for (s, &d) in self.steps.iter_mut().zip(d) {
            s.d = d as f64;
            s.reward = compute_reward(scheme, s.d);
        }
    }

    /// True when every stored reward is reproduced from its stored `d`.
    pub fn rewards_consistent(&self, scheme: RewardScheme) -> bool {
        self.steps.iter().all(|s| s.reward == compute_reward(scheme, s.d))
    }

    /// Unnormalized GAE advantages and the matching value targets.
    pub fn advantages(&self, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_envs;
        let mut adv = vec![0.0; self.steps.len()];
        for e in 0..n {
            let col: Vec<&Step> = self.steps.iter().skip(e).step_by(n).collect();
            let rewards: Vec<f64> = col.iter().map(|s| s.reward + s.bonus).collect();
            let values: Vec<f64> = col.iter().map(|s| s.value).collect();
            let dones: Vec<bool> = col.iter().map(|s| s.done).collect();
            let a = gae(&rewards, &values, &dones, self.bootstrap[e], gamma, lambda);
            for (t, v) in a.into_iter().enumerate() {
                adv[t * n + e] = v;
            }
        }
        let returns = adv.iter().zip(&self.steps).map(|(a, s)| a + s.value).collect();
        (adv, returns)
    }
}

/// GAE(λ) along one worker's steps. `bootstrap` is V of the state after the
/// last step; a `done` step does not bootstrap.
pub fn gae(rewards: &[f64], values: &[f64], dones: &[bool], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut next_value = bootstrap;
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        acc = delta + gamma * lambda * live * acc;
        out[t] = acc;
        next_value = values[t];
    }
    out
}

/// Rescales to mean 0 and standard deviation 1 (left centred if constant).
pub fn normalize(x: &mut [f64]) {
    if x.is_empty() {
        return;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for v in x.iter_mut() {
        *v -= mean;
        if std > 1e-8 {
            *v /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_transition() {
        let a = gae(&[0.7], &[0.2], &[false], 1.5, 1.0, 1.0);
        assert!((a[0] - (0.7 + 1.5 - 0.2)).abs() < 1e-12);
        let a = gae(&[0.7], &[0.2], &[true], 1.5, 1.0, 1.0);
        assert!((a[0] - (0.7 - 0.2)).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_and_values() {
        let a = gae(&[0.0; 10], &[0.0; 10], &[false; 10], 0.0, 0.99, 0.95);
        assert!(a.iter().all(|&x| x == 0.0));
    }

    /// Advantage as the λ-weighted sum of TD errors up to the episode end.
    fn oracle(r: &[f64], v: &[f64], d: &[bool], boot: f64, g: f64, l: f64) -> Vec<f64> {
        let n = r.len();
        let next_v = |t: usize| if t + 1 < n { v[t + 1] } else { boot };
        let delta: Vec<f64> = (0..n).map(|t| r[t] + if d[t] { 0.0 } else { g * next_v(t) } - v[t]).collect();
        (0..n)
            .map(|t| {
                let mut sum = 0.0;
                let mut w = 1.0;
                for k in t..n {
                    sum += w * delta[k];
                    if d[k] {
                        break;
                    }
                    w *= g * l;
                }
                sum
            })
            .collect()
    }

    #[test]
    fn matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r: Vec<f64> = (0..50).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<bool> = (0..50).map(|_| rng.random_bool(0.1)).collect();
            let boot = rng.random_range(-1.0..1.0);
            let got = gae(&r, &v, &d, boot, 0.99, 0.95);
            let want = oracle(&r, &v, &d, boot, 0.99, 0.95);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalized_moments() {
        let mut x: Vec<f64> = (0..100).map(|i| (i as f64).sin() * 3.0 + 1.0).collect();
        normalize(&mut x);
        let mean = x.iter().sum::<f64>() / 100.0;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-9);
    }
}
