//! Networks: global encoder, actor, critic, discriminator (optionally with a
//! variational bottleneck) and the latent-code posterior.
//!
//! Every network lives in one [`ParamSet`]. Sharing the global encoder means
//! handing the same [`Encoder`] (the same parameter ids) to each consumer, so
//! there is exactly one copy of its weights.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use diffcore::{load_params, save_params, ParamId, ParamSet, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::navenv::{render_view_into, View, N_ACTIONS, OBS_CHANNELS, OBS_LEN, OBS_SIDE};

pub const FEATURE_DIM: usize = 128;
pub const N_CODES: usize = 4;
pub const VDB_DIM: usize = 32;
pub const HIDDEN: usize = 64;
/// Distance kept between D and the ends of the unit interval.
pub const D_EPS: f32 = 1e-7;
const CONV1: usize = 16;
const CONV2: usize = 32;
const FLAT: usize = CONV2 * (OBS_SIDE / 4) * (OBS_SIDE / 4);
/// Rows per encoder batch when encoding many views without gradients.
const ENCODE_CHUNK: usize = 256;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing {what} checkpoint at {}", path.display())]
    MissingCheckpoint { what: &'static str, path: PathBuf },
    #[error("checkpoint {}: {message}", path.display())]
    Mismatch { path: PathBuf, message: String },
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] diffcore::Error),
}

pub type Result<T, E = ModelError> = std::result::Result<T, E>;

/// Where the global encoder comes from and whether it trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// No global encoder: policy and discriminator own separate encoders.
    None,
    LoadFix,
    LoadTrain,
    /// Random initialization kept fixed. Named so configs can say it, but
    /// rejected by validation.
    RandomFixExcluded,
    RandomTrain,
}

impl EncoderMode {
    pub fn is_global(self) -> bool {
        self != EncoderMode::None
    }

    pub fn loads(self) -> bool {
        matches!(self, EncoderMode::LoadFix | EncoderMode::LoadTrain)
    }

    pub fn is_frozen(self) -> bool {
        matches!(self, EncoderMode::LoadFix | EncoderMode::RandomFixExcluded)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLayout {
    pub encoder: EncoderMode,
    pub vdb: bool,
    pub di: bool,
}

#[derive(Debug, Clone, Copy)]
enum Init {
    Xavier,
    Zero,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-bound..bound) as f32).collect()
}

/// Affine layer `x W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    fn add(
        ps: &mut ParamSet,
        name: &str,
        group: &str,
        i: usize,
        o: usize,
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let w = match init {
            Init::Xavier => uniform(rng, i * o, (6.0 / (i + o) as f64).sqrt()),
            Init::Zero => vec![0.0; i * o],
        };
        Ok(Dense {
            w: ps.add(format!("{name}.weight"), group, Tensor::new([i, o], w)?)?,
            b: ps.add(format!("{name}.bias"), group, Tensor::zeros([o]))?,
        })
    }

    pub fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let (w, b) = (t.param(self.w), t.param(self.b));
        Ok(t.linear(x, w, Some(b))?)
    }

    pub fn ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    k: ParamId,
    b: ParamId,
}

impl Conv {
    fn add(ps: &mut ParamSet, name: &str, group: &str, c: usize, o: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        let k = uniform(rng, o * c * 9, (6.0 / (c * 9) as f64).sqrt());
        Ok(Conv {
            k: ps.add(format!("{name}.weight"), group, Tensor::new([o, c, 3, 3], k)?)?,
            b: ps.add(format!("{name}.bias"), group, Tensor::zeros([o]))?,
        })
    }

    fn forward(&self, t: &mut Tape, x: Var) -> Result<Var> {
        let (k, b) = (t.param(self.k), t.param(self.b));
        Ok(t.conv2d(x, k, Some(b), 2)?)
    }
}

/// conv(4→16, s2) relu, conv(16→32, s2) relu, dense(2048→128) relu.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub group: String,
    conv1: Conv,
    conv2: Conv,
    dense: Dense,
}

impl Encoder {
    pub fn add(ps: &mut ParamSet, group: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Encoder {
            group: group.to_string(),
            conv1: Conv::add(ps, &format!("{group}.conv1"), group, OBS_CHANNELS, CONV1, rng)?,
            conv2: Conv::add(ps, &format!("{group}.conv2"), group, CONV1, CONV2, rng)?,
            dense: Dense::add(ps, &format!("{group}.dense"), group, FLAT, FEATURE_DIM, Init::Xavier, rng)?,
        })
    }

    /// `obs` holds `n` flattened observations, `[n, 4096]` or `[n, 4, 32, 32]`.
    pub fn forward(&self, t: &mut Tape, obs: Var) -> Result<Var> {
        let n = t.shape(obs)[0];
        if t.shape(obs).iter().product::<usize>() != n * OBS_LEN {
            return Err(ModelError::Usage(format!("encoder input shape {:?}", t.shape(obs))));
        }
        let x = t.reshape(obs, [n, OBS_CHANNELS, OBS_SIDE, OBS_SIDE])?;
        let h = self.conv1.forward(t, x)?;
        let h = t.relu(h);
        let h = self.conv2.forward(t, h)?;
        let h = t.relu(h);
        let h = t.reshape(h, [n, FLAT])?;
        let h = self.dense.forward(t, h)?;
        Ok(t.relu(h))
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.conv1.k, self.conv1.b, self.conv2.k, self.conv2.b, self.dense.w, self.dense.b].to_vec()
    }

    /// Records `n` rendered views as an input node.
    pub fn input(t: &mut Tape, views: &[View]) -> Result<Var> {
        Ok(t.constant([views.len(), OBS_LEN], render_views(views))?)
    }

    /// Features for `views` without recording gradients.
    pub fn encode(&self, ps: &ParamSet, views: &[View]) -> Result<Vec<f32>> {
        let mut out = Vec::with_capacity(views.len() * FEATURE_DIM);
        for chunk in views.chunks(ENCODE_CHUNK) {
            let mut t = Tape::new(ps);
            let x = Encoder::input(&mut t, chunk)?;
            let f = self.forward(&mut t, x)?;
            out.extend_from_slice(t.value(f));
        }
        Ok(out)
    }
}

pub fn render_views(views: &[View]) -> Vec<f32> {
    let mut data = vec![0.0; views.len() * OBS_LEN];
    for (v, out) in views.iter().zip(data.chunks_mut(OBS_LEN)) {
        render_view_into(v, out);
    }
    data
}

pub fn one_hot(indices: &[usize], k: usize) -> Vec<f32> {
    let mut out = vec![0.0; indices.len() * k];
    for (row, &i) in out.chunks_mut(k).zip(indices) {
        row[i] = 1.0;
    }
    out
}

/// One-hot rows where `None` is the all-zero row.
pub fn one_hot_opt(indices: &[Option<usize>], k: usize) -> Vec<f32> {
    let mut out = vec![0.0; indices.len() * k];
    for (row, i) in out.chunks_mut(k).zip(indices) {
        if let Some(i) = *i {
            row[i] = 1.0;
        }
    }
    out
}

/// Linear classifier over the feature, plus the code one-hot in DI mode.
#[derive(Debug, Clone, Copy)]
pub struct Actor {
    pub head: Dense,
    pub di: bool,
}

impl Actor {
    pub fn add(ps: &mut ParamSet, group: &str, di: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = FEATURE_DIM + if di { N_CODES } else { 0 };
        Ok(Actor { head: Dense::add(ps, group, group, input, N_ACTIONS, Init::Zero, rng)?, di })
    }

    pub fn logits(&self, t: &mut Tape, feat: Var, codes: Option<&[usize]>) -> Result<Var> {
        let x = code_input(t, feat, codes, self.di)?;
        self.head.forward(t, x)
    }

    /// Logits with a relaxed code given as a `[n, K]` node.
    pub fn logits_with_code_node(&self, t: &mut Tape, feat: Var, code: Var) -> Result<Var> {
        if !self.di {
            return Err(ModelError::Usage("latent code given to a network without code input".into()));
        }
        let x = t.concat(feat, code)?;
        self.head.forward(t, x)
    }

    /// Action distributions for a batch of feature rows.
    pub fn probs(&self, ps: &ParamSet, feats: &[f32], codes: Option<&[usize]>) -> Result<Vec<f32>> {
        let mut t = Tape::new(ps);
        let f = t.constant([feats.len() / FEATURE_DIM, FEATURE_DIM], feats.to_vec())?;
        let l = self.logits(&mut t, f, codes)?;
        let p = t.softmax(l);
        Ok(t.value(p).to_vec())
    }
}

fn code_input(t: &mut Tape, feat: Var, codes: Option<&[usize]>, di: bool) -> Result<Var> {
    match (di, codes) {
        (false, None) => Ok(feat),
        (false, Some(_)) => Err(ModelError::Usage("latent code given to a network without code input".into())),
        (true, None) => Err(ModelError::Usage("code-conditioned network needs latent codes".into())),
        (true, Some(c)) => {
            let n = t.shape(feat)[0];
            if c.len() != n || c.iter().any(|&c| c >= N_CODES) {
                return Err(ModelError::Usage(format!("{} codes for {n} rows", c.len())));
            }
            let oh = t.constant([n, N_CODES], one_hot(c, N_CODES))?;
            Ok(t.concat(feat, oh)?)
        }
    }
}

/// dense(128→64) tanh, dense(64→1). Latent codes are not an input, so in
/// code-conditioned runs the value marginalizes over the posterior's codes.
#[derive(Debug, Clone, Copy)]
pub struct Critic {
    hidden: Dense,
    out: Dense,
}

impl Critic {
    pub fn add(ps: &mut ParamSet, group: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Critic {
            hidden: Dense::add(ps, &format!("{group}.hidden"), group, FEATURE_DIM, HIDDEN, Init::Xavier, rng)?,
            out: Dense::add(ps, &format!("{group}.out"), group, HIDDEN, 1, Init::Zero, rng)?,
        })
    }

    /// Values as an `[n]` node.
    pub fn values(&self, t: &mut Tape, feat: Var) -> Result<Var> {
        let h = self.hidden.forward(t, feat)?;
        let h = t.tanh(h);
        let v = self.out.forward(t, h)?;
        Ok(t.sum_last(v))
    }

    pub fn predict(&self, ps: &ParamSet, feats: &[f32]) -> Result<Vec<f32>> {
        let mut t = Tape::new(ps);
        let f = t.constant([feats.len() / FEATURE_DIM, FEATURE_DIM], feats.to_vec())?;
        let v = self.values(&mut t, f)?;
        Ok(t.value(v).to_vec())
    }

    pub fn ids(&self) -> Vec<ParamId> {
        [self.hidden.ids(), self.out.ids()].concat()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Bottleneck {
    pub mu: Dense,
    pub log_sigma: Dense,
}

/// Discriminator over (feature, action one-hot). Its logit passes through a
/// sigmoid to give D in (0, 1); large D means "looks like the policy".
#[derive(Debug, Clone, Copy)]
pub struct Discriminator {
    pub vdb: Option<Bottleneck>,
    hidden: Dense,
    out: Dense,
}

pub struct DiscOutput {
    /// `[n]` logits.
    pub logits: Var,
    /// `[n]` per-row KL of the bottleneck posterior against N(0, I).
    pub kl: Option<Var>,
}

impl Discriminator {
    pub fn add(ps: &mut ParamSet, group: &str, vdb: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        let input = FEATURE_DIM + N_ACTIONS;
        let vdb = if vdb {
            Some(Bottleneck {
                mu: Dense::add(ps, &format!("{group}.mu"), group, input, VDB_DIM, Init::Xavier, rng)?,
                log_sigma: Dense::add(ps, &format!("{group}.log_sigma"), group, input, VDB_DIM, Init::Zero, rng)?,
            })
        } else {
            None
        };
        let hidden_in = if vdb.is_some() { VDB_DIM } else { input };
        Ok(Discriminator {
            vdb,
            hidden: Dense::add(ps, &format!("{group}.hidden"), group, hidden_in, HIDDEN, Init::Xavier, rng)?,
            out: Dense::add(ps, &format!("{group}.out"), group, HIDDEN, 1, Init::Zero, rng)?,
        })
    }

    /// With a bottleneck, `noise` (`n * 32` standard normals) gives the
    /// reparameterized sample `mu + sigma * noise`; without it the mean is
    /// used.
    pub fn forward(&self, t: &mut Tape, feat: Var, actions: &[usize], noise: Option<&[f32]>) -> Result<DiscOutput> {
        let n = t.shape(feat)[0];
        if actions.len() != n || actions.iter().any(|&a| a >= N_ACTIONS) {
            return Err(ModelError::Usage(format!("{} actions for {n} rows", actions.len())));
        }
        let oh = t.constant([n, N_ACTIONS], one_hot(actions, N_ACTIONS))?;
        let x = t.concat(feat, oh)?;
        let (x, kl) = match &self.vdb {
            None => (x, None),
            Some(b) => {
                let mu = b.mu.forward(t, x)?;
                let ls = b.log_sigma.forward(t, x)?;
                let kl = t.gaussian_kl(mu, ls)?;
                let z = match noise {
                    None => mu,
                    Some(eps) => {
                        if eps.len() != n * VDB_DIM {
                            return Err(ModelError::Usage(format!("{} noise values for {n} rows", eps.len())));
                        }
                        let e = t.constant([n, VDB_DIM], eps.to_vec())?;
                        let sigma = t.exp(ls);
                        let s = t.mul(sigma, e)?;
                        t.add(mu, s)?
                    }
                };
                (z, Some(kl))
            }
        };
        let h = self.hidden.forward(t, x)?;
        let h = t.relu(h);
        let l = self.out.forward(t, h)?;
        Ok(DiscOutput { logits: t.sum_last(l), kl })
    }

    /// D values clamped to `[D_EPS, 1 - D_EPS]` (and per-row KL with a
    /// bottleneck), using the bottleneck mean.
    pub fn probs(&self, ps: &ParamSet, feats: &[f32], actions: &[usize]) -> Result<(Vec<f32>, Option<Vec<f32>>)> {
        let mut t = Tape::new(ps);
        let f = t.constant([actions.len(), FEATURE_DIM], feats.to_vec())?;
        let out = self.forward(&mut t, f, actions, None)?;
        let d = t.sigmoid(out.logits);
        let d = t.value(d).iter().map(|&d| d.clamp(D_EPS, 1.0 - D_EPS)).collect();
        Ok((d, out.kl.map(|k| t.value(k).to_vec())))
    }
}

/// q(c_t | feature_t, c_{t-1}); the previous code is the zero vector at t = 0.
#[derive(Debug, Clone, Copy)]
pub struct Posterior {
    pub head: Dense,
}

impl Posterior {
    pub fn add(ps: &mut ParamSet, group: &str, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Posterior { head: Dense::add(ps, group, group, FEATURE_DIM + N_CODES, N_CODES, Init::Zero, rng)? })
    }

    pub fn logits(&self, t: &mut Tape, feat: Var, prev: &[Option<usize>]) -> Result<Var> {
        let n = t.shape(feat)[0];
        if prev.len() != n || prev.iter().flatten().any(|&c| c >= N_CODES) {
            return Err(ModelError::Usage(format!("{} previous codes for {n} rows", prev.len())));
        }
        let oh = t.constant([n, N_CODES], one_hot_opt(prev, N_CODES))?;
        let x = t.concat(feat, oh)?;
        self.head.forward(t, x)
    }

    pub fn probs(&self, ps: &ParamSet, feats: &[f32], prev: &[Option<usize>]) -> Result<Vec<f32>> {
        let mut t = Tape::new(ps);
        let f = t.constant([prev.len(), FEATURE_DIM], feats.to_vec())?;
        let l = self.logits(&mut t, f, prev)?;
        let p = t.softmax(l);
        Ok(t.value(p).to_vec())
    }
}

/// Writes every parameter whose name starts with `group.` (or equals it).
pub fn save_group(ps: &ParamSet, group: &str, path: &Path) -> Result<()> {
    let dotted = format!("{group}.");
    let filter = |name: &str| name.starts_with(&dotted);
    save_params(path, ps, Some(&filter))?;
    Ok(())
}

/// Loads `src.*` parameters from `path` into `dst.*` of `ps`. Every `dst.*`
/// parameter must be present with a matching shape.
pub fn load_group(ps: &mut ParamSet, path: &Path, what: &'static str, src: &str, dst: &str) -> Result<()> {
    if !path.exists() {
        return Err(ModelError::MissingCheckpoint { what, path: path.to_path_buf() });
    }
    let records = load_params::<f32>(path)?;
    let mismatch = |message: String| ModelError::Mismatch { path: path.to_path_buf(), message };
    let (src_dot, dst_dot) = (format!("{src}."), format!("{dst}."));
    let mut loaded = 0;
    for (name, tensor) in records {
        let Some(rest) = name.strip_prefix(&src_dot) else {
            continue;
        };
        let target = format!("{dst_dot}{rest}");
        let id = ps.id_of(&target).ok_or_else(|| mismatch(format!("unexpected parameter {name:?}")))?;
        if ps.get(id).shape() != tensor.shape() {
            return Err(mismatch(format!("{name}: shape {:?}, expected {:?}", tensor.shape(), ps.get(id).shape())));
        }
        ps.get_mut(id).data_mut().copy_from_slice(tensor.data());
        loaded += 1;
    }
    let expected = ps.iter().filter(|(_, n, _)| n.starts_with(&dst_dot)).count();
    if loaded != expected {
        return Err(mismatch(format!("{loaded} of {expected} {src}.* parameters present")));
    }
    Ok(())
}

/// The behavior-cloning pair: global encoder plus linear action classifier.
pub struct BcModel {
    pub params: ParamSet,
    pub encoder: Encoder,
    pub actor: Actor,
}

impl BcModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let encoder = Encoder::add(&mut params, "encoder", &mut rng)?;
        let actor = Actor::add(&mut params, "actor", false, &mut rng)?;
        Ok(BcModel { params, encoder, actor })
    }

    pub fn load(encoder_path: &Path, actor_path: &Path) -> Result<Self> {
        let mut m = BcModel::new(0)?;
        load_group(&mut m.params, encoder_path, "encoder", "encoder", "encoder")?;
        load_group(&mut m.params, actor_path, "behavior-cloned actor", "actor", "actor")?;
        Ok(m)
    }
}

/// Pre-trained posterior and code-conditioned actor over a frozen encoder.
pub struct PosteriorModel {
    pub params: ParamSet,
    pub posterior: Posterior,
    pub actor: Actor,
}

impl PosteriorModel {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let posterior = Posterior::add(&mut params, "posterior", &mut rng)?;
        let actor = Actor::add(&mut params, "actor", true, &mut rng)?;
        Ok(PosteriorModel { params, posterior, actor })
    }
}

/// Which encoder a consumer reads. They are the same parameters whenever a
/// global encoder is in use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Policy,
    Disc,
}

/// All networks of an adversarial run.
pub struct Networks {
    pub params: ParamSet,
    pub layout: ModelLayout,
    pub policy_encoder: Encoder,
    pub disc_encoder: Encoder,
    pub actor: Actor,
    pub critic: Critic,
    pub disc: Discriminator,
    pub posterior: Option<Posterior>,
}

pub const GLOBAL_ENCODER: &str = "encoder";

impl Networks {
    /// Fresh networks; nothing loaded or frozen yet.
    pub fn new(layout: ModelLayout, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let (policy_encoder, disc_encoder) = if layout.encoder.is_global() {
            let e = Encoder::add(&mut params, GLOBAL_ENCODER, &mut rng)?;
            (e.clone(), e)
        } else {
            (
                Encoder::add(&mut params, "policy_encoder", &mut rng)?,
                Encoder::add(&mut params, "disc_encoder", &mut rng)?,
            )
        };
        let actor = Actor::add(&mut params, "actor", layout.di, &mut rng)?;
        let critic = Critic::add(&mut params, "critic", &mut rng)?;
        let disc = Discriminator::add(&mut params, "disc", layout.vdb, &mut rng)?;
        let posterior = if layout.di { Some(Posterior::add(&mut params, "posterior", &mut rng)?) } else { None };
        Ok(Networks { params, layout, policy_encoder, disc_encoder, actor, critic, disc, posterior })
    }

    /// Fresh networks with pre-trained parts loaded and frozen as the layout
    /// requires.
    pub fn build(layout: ModelLayout, seed: u64, encoder: Option<&Path>, posterior: Option<&Path>) -> Result<Self> {
        if layout.encoder == EncoderMode::RandomFixExcluded {
            return Err(ModelError::Usage("a randomly initialized, fixed encoder is not a supported strategy".into()));
        }
        let mut nets = Networks::new(layout, seed)?;
        if layout.encoder.loads() {
            let path = encoder.ok_or_else(|| ModelError::Usage("encoder checkpoint path required".into()))?;
            load_group(&mut nets.params, path, "behavior-cloned encoder", GLOBAL_ENCODER, GLOBAL_ENCODER)?;
        }
        if layout.encoder.is_frozen() {
            nets.params.freeze(GLOBAL_ENCODER);
        }
        if layout.di {
            let path = posterior.ok_or_else(|| ModelError::Usage("posterior checkpoint path required".into()))?;
            load_group(&mut nets.params, path, "posterior", "posterior", "posterior")?;
            nets.params.freeze("posterior");
        }
        Ok(nets)
    }

    pub fn encoder(&self, role: Role) -> &Encoder {
        match role {
            Role::Policy => &self.policy_encoder,
            Role::Disc => &self.disc_encoder,
        }
    }

    pub fn shares_encoder(&self) -> bool {
        self.policy_encoder.group == self.disc_encoder.group
    }

    pub fn encoder_frozen(&self) -> bool {
        self.params.is_group_frozen(&self.policy_encoder.group)
    }

    /// Trainable parameters updated by the policy optimizer.
    pub fn policy_ids(&self) -> Vec<ParamId> {
        let mut ids = self.actor.head.ids().to_vec();
        ids.extend(self.critic.ids());
        if !self.encoder_frozen() {
            ids.extend(self.policy_encoder.ids());
        }
        ids
    }

    /// Trainable parameters updated by the discriminator optimizer.
    pub fn disc_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.params.group_ids("disc").collect();
        if !self.params.is_group_frozen(&self.disc_encoder.group) {
            ids.extend(self.disc_encoder.ids());
        }
        ids
    }

    /// One file per network plus a JSON manifest of encoder linkage.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(diffcore::Error::from)?;
        let mut groups = vec![self.policy_encoder.group.clone()];
        if !self.shares_encoder() {
            groups.push(self.disc_encoder.group.clone());
        }
        groups.extend(["actor", "critic", "disc"].map(String::from));
        if self.posterior.is_some() {
            groups.push("posterior".into());
        }
        let mut paths = Vec::new();
        for g in &groups {
            let p = dir.join(format!("{g}.mailparm"));
            save_group(&self.params, g, &p)?;
            paths.push(p);
        }
        let enc = |g: &str| format!("{g}.mailparm");
        let mut manifest = serde_json::json!({
            "layout": self.layout,
            "actor": { "file": "actor.mailparm", "encoder": enc(&self.policy_encoder.group) },
            "critic": { "file": "critic.mailparm", "encoder": enc(&self.policy_encoder.group) },
            "discriminator": { "file": "disc.mailparm", "encoder": enc(&self.disc_encoder.group) },
            "encoder_frozen": self.encoder_frozen(),
        });
        if self.posterior.is_some() {
            manifest["posterior"] =
                serde_json::json!({ "file": "posterior.mailparm", "encoder": enc(&self.policy_encoder.group) });
        }
        let p = dir.join("models.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest).expect("json value"))
            .map_err(diffcore::Error::from)?;
        paths.push(p);
        Ok(paths)
    }

    /// Restores networks written by [`Networks::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("models.json");
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|_| ModelError::MissingCheckpoint { what: "model manifest", path: manifest_path.clone() })?;
        let manifest: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| ModelError::Mismatch { path: manifest_path.clone(), message: e.to_string() })?;
        let layout: ModelLayout = serde_json::from_value(manifest["layout"].clone())
            .map_err(|e| ModelError::Mismatch { path: manifest_path.clone(), message: e.to_string() })?;
        let mut nets = Networks::new(layout, 0)?;
        let mut groups = vec![nets.policy_encoder.group.clone()];
        if !nets.shares_encoder() {
            groups.push(nets.disc_encoder.group.clone());
        }
        groups.extend(["actor", "critic", "disc"].map(String::from));
        if layout.di {
            groups.push("posterior".into());
        }
        for g in &groups {
            load_group(&mut nets.params, &dir.join(format!("{g}.mailparm")), "network", g, g)?;
        }
        if manifest["encoder_frozen"].as_bool() == Some(true) {
            nets.params.freeze(GLOBAL_ENCODER);
        }
        if layout.di {
            nets.params.freeze("posterior");
        }
        Ok(nets)
    }
}

/// Features keyed by view. Valid only while the encoder's parameters are
/// unchanged; call [`FeatureCache::clear`] after updating them.
#[derive(Debug, Default, Clone)]
pub struct FeatureCache {
    index: HashMap<View, usize>,
    data: Vec<f32>,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A full table over `views`.
    pub fn precompute(enc: &Encoder, ps: &ParamSet, views: &[View]) -> Result<Self> {
        let mut c = FeatureCache::new();
        c.fill(enc, ps, views)?;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn clear(&mut self) {
        self.index.clear();
        self.data.clear();
    }

    /// Encodes the views not yet present.
    pub fn fill(&mut self, enc: &Encoder, ps: &ParamSet, views: &[View]) -> Result<()> {
        let mut missing: Vec<View> = Vec::new();
        for v in views {
            if !self.index.contains_key(v) && !missing.contains(v) {
                missing.push(*v);
            }
        }
        if missing.is_empty() {
            return Ok(());
        }
        let feats = enc.encode(ps, &missing)?;
        for (v, f) in missing.into_iter().zip(feats.chunks(FEATURE_DIM)) {
            self.index.insert(v, self.data.len() / FEATURE_DIM);
            self.data.extend_from_slice(f);
        }
        Ok(())
    }

    pub fn get(&self, v: &View) -> Option<&[f32]> {
        self.index.get(v).map(|&i| &self.data[i * FEATURE_DIM..(i + 1) * FEATURE_DIM])
    }

    /// Feature rows for `views`, encoding any that are missing.
    pub fn rows(&mut self, enc: &Encoder, ps: &ParamSet, views: &[View]) -> Result<Vec<f32>> {
        self.fill(enc, ps, views)?;
        let mut out = Vec::with_capacity(views.len() * FEATURE_DIM);
        for v in views {
            out.extend_from_slice(self.get(v).expect("filled above"));
        }
        Ok(out)
    }
}
