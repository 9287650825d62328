//! Shortest-path expert and expert demonstration datasets.
//!
//! Records keep the compact logical state rather than pixels; observations
//! are re-rendered on demand since rendering is pure.

use std::fs;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::navenv::{self, Action, Cell, EnvState, GRID};

pub const DEMO_MAGIC: &[u8; 8] = b"MAILDEMO";
pub const DEMO_VERSION: u32 = 1;
const RECORD_BYTES: usize = 8;

#[derive(Debug, Error)]
pub enum DemoError {
    #[error("n_pairs must be positive")]
    Empty,
    #[error("demo format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_err(offset: usize, message: impl Into<String>) -> DemoError {
    DemoError::Format { offset: offset as u64, message: message.into() }
}

/// First move of a shortest path to the current subgoal (key, then car).
/// Ties resolve in `Up, Down, Left, Right` order. `None` only when the agent
/// already stands on its subgoal.
pub fn expert_action(state: &EnvState) -> Option<Action> {
    let goal = state.subgoal();
    let here = navenv::distance(state.agent, goal);
    Action::ALL.into_iter().find(|&a| {
        let next = navenv::layout().move_from(state.agent, a);
        here > 0 && navenv::distance(next, goal) + 1 == here
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DemoRecord {
    pub agent: Cell,
    pub key: Cell,
    pub car: Cell,
    pub has_key: bool,
    pub action: Action,
}

impl DemoRecord {
    pub fn from_state(s: &EnvState, action: Action) -> Self {
        DemoRecord { agent: s.agent, key: s.key, car: s.car, has_key: s.has_key, action }
    }

    pub fn view(&self) -> navenv::View {
        navenv::View { agent: self.agent, key: (!self.has_key).then_some(self.key), car: self.car }
    }

    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&[
            self.agent.row,
            self.agent.col,
            self.key.row,
            self.key.col,
            self.car.row,
            self.car.col,
            self.has_key as u8,
            self.action.index() as u8,
        ]);
    }

    fn decode(b: &[u8], offset: usize) -> Result<Self, DemoError> {
        let cell = |i: usize| {
            let (r, c) = (b[i], b[i + 1]);
            let cell = Cell::new(r, c);
            if (r as usize) < GRID && (c as usize) < GRID && !navenv::layout().is_wall(cell) {
                Ok(cell)
            } else {
                Err(format_err(offset + i, format!("invalid cell ({r}, {c})")))
            }
        };
        let has_key = match b[6] {
            0 => false,
            1 => true,
            v => return Err(format_err(offset + 6, format!("invalid key flag {v}"))),
        };
        let action = Action::from_index(b[7] as usize)
            .ok_or_else(|| format_err(offset + 7, format!("invalid action {}", b[7])))?;
        Ok(DemoRecord { agent: cell(0)?, key: cell(2)?, car: cell(4)?, has_key, action })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DemoDataset {
    pub seed: u64,
    records: Vec<DemoRecord>,
    /// Index of each episode's first record.
    episode_starts: Vec<usize>,
}

impl DemoDataset {
    pub fn from_episodes(seed: u64, episodes: Vec<Vec<DemoRecord>>) -> Self {
        let mut records = Vec::new();
        let mut episode_starts = Vec::new();
        for ep in episodes.into_iter().filter(|e| !e.is_empty()) {
            episode_starts.push(records.len());
            records.extend(ep);
        }
        DemoDataset { seed, records, episode_starts }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[DemoRecord] {
        &self.records
    }

    pub fn episode_count(&self) -> usize {
        self.episode_starts.len()
    }

    pub fn episode(&self, i: usize) -> &[DemoRecord] {
        let start = self.episode_starts[i];
        let end = self.episode_starts.get(i + 1).copied().unwrap_or(self.records.len());
        &self.records[start..end]
    }

    pub fn episodes(&self) -> impl Iterator<Item = &[DemoRecord]> {
        (0..self.episode_count()).map(|i| self.episode(i))
    }

    /// Splits by whole episodes: the first `ceil(train_fraction * n)`
    /// episodes of a seeded shuffle go to the first dataset.
    pub fn split_episodes(&self, train_fraction: f64, seed: u64) -> (DemoDataset, DemoDataset) {
        use rand::seq::SliceRandom;
        let mut order: Vec<usize> = (0..self.episode_count()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = ((train_fraction * order.len() as f64).ceil() as usize).min(order.len());
        let pick = |ids: &[usize]| {
            DemoDataset::from_episodes(self.seed, ids.iter().map(|&i| self.episode(i).to_vec()).collect())
        };
        (pick(&order[..n_train]), pick(&order[n_train..]))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(36 + 8 * self.episode_starts.len() + RECORD_BYTES * self.records.len());
        out.extend_from_slice(DEMO_MAGIC);
        out.extend_from_slice(&DEMO_VERSION.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.episode_starts.len() as u64).to_le_bytes());
        for &s in &self.episode_starts {
            out.extend_from_slice(&(s as u64).to_le_bytes());
        }
        for r in &self.records {
            r.encode(&mut out);
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self, DemoError> {
        let need = |at: usize, n: usize, what: &str| {
            if b.len() < at + n {
                Err(format_err(b.len(), format!("truncated: {what} needs bytes {at}..{}", at + n)))
            } else {
                Ok(())
            }
        };
        let u64_at = |at: usize| u64::from_le_bytes(b[at..at + 8].try_into().unwrap());
        need(0, 8, "magic")?;
        if &b[..8] != DEMO_MAGIC {
            return Err(format_err(0, "bad magic, expected \"MAILDEMO\""));
        }
        need(8, 4, "version")?;
        let version = u32::from_le_bytes(b[8..12].try_into().unwrap());
        if version != DEMO_VERSION {
            return Err(format_err(8, format!("unsupported version {version}")));
        }
        need(12, 24, "header")?;
        let seed = u64_at(12);
        let count = u64_at(20);
        let episodes = u64_at(28);
        let mut at = 36;
        let offsets_len = usize::try_from(episodes)
            .ok()
            .and_then(|e| e.checked_mul(8))
            .ok_or_else(|| format_err(28, format!("implausible episode count {episodes}")))?;
        need(at, offsets_len, "episode offsets")?;
        let mut episode_starts = Vec::with_capacity(episodes as usize);
        for i in 0..episodes as usize {
            let s = u64_at(at);
            let ok = if i == 0 { s == 0 } else { s > episode_starts[i - 1] as u64 } && s < count;
            if !ok {
                return Err(format_err(at, format!("episode offset {s} out of order or range")));
            }
            episode_starts.push(s as usize);
            at += 8;
        }
        if episodes == 0 && count != 0 {
            return Err(format_err(28, "records present but no episodes"));
        }
        let rec_len = usize::try_from(count)
            .ok()
            .and_then(|c| c.checked_mul(RECORD_BYTES))
            .ok_or_else(|| format_err(20, format!("implausible record count {count}")))?;
        need(at, rec_len, "records")?;
        if b.len() != at + rec_len {
            return Err(format_err(at + rec_len, format!("{} trailing bytes", b.len() - at - rec_len)));
        }
        let records = b[at..]
            .chunks_exact(RECORD_BYTES)
            .enumerate()
            .map(|(i, chunk)| DemoRecord::decode(chunk, at + i * RECORD_BYTES))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(DemoDataset { seed, records, episode_starts })
    }

    pub fn save(&self, path: &Path) -> Result<(), DemoError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DemoError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Rolls one full expert episode from `start`.
pub fn expert_episode(start: EnvState) -> Vec<DemoRecord> {
    let mut s = start;
    let mut out = Vec::new();
    while !s.is_done() {
        let a = expert_action(&s).expect("unfinished state has a subgoal to approach");
        out.push(DemoRecord::from_state(&s, a));
        s = navenv::step(&s, a).expect("episode not finished").state;
    }
    out
}

/// Whole expert episodes from seeded resets until at least `n_pairs`
/// records exist.
pub fn generate(n_pairs: usize, seed: u64) -> Result<DemoDataset, DemoError> {
    if n_pairs == 0 {
        return Err(DemoError::Empty);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::new();
    let mut total = 0;
    while total < n_pairs {
        let start = navenv::reset(rng.next_u64());
        let ep = expert_episode(start);
        total += ep.len();
        episodes.push(ep);
    }
    Ok(DemoDataset::from_episodes(seed, episodes))
}

/// Replays an episode through the environment and returns (return, done).
pub fn replay(episode: &[DemoRecord]) -> Option<(f64, bool)> {
    let first = episode.first()?;
    let mut s = EnvState::new(first.agent, first.key, first.car);
    if s.has_key != first.has_key {
        return None;
    }
    let mut ret = 0.0;
    let mut done = false;
    for r in episode {
        if done || s.agent != r.agent || s.has_key != r.has_key {
            return None;
        }
        let tr = navenv::step(&s, r.action).ok()?;
        ret += tr.reward;
        done = tr.done;
        s = tr.state;
    }
    Some((ret, done && s.is_success()))
}
