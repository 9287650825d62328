use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// How a discriminator output becomes the policy's reward. Small D means
/// "looks like the expert", so every scheme decreases in D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScheme {
    /// `-ln d`, positive everywhere.
    Log,
    /// `-ln(d) / 10`.
    LogScaled,
    /// `-ln(d + 0.5)`, zero at the equilibrium d = 0.5.
    LogShift,
    /// `0.5 - d`.
    Linear,
    /// `tan(0.5 - d)`.
    Tan,
}

/// D is clamped to `[D_CLAMP, 1 - D_CLAMP]` before any scheme is applied.
pub const D_CLAMP: f64 = 1e-7;

impl RewardScheme {
    pub const ALL: [RewardScheme; 5] =
        [RewardScheme::Log, RewardScheme::LogScaled, RewardScheme::LogShift, RewardScheme::Linear, RewardScheme::Tan];

    pub fn name(self) -> &'static str {
        match self {
            RewardScheme::Log => "log",
            RewardScheme::LogScaled => "log_scaled",
            RewardScheme::LogShift => "log_shift",
            RewardScheme::Linear => "linear",
            RewardScheme::Tan => "tan",
        }
    }

    /// Whether the scheme goes negative past the equilibrium.
    pub fn is_penalized(self) -> bool {
        matches!(self, RewardScheme::LogShift | RewardScheme::Linear | RewardScheme::Tan)
    }
}

impl fmt::Display for RewardScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.to_ascii_lowercase().replace(['-', ' '], "_");
        RewardScheme::ALL.into_iter().find(|r| r.name() == norm || r.name().replace('_', "") == norm).ok_or_else(|| {
            format!("unknown reward scheme {s:?} (expected one of log, log_scaled, log_shift, linear, tan)")
        })
    }
}

pub fn compute_reward(scheme: RewardScheme, d: f64) -> f64 {
    let d = d.clamp(D_CLAMP, 1.0 - D_CLAMP);
    match scheme {
        RewardScheme::Log => -d.ln(),
        RewardScheme::LogScaled => -d.ln() / 10.0,
        RewardScheme::LogShift => -(d + 0.5).ln(),
        RewardScheme::Linear => 0.5 - d,
        RewardScheme::Tan => (0.5 - d).tan(),
    }
}
