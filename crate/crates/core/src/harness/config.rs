use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{HarnessError, Result};
use crate::models::EncoderMode;
use crate::trainers::{RewardScheme, TrainConfig};

pub const SCHEMA_VERSION: u32 = 1;

/// One named combination of encoder strategy, bottleneck, latent codes and
/// reward scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub encoder: EncoderMode,
    pub vdb: bool,
    pub di: bool,
    pub reward: RewardScheme,
}

const fn preset(name: &'static str, encoder: EncoderMode, vdb: bool, di: bool, reward: RewardScheme) -> Preset {
    Preset { name, encoder, vdb, di, reward }
}

use EncoderMode::{LoadFix, None as NoEncoder};
use RewardScheme::{Log, LogShift};

pub const PRESETS: [Preset; 10] = [
    preset("GAIL", NoEncoder, false, false, Log),
    preset("VAIL", NoEncoder, true, false, Log),
    preset("GAIL_LS", NoEncoder, false, false, LogShift),
    preset("VAIL_LS", NoEncoder, true, false, LogShift),
    preset("GAIL_GE", LoadFix, false, false, Log),
    preset("MAIL", LoadFix, false, false, LogShift),
    preset("MAIL+VDB", LoadFix, true, false, LogShift),
    preset("DI-GAIL_GE", LoadFix, false, true, Log),
    preset("DI-MAIL", LoadFix, false, true, LogShift),
    preset("DI-MAIL+VDB", LoadFix, true, true, LogShift),
];

impl Preset {
    /// Case-insensitive lookup.
    pub fn find(name: &str) -> Option<&'static Preset> {
        PRESETS.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    }

    pub fn apply(&self, cfg: &mut TrainConfig) {
        cfg.encoder = self.encoder;
        cfg.vdb = self.vdb;
        cfg.di = self.di;
        cfg.reward = self.reward;
    }
}

/// A complete, re-runnable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default)]
    pub preset: Option<String>,
    /// Demonstration file.
    pub demos: PathBuf,
    /// Directory holding the behavior-cloned encoder and the posterior.
    pub checkpoints: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            schema: SCHEMA_VERSION,
            preset: None,
            demos: PathBuf::from("runs/demos.maildemo"),
            checkpoints: PathBuf::from("runs/checkpoints"),
            out: PathBuf::from("runs/out"),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn for_preset(name: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        cfg.set_preset(name)?;
        Ok(cfg)
    }

    pub fn set_preset(&mut self, name: &str) -> Result<()> {
        let p = Preset::find(name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
            HarnessError::Usage(format!("unknown preset {name:?} (expected one of {})", names.join(", ")))
        })?;
        p.apply(&mut self.train);
        self.preset = Some(p.name.to_string());
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| HarnessError::Usage(format!("invalid experiment config: {e}")))?;
        if cfg.schema != SCHEMA_VERSION {
            return Err(HarnessError::Usage(format!(
                "unsupported config schema {} (expected {SCHEMA_VERSION})",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn encoder_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("encoder.mailparm")
    }

    pub fn bc_actor_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("actor.mailparm")
    }

    pub fn posterior_checkpoint(&self) -> PathBuf {
        self.checkpoints.join("posterior.mailparm")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip() {
        for p in &PRESETS {
            let cfg = ExperimentConfig::for_preset(p.name).unwrap();
            let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(back, cfg, "{}", p.name);
        }
    }

    #[test]
    fn preset_names_are_unique_and_case_insensitive() {
        for (i, p) in PRESETS.iter().enumerate() {
            assert!(PRESETS[i + 1..].iter().all(|q| q.name != p.name));
            assert_eq!(Preset::find(&p.name.to_lowercase()), Some(p));
        }
        assert!(matches!(ExperimentConfig::for_preset("BOGUS"), Err(HarnessError::Usage(_))));
    }

    #[test]
    fn rejects_unknown_keys_and_schema() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json()).unwrap();
        v["extra"] = 1.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json()).unwrap();
        v["train"]["gama"] = 0.9.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::default().to_json()).unwrap();
        v["schema"] = 2.into();
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn partial_train_section_takes_defaults() {
        let text = r#"{"schema":1,"demos":"d","checkpoints":"c","out":"o","train":{"seed":7}}"#;
        let cfg = ExperimentConfig::from_json(text).unwrap();
        assert_eq!(cfg.train.seed, 7);
        assert_eq!(cfg.train.gamma, TrainConfig::default().gamma);
    }
}
