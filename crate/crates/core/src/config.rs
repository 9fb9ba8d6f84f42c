//! Experiment configuration: TOML file plus dotted `--key value` overrides.
//!
//! ```toml
//! variant = "full_uc_grpo"
//! steps = 400
//! seeds = [0, 1, 2]
//!
//! [reward]
//! lambda = 0.7
//!
//! [world.zoom_gain]
//! contempt = 0.3
//! ```
//!
//! Every key is optional; missing keys take their defaults, and tables merge
//! key by key (setting `world.zoom_gain.contempt` keeps the other seven
//! emotions). Unknown keys are errors.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calibration::CalibrationParams;
use crate::grpo::OptimizerConfig;
use crate::reward::{RewardEngine, RewardParams, RewardWiring};
use crate::sim::WorldParams;
use crate::train::TrainSpec;

/// Ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Emotion-only task reward, fallback utility only.
    #[serde(alias = "emotion_only")]
    EmotionOnlyRl,
    /// Dense emotion + AU task reward, fallback utility only.
    #[serde(alias = "au_grounded")]
    AuGroundedRl,
    /// Utility term replaced by a constant bonus for zooming.
    #[serde(alias = "zoom_biased")]
    ZoomBiasedRl,
    /// Contrastive utility with modulation factors pinned to 1.
    NoEmotionEma,
    #[serde(alias = "full")]
    FullUcGrpo,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::EmotionOnlyRl,
        Variant::AuGroundedRl,
        Variant::ZoomBiasedRl,
        Variant::NoEmotionEma,
        Variant::FullUcGrpo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::EmotionOnlyRl => "emotion_only_rl",
            Variant::AuGroundedRl => "au_grounded_rl",
            Variant::ZoomBiasedRl => "zoom_biased_rl",
            Variant::NoEmotionEma => "no_emotion_ema",
            Variant::FullUcGrpo => "full_uc_grpo",
        }
    }

    pub fn wiring(self) -> RewardWiring {
        match self {
            Variant::EmotionOnlyRl | Variant::AuGroundedRl => RewardWiring {
                contrastive: false,
                calibrated: false,
                zoom_bonus: false,
            },
            Variant::ZoomBiasedRl => RewardWiring {
                contrastive: false,
                calibrated: false,
                zoom_bonus: true,
            },
            Variant::NoEmotionEma => RewardWiring {
                contrastive: true,
                calibrated: false,
                zoom_bonus: false,
            },
            Variant::FullUcGrpo => RewardWiring {
                contrastive: true,
                calibrated: true,
                zoom_bonus: false,
            },
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(s))
            .map_err(|_| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub eval_queries: usize,
    /// Not part of the config hash.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub reward: RewardParams,
    pub calibration: CalibrationParams,
    pub optimizer: OptimizerConfig,
    pub world: WorldParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::FullUcGrpo,
            steps: 400,
            seeds: vec![0],
            eval_queries: 4096,
            out_dir: None,
            reward: RewardParams::default(),
            calibration: CalibrationParams::default(),
            optimizer: OptimizerConfig::default(),
            world: WorldParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(String),
    #[error("override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("field `{field}` conflicts with variant {variant}: {reason}")]
    Conflict {
        field: String,
        variant: Variant,
        reason: &'static str,
    },
}

impl ConfigError {
    pub fn field(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax(_) => None,
            ConfigError::Override { key, .. } => Some(key),
            ConfigError::Invalid { field, .. } | ConfigError::Conflict { field, .. } => Some(field),
        }
    }
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.into(),
        message: message.to_string(),
    }
}

/// Parses an override value as a TOML literal, falling back to a bare string.
fn override_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override {
            key: key.into(),
            message: "empty path segment".into(),
        });
    }
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(|| ConfigError::Override {
            key: key.into(),
            message: format!("`{part}` is not a table"),
        })?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn get_path<'a>(root: &'a toml::Table, key: &str) -> Option<&'a toml::Value> {
    let mut parts = key.split('.');
    let mut v = root.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

/// Overlays `top` onto `base`; nested tables merge key by key.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Builds a config from optional TOML text and `(dotted.key, value)` overrides.
pub fn load_config(text: Option<&str>, overrides: &[(String, String)]) -> Result<ExperimentConfig, ConfigError> {
    let mut root: toml::Table = match text {
        Some(t) => t.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.message().to_string()))?,
        None => toml::Table::new(),
    };
    for (k, v) in overrides {
        set_path(&mut root, k, override_value(v))?;
    }
    let explicit_w_au = get_path(&root, "reward.w_au").and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)));
    let explicit_bonus =
        get_path(&root, "reward.zoom_bonus").and_then(|v| v.as_float().or(v.as_integer().map(|i| i as f64)));

    let mut merged = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
    merge(&mut merged, root);
    let mut cfg: ExperimentConfig =
        serde_path_to_error::deserialize(toml::Value::Table(merged)).map_err(|e| {
            let field = e.path().to_string();
            invalid(field, e.into_inner().message())
        })?;

    let conflict = |field: &str, reason| ConfigError::Conflict {
        field: field.into(),
        variant: cfg.variant,
        reason,
    };
    match (cfg.variant, explicit_w_au) {
        (Variant::EmotionOnlyRl, Some(w)) if w != 0.0 => {
            return Err(conflict("reward.w_au", "the emotion-only variant fixes w_au = 0"));
        }
        (Variant::EmotionOnlyRl, _) => cfg.reward.w_au = 0.0,
        (_, Some(w)) if w == 0.0 => {
            return Err(conflict("reward.w_au", "this variant uses the dense AU reward, w_au must be positive"));
        }
        _ => {}
    }
    if cfg.variant == Variant::ZoomBiasedRl && explicit_bonus.is_some_and(|b| b <= 0.0) {
        return Err(conflict("reward.zoom_bonus", "the zoom-biased variant needs a positive bonus"));
    }

    cfg.reward.check().map_err(|e| invalid(format!("reward.{}", e.field), e.reason))?;
    cfg.calibration
        .check()
        .map_err(|e| invalid(format!("calibration.{}", e.field), e.reason))?;
    cfg.optimizer
        .check()
        .map_err(|e| invalid(format!("optimizer.{}", e.field), e.reason))?;
    cfg.world.check().map_err(|e| invalid(format!("world.{}", e.field), e.reason))?;
    if cfg.steps == 0 {
        return Err(invalid("steps", "must be at least 1"));
    }
    if cfg.seeds.is_empty() {
        return Err(invalid("seeds", "at least one seed is required"));
    }
    Ok(cfg)
}

/// Reward pipeline for the configured variant.
pub fn resolve_variant(cfg: &ExperimentConfig) -> RewardEngine {
    let mut params = cfg.reward.clone();
    if cfg.variant == Variant::EmotionOnlyRl {
        params.w_au = 0.0;
    }
    RewardEngine::new(
        params,
        cfg.variant.wiring(),
        cfg.calibration.clone(),
        cfg.optimizer.turn_budget,
    )
}

pub fn train_spec(cfg: &ExperimentConfig) -> TrainSpec {
    TrainSpec {
        engine: resolve_variant(cfg),
        optimizer: cfg.optimizer.clone(),
        world: cfg.world.clone(),
        steps: cfg.steps,
        eval_queries: cfg.eval_queries,
    }
}

/// SHA-256 over the canonical JSON form of the resolved config (keys sorted, `out_dir` left out).
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = None;
    let value = serde_json::to_value(&c).expect("configs always serialize");
    let text = serde_json::to_string(&value).expect("values always serialize");
    hex::encode(Sha256::digest(text.as_bytes()))
}
