//! `key=value` training configuration files.
//!
//! `#` starts a comment. `mode` and `backbone` pick the base model layout;
//! every other key overrides one field. Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use super::TrainConfig;
use crate::qmodel::{BackboneConfig, Mode, ModelConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config line {line}: {msg}")]
pub struct ConfigError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigFile {
    pub train: TrainConfig,
    /// Weights to fine-tune from instead of a fresh initialisation.
    pub init_weights: Option<PathBuf>,
}

pub const KEYS: &[&str] = &[
    "mode",
    "backbone",
    "stem_channels",
    "stem_kernel",
    "stem_stride",
    "stage_channels",
    "blocks_per_stage",
    "fc_hidden",
    "crop_height",
    "crop_width",
    "resize_target",
    "diff_direction",
    "lambda",
    "l_init",
    "l_min",
    "epochs",
    "optimizer",
    "momentum",
    "weight_decay",
    "batch_size",
    "flip_prob",
    "swa",
    "seed",
    "init_weights",
];

fn parse_value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError {
        line,
        msg: format!("`{key}` has invalid value `{v}`"),
    })
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(ConfigError {
            line,
            msg: format!("`{key}` expects true or false, got `{v}`"),
        }),
    }
}

pub fn parse_config_text(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| ConfigError {
            line,
            msg: format!("expected key=value, got `{content}`"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        let Some(&key) = KEYS.iter().find(|&&known| known == k) else {
            return Err(ConfigError {
                line,
                msg: format!("unknown key `{k}`"),
            });
        };
        if let Some((first, _)) = entries.insert(key, (line, v)) {
            return Err(ConfigError {
                line,
                msg: format!("`{key}` already set on line {first}"),
            });
        }
    }

    let mode: Mode = match entries.get("mode") {
        Some(&(l, v)) => v.parse().map_err(|msg| ConfigError { line: l, msg })?,
        None => Mode::Nr,
    };
    let mut model = ModelConfig::micro(mode);
    if let Some(&(l, v)) = entries.get("backbone") {
        model = match v {
            "micro" => ModelConfig::micro(mode),
            "resnet18" => ModelConfig {
                backbone: BackboneConfig::resnet18(mode),
                fc_hidden: 1024,
                ..ModelConfig::micro(mode)
            },
            _ => {
                return Err(ConfigError {
                    line: l,
                    msg: format!("unknown backbone `{v}` (expected micro or resnet18)"),
                })
            }
        };
    }
    let mut cfg = TrainConfig::new(model);
    let mut init_weights = None;

    for (&key, &(l, v)) in &entries {
        let m = &mut cfg.model;
        match key {
            "mode" | "backbone" => {}
            "stem_channels" => m.backbone.stem_channels = parse_value(l, key, v)?,
            "stem_kernel" => m.backbone.stem_kernel = parse_value(l, key, v)?,
            "stem_stride" => m.backbone.stem_stride = parse_value(l, key, v)?,
            "stage_channels" => {
                m.backbone.stage_channels = v
                    .split(',')
                    .map(|s| parse_value(l, key, s.trim()))
                    .collect::<Result<_, _>>()?
            }
            "blocks_per_stage" => m.backbone.blocks_per_stage = parse_value(l, key, v)?,
            "fc_hidden" => m.fc_hidden = parse_value(l, key, v)?,
            "crop_height" => m.crop_height = parse_value(l, key, v)?,
            "crop_width" => m.crop_width = parse_value(l, key, v)?,
            "resize_target" => m.resize_target = parse_value(l, key, v)?,
            "diff_direction" => m.diff_direction = v.parse().map_err(|msg| ConfigError { line: l, msg })?,
            "lambda" => cfg.loss.lambda = parse_value(l, key, v)?,
            "l_init" => cfg.schedule.l_init = parse_value(l, key, v)?,
            "l_min" => cfg.schedule.l_min = parse_value(l, key, v)?,
            "epochs" => cfg.schedule.total_epochs = parse_value(l, key, v)?,
            "optimizer" => cfg.optimizer = Some(v.parse().map_err(|msg| ConfigError { line: l, msg })?),
            "momentum" => cfg.momentum = parse_value(l, key, v)?,
            "weight_decay" => cfg.weight_decay = parse_value(l, key, v)?,
            "batch_size" => cfg.batch_size = parse_value(l, key, v)?,
            "flip_prob" => cfg.flip_prob = parse_value(l, key, v)?,
            "swa" => cfg.swa = parse_bool(l, key, v)?,
            "seed" => cfg.seed = parse_value(l, key, v)?,
            "init_weights" => init_weights = Some(PathBuf::from(v)),
            _ => unreachable!("key list and match arms agree"),
        }
    }
    cfg.validate().map_err(|e| ConfigError {
        line: 0,
        msg: e.to_string(),
    })?;
    Ok(ConfigFile {
        train: cfg,
        init_weights,
    })
}
