//! `key = value` training-config files mirroring the hyperparameter surface.

use crate::error::{ChiError, Result};
use crate::train::{NoiseMode, TrainConfig};
use std::path::Path;

/// Parse a config file on top of the defaults. Lines are `key = value`;
/// `#` starts a comment; unknown keys are rejected by name.
pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            ChiError::Config(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        apply_key(&mut cfg, key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ChiError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_train_config(&text)
}

fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
        value
            .parse::<T>()
            .map_err(|_| ChiError::Config(format!("key '{key}': cannot parse value '{value}'")))
    }
    match key {
        "learning_rate" => cfg.learning_rate = num(key, value)?,
        "weight_decay" => cfg.weight_decay = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "epochs" => cfg.epochs = num(key, value)?,
        "noise_sigma" => cfg.noise_sigma = num(key, value)?,
        "noise_mode" => {
            cfg.noise_mode = match value {
                "per_pixel" => NoiseMode::PerPixel,
                "vector_norm" => NoiseMode::VectorNorm,
                other => {
                    return Err(ChiError::Config(format!(
                        "key 'noise_mode': unknown mode '{other}' (per_pixel|vector_norm)"
                    )))
                }
            }
        }
        "beta1" => cfg.beta1 = num(key, value)?,
        "beta2" => cfg.beta2 = num(key, value)?,
        "eps_adam" => cfg.eps_adam = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "normalise" | "normalize" => cfg.normalise = num::<bool>(key, value)?,
        "norm_momentum" => cfg.norm_momentum = num(key, value)?,
        "depth" => cfg.depth = num(key, value)?,
        "hidden_dim" => cfg.hidden_dim = num(key, value)?,
        "schedule" => {
            if value != "cosine" {
                return Err(ChiError::Config(format!(
                    "key 'schedule': only 'cosine' is supported, got '{value}'"
                )));
            }
        }
        "optimizer" | "optimiser" => {
            if value.to_ascii_lowercase() != "adamw" {
                return Err(ChiError::Config(format!(
                    "key '{key}': only 'adamw' is supported, got '{value}'"
                )));
            }
        }
        other => {
            return Err(ChiError::Config(format!("unknown config key '{other}'")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_overrides_and_comments() {
        let cfg = parse_train_config(
            "# comment\nlearning_rate = 0.01\nepochs = 5\nnoise_mode = vector_norm\nschedule = cosine\n",
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.noise_mode, NoiseMode::VectorNorm);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = parse_train_config("learning_rat = 0.01\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rat"), "{msg}");
    }

    #[test]
    fn bad_value_names_key() {
        let err = parse_train_config("epochs = many\n").unwrap_err();
        assert!(err.to_string().contains("epochs"));
    }

    #[test]
    fn defaults_match_paper_setup() {
        let cfg = parse_train_config("").unwrap();
        assert_eq!(cfg.learning_rate, 1e-3);
        assert_eq!(cfg.weight_decay, 1.0);
        assert_eq!(cfg.batch_size, 2048);
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.noise_sigma, 0.3);
    }
}
