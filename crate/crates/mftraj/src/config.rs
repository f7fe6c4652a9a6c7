//! Flat `key = value` configuration text.
//!
//! One line per setting, `#` comments, no nesting. The same format
//! serves the CLI config file, the effective-config echo, and the
//! config block embedded in checkpoints, so any run can be reproduced
//! from its echoed configuration.

use crate::error::{MftrajError, Result};
use crate::model::ModelConfig;

/// Parses `key = value` lines; `#` starts a comment, blanks ignored.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            MftrajError::Config(format!(
                "config line {} is not 'key = value': '{}'",
                lineno + 1,
                raw.trim()
            ))
        })?;
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

macro_rules! config_fields {
    ($($key:ident : $kind:ident),+ $(,)?) => {
        /// Serializes every model setting, one per line, in a fixed order.
        pub fn model_config_to_kv(cfg: &ModelConfig) -> String {
            let mut s = String::new();
            $(
                s.push_str(&format!("{} = {}\n", stringify!($key), cfg.$key));
            )+
            s
        }

        /// Applies one `key = value` pair onto a config.
        pub fn apply_kv(cfg: &mut ModelConfig, key: &str, value: &str) -> Result<()> {
            match key {
                $(
                    stringify!($key) => {
                        cfg.$key = value.parse().map_err(|_| {
                            MftrajError::Config(format!(
                                "bad value '{}' for config key '{}'",
                                value, key
                            ))
                        })?;
                        Ok(())
                    }
                )+
                other => Err(MftrajError::Config(format!("unknown config key '{}'", other))),
            }
        }
    };
}

config_fields!(
    history_frames: usize,
    future_frames: usize,
    sample_rate_hz: f64,
    radius_m: f64,
    k_max: usize,
    katz_alpha_frac: f64,
    katz_beta: f64,
    instantaneous_degree: bool,
    hidden_dim: usize,
    latent_dim: usize,
    attention_heads: usize,
    proj_dim: usize,
    gn_groups: usize,
    n_max: usize,
    learning_rate: f64,
    late_learning_rate: f64,
    lr_switch_frac: f64,
    batch_size: usize,
    epochs: usize,
    seed: u64,
    beta_kl: f64,
    workers: usize,
    disable_behavior: bool,
    absolute_coords: bool,
    disable_interaction: bool,
    disable_linformer: bool,
    plain_gcn: bool,
    drop_all_agents: bool,
);

/// Builds a config from defaults plus `key = value` text.
pub fn model_config_from_kv(text: &str) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    for (key, value) in parse_kv(text)? {
        apply_kv(&mut cfg, &key, &value)?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_config() {
        let mut cfg = ModelConfig::default();
        cfg.hidden_dim = 16;
        cfg.seed = 99;
        cfg.plain_gcn = true;
        cfg.radius_m = 12.5;
        let text = model_config_to_kv(&cfg);
        let back = model_config_from_kv(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a comment\n\nhidden_dim = 32  # trailing\n";
        let cfg = model_config_from_kv(text).unwrap();
        assert_eq!(cfg.hidden_dim, 32);
    }

    #[test]
    fn unknown_key_is_config_error() {
        assert!(matches!(
            model_config_from_kv("no_such_key = 5"),
            Err(MftrajError::Config(_))
        ));
    }

    #[test]
    fn bad_value_is_config_error() {
        assert!(matches!(
            model_config_from_kv("hidden_dim = banana"),
            Err(MftrajError::Config(_))
        ));
    }
}
