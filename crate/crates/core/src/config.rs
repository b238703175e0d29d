//! Scenario configuration files.
//!
//! Configs are JSON objects with a `"version": 1` schema key; every field
//! except `scenario` has a default and unknown keys are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::scenarios::ScenarioConfig;

pub fn parse_config_str(text: &str) -> Result<ScenarioConfig> {
    let cfg: ScenarioConfig = serde_json::from_str(text)
        .map_err(|e| Error::Config(format!("line {}, column {}: {e}", e.line(), e.column())))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text)
}

pub fn to_json(cfg: &ScenarioConfig) -> String {
    serde_json::to_string_pretty(cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::ScenarioId;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config_str(r#"{"scenario": "slam"}"#).unwrap();
        assert_eq!(cfg, ScenarioConfig::new(ScenarioId::Slam));
    }

    #[test]
    fn zero_step_names_the_field() {
        let err = parse_config_str(r#"{"scenario": "slam", "step": 0}"#).unwrap_err();
        assert!(err.to_string().contains("step"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(parse_config_str(r#"{"scenario": "slam", "stpe": 0.1}"#).is_err());
        assert!(parse_config_str(r#"{"scenario": "slam", "observer": {"qz": 1}}"#).is_err());
    }

    #[test]
    fn round_trip() {
        let mut cfg = ScenarioConfig::new(ScenarioId::RotatingEarth);
        cfg.step = 0.1 + 0.2;
        cfg.observer.lambda = 1.0 / 3.0;
        cfg.landmarks = Some(vec![[1.0, 2.0, 3.0]; 4]);
        let again = parse_config_str(&to_json(&cfg)).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(parse_config_str(r#"{"version": 2, "scenario": "slam"}"#).is_err());
    }
}
