//! TOML config files. Keys at the top level override [`RunConfig`] fields;
//! a `[grpo]` table overrides the trainer settings. Values in the file win
//! over command-line flags.

use poinav_core::rlvr::GrpoConfig;
use poinav_core::RunConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::Path;
use thiserror::Error;
use toml::{Table, Value};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: String, message: String },
}

/// Parsed config file, kept as raw tables until merged.
#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    run: Table,
    grpo: Table,
    path: String,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: shown.clone(),
            source,
        })?;
        Self::parse(&text, &shown)
    }

    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut run: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        let grpo = match run.remove("grpo") {
            None => Table::new(),
            Some(Value::Table(t)) => t,
            Some(_) => {
                return Err(ConfigError::Parse {
                    path: path.to_string(),
                    message: "`grpo` must be a table".into(),
                })
            }
        };
        Ok(Self {
            run,
            grpo,
            path: path.to_string(),
        })
    }

    pub fn apply_run(&self, base: &RunConfig) -> Result<RunConfig, ConfigError> {
        overlay(base, &self.run, &self.path)
    }

    pub fn apply_grpo(&self, base: &GrpoConfig) -> Result<GrpoConfig, ConfigError> {
        overlay(base, &self.grpo, &self.path)
    }
}

fn merge(into: &mut Table, from: &Table) {
    for (k, v) in from {
        match (into.get_mut(k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            _ => {
                into.insert(k.clone(), v.clone());
            }
        }
    }
}

fn overlay<T: Serialize + DeserializeOwned>(base: &T, over: &Table, path: &str) -> Result<T, ConfigError> {
    let err = |message: String| ConfigError::Parse {
        path: path.to_string(),
        message,
    };
    let mut table = Table::try_from(base).map_err(|e| err(e.to_string()))?;
    merge(&mut table, over);
    Value::Table(table).try_into().map_err(|e: toml::de::Error| err(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use poinav_core::PolicyKind;

    #[test]
    fn file_values_win_and_nested_tables_merge() {
        let base = RunConfig {
            seed: 3,
            tau_choice: 5,
            ..Default::default()
        };
        let f = ConfigFile::parse(
            "tau_choice = 6\npolicy = \"nearest-frontier\"\n[remote]\nmodel = \"m\"\n[grpo]\ngroup_size = 4\n",
            "t.toml",
        )
        .unwrap();
        let cfg = f.apply_run(&base).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.tau_choice, 6);
        assert_eq!(cfg.policy, PolicyKind::NearestFrontier);
        assert_eq!(cfg.remote.model, "m");
        assert_eq!(cfg.remote.endpoint, base.remote.endpoint);
        assert_eq!(f.apply_grpo(&GrpoConfig::default()).unwrap().group_size, 4);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let f = ConfigFile::parse("tau_chioce = 6\n", "t.toml").unwrap();
        assert!(f.apply_run(&RunConfig::default()).is_err());
    }
}
