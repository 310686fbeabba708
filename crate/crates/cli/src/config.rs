//! Config files and reproducibility sidecars.
//!
//! Precedence, lowest to highest: built-in defaults, the `--config` TOML
//! file, explicit command-line flags. Every artifact gets a
//! `<artifact>.config.toml` sidecar holding the fully resolved config; passing
//! that file back through `--config` reproduces the artifact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use liarwalk::training::{SplitSpec, TrainConfig};
use liarwalk::Error;

use crate::CliError;

/// Split and training settings shared by `train` and `ablate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub split: SplitSpec,
    pub train: TrainConfig,
}

impl RunConfig {
    /// One seed for the split, the batch order and the weight init.
    pub fn set_seed(&mut self, seed: u64) {
        self.split.seed = seed;
        self.train.seed = seed;
        self.train.model.seed = seed;
    }
}

/// Parsed config file plus whether it pinned a seed at `seed_path`.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>, seed_path: &[&str]) -> Result<(T, bool), CliError> {
    let Some(path) = path else {
        return Ok((T::default(), false));
    };
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: toml::Table = text
        .parse()
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    let mut node = Some(&value);
    let mut has_seed = false;
    for (i, key) in seed_path.iter().enumerate() {
        match node.and_then(|t| t.get(*key)) {
            Some(toml::Value::Table(t)) => node = Some(t),
            Some(_) if i + 1 == seed_path.len() => has_seed = true,
            _ => node = None,
        }
    }
    let cfg = T::deserialize(toml::Value::Table(value)).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    Ok((cfg, has_seed))
}

pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_owned();
    name.push(".config.toml");
    PathBuf::from(name)
}

/// Writes `<artifact>.config.toml` with a comment header naming the command
/// and its inputs.
pub fn write_sidecar<T: Serialize>(artifact: &Path, command: &str, inputs: &[(&str, String)], cfg: &T) -> Result<(), CliError> {
    let body = toml::to_string(cfg).map_err(|e| CliError::runtime(format!("cannot serialize config: {e}")))?;
    let mut text = format!("# liarwalk {command}\n");
    for (k, v) in inputs {
        text.push_str(&format!("# {k} = {v}\n"));
    }
    text.push('\n');
    text.push_str(&body);
    let path = sidecar_path(artifact);
    fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}
