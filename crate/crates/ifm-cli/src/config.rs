//! Config file loading: TOML with training keys at the top level and an
//! optional `[data]` table. Command-line flags are applied afterwards and win.

use std::path::{Path, PathBuf};

use ifm::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files (plain or gzipped).
    pub mnist_dir: PathBuf,
    /// `procedural`, or a directory of texture images.
    pub textures: String,
    pub seed: u64,
    /// Built bundle read by `train`, `eval` and `report`.
    pub bundle_dir: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mnist_dir: std::env::var_os("IFM_MNIST_DIR")
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from("data/mnist")),
            textures: "procedural".into(),
            seed: 0,
            bundle_dir: PathBuf::from("data"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| e.to_string())?;
        let data = match table.remove("data") {
            Some(v) => v.try_into::<DataConfig>().map_err(|e| format!("[data]: {e}"))?,
            None => DataConfig::default(),
        };
        let rest = toml::to_string(&table).map_err(|e| e.to_string())?;
        Ok(Self {
            train: TrainConfig::from_toml(&rest)?,
            data,
        })
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    }

    /// Every effective value, in the same format [`RunConfig::parse`] reads.
    /// Fails only for values TOML cannot hold (integers above `i64::MAX`).
    pub fn to_toml(&self) -> Result<String, CliError> {
        let bad = |e: toml::ser::Error| CliError::Input(format!("configuration not representable: {e}"));
        let mut table = toml::Table::try_from(&self.train).map_err(bad)?;
        table.insert("data".into(), toml::Value::try_from(&self.data).map_err(bad)?);
        toml::to_string(&table).map_err(bad)
    }
}
