//! `--config` TOML file. Each subcommand reads its own table; flags given on
//! the command line win over values here.

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// Backbone names as they appear in flags and config files.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    Cnn1d,
    Cnn2d,
    IqstS,
    IqstL,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub generate: Option<Generate>,
    pub train: Option<Train>,
    pub eval: Option<Eval>,
    pub infer: Option<Infer>,
    pub inspect: Option<Inspect>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generate {
    pub count: Option<u64>,
    pub seed: Option<u64>,
    pub snr_min: Option<i32>,
    pub snr_max: Option<i32>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Train {
    pub dataset: Option<PathBuf>,
    pub model: Option<ModelArg>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub weights: Option<Vec<f64>>,
    pub out: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Eval {
    pub checkpoint: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Infer {
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inspect {
    pub dataset: Option<PathBuf>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text).map_err(|msg| ConfigError::Parse {
            path: path.to_path_buf(),
            msg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_are_optional() {
        let c = FileConfig::parse("[train]\nepochs = 3\nmodel = \"iqst-s\"\nweights = [0.1, 0.2, 0.2, 0.2, 0.3]\n").unwrap();
        let t = c.train.unwrap();
        assert_eq!(t.epochs, Some(3));
        assert_eq!(t.model, Some(ModelArg::IqstS));
        assert!(c.generate.is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FileConfig::parse("[train]\nepoch = 3\n").is_err());
        assert!(FileConfig::parse("[nope]\n").is_err());
    }
}
