//! TOML run configuration. Every key has a default; unknown keys are
//! rejected. A single top-level `seed` feeds data generation, network and
//! head initialization, and batch sampling.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coupling::HeadParams;
use crate::data::{DatasetFormat, SynthSpec};
use crate::eval::InterNormalization;
use crate::net::{self, Activation, LayerSpec};
use crate::ranking::RankingConfig;
use crate::trainer::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config syntax: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    /// Trunk layers, input first. The embedding width is the last layer's
    /// activated width.
    pub layers: Vec<LayerSpec>,
}

impl Default for NetSection {
    fn default() -> Self {
        Self {
            layers: vec![
                LayerSpec::new(64, 256, Activation::MaxFeatureMap),
                LayerSpec::new(128, 64, Activation::MaxFeatureMap),
            ],
        }
    }
}

impl NetSection {
    pub fn embedding_dim(&self) -> usize {
        self.layers.last().map_or(0, LayerSpec::activated_dim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FileFormat {
    /// `# cdl-dataset v1` files as written by `gen-data`.
    #[default]
    Native,
    /// Bare `label,modality,features...` rows.
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Generator settings used when no dataset files are given.
    pub synth: SynthSpec,
    /// Directory with `train.txt`, `gallery.txt` and `probe.txt`.
    pub dir: Option<PathBuf>,
    pub format: FileFormat,
    /// CSV files start with a header row.
    pub csv_header: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            synth: SynthSpec::default(),
            dir: None,
            format: FileFormat::Native,
            csv_header: false,
        }
    }
}

impl DataSection {
    pub fn dataset_format(&self) -> DatasetFormat {
        match self.format {
            FileFormat::Native => DatasetFormat::Native,
            FileFormat::Csv => DatasetFormat::Csv {
                has_header: self.csv_header,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// False accept rates at which the verification rate is reported.
    pub far_points: Vec<f64>,
    /// PCA dimensions for the scatter curve; empty means every dimension
    /// up to the rank of the embeddings.
    pub sigma_dims: Vec<usize>,
    pub inter_normalization: InterNormalization,
    /// Scatter statistics on unit-length embeddings (the space scores are
    /// computed in) rather than raw ones.
    pub normalize_embeddings: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            far_points: vec![0.001, 0.01],
            sigma_dims: Vec::new(),
            inter_normalization: InterNormalization::Samples,
            normalize_embeddings: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub net: NetSection,
    pub heads: HeadParams,
    pub ranking: RankingConfig,
    pub trainer: TrainConfig,
    pub data: DataSection,
    pub eval: EvalSection,
}

impl Default for Config {
    fn default() -> Self {
        let mut c = Self {
            seed: 7,
            net: NetSection::default(),
            heads: HeadParams::default(),
            ranking: RankingConfig::default(),
            trainer: TrainConfig::default(),
            data: DataSection::default(),
            eval: EvalSection::default(),
        };
        c.propagate();
        c
    }
}

impl Config {
    /// Parses, propagates shared settings into the module configs, and
    /// validates.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let mut c: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        c.propagate();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.propagate();
        self
    }

    fn propagate(&mut self) {
        self.trainer.seed = self.seed;
        self.trainer.heads = self.heads;
        self.trainer.ranking = self.ranking;
        self.data.synth.seed = self.seed;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        net::validate_specs(&self.net.layers).map_err(|e| invalid(&e))?;
        self.trainer.validate().map_err(|e| invalid(&e))?;
        self.data.synth.validate().map_err(|e| invalid(&e))?;
        if self.data.dir.is_none() && self.net.layers[0].input_dim != self.data.synth.input_dim {
            return Err(ConfigError::Invalid(format!(
                "net input_dim {} differs from data.synth.input_dim {}",
                self.net.layers[0].input_dim, self.data.synth.input_dim
            )));
        }
        if let Some(f) = self
            .eval
            .far_points
            .iter()
            .find(|f| !(**f > 0.0 && **f <= 1.0))
        {
            return Err(ConfigError::Invalid(format!(
                "eval.far_points must lie in (0, 1], found {f}"
            )));
        }
        if self.eval.sigma_dims.contains(&0) {
            return Err(ConfigError::Invalid(
                "eval.sigma_dims must be positive".into(),
            ));
        }
        Ok(())
    }
}
