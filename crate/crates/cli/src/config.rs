use std::fs;
use std::path::{Path, PathBuf};

use dlab_core::data::{generate, Dataset, FactorSpec};
use dlab_core::exec::Execution;
use dlab_core::model::{ModelConfig, TrainConfig, Variant, DEFAULT_HIDDEN};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const RESOLVED_CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    /// A DTNS1 dataset written by `dlab generate`.
    File(PathBuf),
    Synthetic {
        spec: FactorSpec,
        width: usize,
        height: usize,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            spec: FactorSpec::standard(),
            width: 16,
            height: 16,
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset, CliError> {
        Ok(match self {
            DatasetSource::File(path) => Dataset::load(path)?,
            DatasetSource::Synthetic { spec, width, height } => generate(spec, *width, *height, Execution::Parallel)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub latent_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    pub variant: Variant,
}

fn default_hidden() -> usize {
    DEFAULT_HIDDEN
}

/// What `dlab train --config` reads. The input dimension comes from the
/// dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub dataset: DatasetSource,
    pub model: ModelSection,
    pub train: TrainConfig,
}

/// Every setting of a run spelled out; echoed into the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub dataset: DatasetSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Parses JSON, reporting the path of the offending field on failure.
pub fn parse_json<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        CliError::Config {
            field,
            reason: e.into_inner().to_string(),
        }
    })
}

fn prefixed(prefix: &str, e: dlab_core::Error) -> CliError {
    match e {
        dlab_core::Error::Config { field, reason } => CliError::Config {
            field: format!("{prefix}.{field}"),
            reason,
        },
        other => other.into(),
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig = parse_json(&text)?;
        if let DatasetSource::File(p) = &mut cfg.dataset {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Loads the dataset and checks every field against it.
    pub fn resolve(self) -> Result<(ResolvedConfig, Dataset), CliError> {
        let data = self.dataset.load().map_err(|e| match e {
            CliError::Core(inner) => prefixed("dataset", inner),
            other => other,
        })?;
        let model = ModelConfig {
            input_dim: data.pixels(),
            latent_dim: self.model.latent_dim,
            hidden: self.model.hidden,
            variant: self.model.variant,
        };
        model.validate().map_err(|e| prefixed("model", e))?;
        self.train.validate(data.len()).map_err(|e| prefixed("train", e))?;
        let dataset = match self.dataset {
            DatasetSource::File(p) => DatasetSource::File(fs::canonicalize(&p).unwrap_or(p)),
            s => s,
        };
        Ok((
            ResolvedConfig {
                dataset,
                model,
                train: self.train,
            },
            data,
        ))
    }
}
