use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::vae::{ModelConfig, VaeModel};
use crate::error::{Error, Result};
use crate::linalg::io::{load_tensors, save_tensors};
use crate::projection::{EpsilonRule, ProjectionState, StatsMode};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMS_FILE: &str = "params.dtns";
pub const PROJECTION_FILE: &str = "projection.dtns";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionManifest {
    pub epsilon_rule: EpsilonRule,
    pub epsilon: f64,
    pub mode: StatsMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: ModelConfig,
    pub seed: u64,
    pub epoch: usize,
    /// Parameter names in the order stored in `params.dtns`.
    pub params: Vec<String>,
    pub projection: Option<ProjectionManifest>,
}

/// Writes `manifest.json`, `params.dtns` and, when the model carries
/// projection statistics, `projection.dtns` (mean, covariance, then the
/// oriented principal axes).
pub fn save_checkpoint(dir: impl AsRef<Path>, model: &VaeModel, seed: u64, epoch: usize) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let projection = model.projection_state().map(|s| ProjectionManifest {
        epsilon_rule: s.epsilon_rule(),
        epsilon: s.epsilon(),
        mode: s.mode(),
    });
    let manifest = Manifest {
        model: *model.config(),
        seed,
        epoch,
        params: model.param_names(),
        projection,
    };
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    save_tensors(dir.join(PARAMS_FILE), &model.params())?;
    let stats = dir.join(PROJECTION_FILE);
    match model.projection_state() {
        Some(s) => save_tensors(stats, &[s.mean(), s.covariance(), &s.eig().eigenvectors])?,
        None if stats.exists() => fs::remove_file(stats)?,
        None => {}
    }
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<(VaeModel, Manifest)> {
    let dir = dir.as_ref();
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST_FILE))?)?;
    let mut model = VaeModel::zeros(manifest.model)?;
    if manifest.params != model.param_names() {
        return Err(Error::Format("checkpoint parameter list does not match the model layout".into()));
    }
    model.set_params(load_tensors(dir.join(PARAMS_FILE))?)?;
    if let Some(p) = &manifest.projection {
        let mut stats = load_tensors(dir.join(PROJECTION_FILE))?.into_iter();
        let (Some(mu), Some(sigma), Some(axes), None) = (stats.next(), stats.next(), stats.next(), stats.next()) else {
            return Err(Error::Format("projection.dtns must hold a mean, a covariance and the principal axes".into()));
        };
        let mut state = ProjectionState::from_stats(mu, sigma, p.epsilon_rule, p.mode)?;
        state.align_to(&axes)?;
        model.set_projection_state(Some(state));
    }
    Ok((model, manifest))
}
