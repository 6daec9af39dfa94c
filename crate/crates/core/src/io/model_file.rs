//! Versioned JSON model files.
//!
//! Floats are written in shortest round-trip form, so loading a saved model
//! reproduces `c₀`, `C` and `σ` bit for bit. Loading rebuilds the basis,
//! recomputes `J` and `Ω`, and rejects parameters that are not canonical.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, BasisSystem};
use crate::domain::ObservationDomain;
use crate::error::{Error, Result};
use crate::estimation::FitResult;
use crate::model::{ModelParams, ModelSpace};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Tolerance for `‖CᵀJC − I‖_max` on load.
pub const ORTHONORMALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitMetadata {
    pub nu1: f64,
    pub nu2: f64,
    pub p: usize,
    pub draws: usize,
    pub eval_draws: usize,
    pub seed: u64,
    pub objective: f64,
    pub converged: bool,
}

impl FitMetadata {
    pub fn from_fit(fit: &FitResult) -> Self {
        let c = &fit.config;
        FitMetadata {
            nu1: c.nu1,
            nu2: c.nu2,
            p: c.p,
            draws: c.draws,
            eval_draws: c.eval_draws,
            seed: c.seed,
            objective: fit.objective,
            converged: fit.converged,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: u32,
    pub domain: ObservationDomain,
    pub basis: BasisSpec,
    /// Quadrature resolution the model was fitted with.
    pub resolution: usize,
    pub c0: Vec<f64>,
    /// Columns of `C`.
    pub components: Vec<Vec<f64>>,
    pub sigma: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitMetadata>,
}

/// A validated model ready for use.
#[derive(Debug, Clone)]
pub struct LoadedModel {
    pub space: ModelSpace,
    pub theta: ModelParams,
    pub fit: Option<FitMetadata>,
}

impl ModelFile {
    pub fn new(theta: &ModelParams, space: &ModelSpace, fit: Option<FitMetadata>) -> Self {
        ModelFile {
            format_version: MODEL_FORMAT_VERSION,
            domain: space.basis().domain().clone(),
            basis: space.basis().spec(),
            resolution: space.resolution(),
            c0: theta.c0.iter().cloned().collect(),
            components: theta.c.column_iter().map(|c| c.iter().cloned().collect()).collect(),
            sigma: theta.sigma.iter().cloned().collect(),
            fit,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::ModelFile(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        // Check the version before the schema so old files get a clear message.
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ModelFile(e.to_string()))?;
        match raw.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == MODEL_FORMAT_VERSION as u64 => {}
            Some(v) => {
                return Err(Error::ModelFile(format!(
                    "unsupported format version {v} (expected {MODEL_FORMAT_VERSION})"
                )))
            }
            None => return Err(Error::ModelFile("missing format_version".into())),
        }
        serde_json::from_value(raw).map_err(|e| Error::ModelFile(e.to_string()))
    }

    /// Rebuilds the basis and quadrature and validates the parameters.
    pub fn into_model(self) -> Result<LoadedModel> {
        let basis = BasisSystem::from_spec(&self.basis, self.domain)?;
        let space = ModelSpace::new(basis, self.resolution)?;
        let q = self.c0.len();
        if let Some(k) = self.components.iter().position(|c| c.len() != q) {
            return Err(Error::ModelFile(format!("component {} has the wrong length", k + 1)));
        }
        let c = DMatrix::from_fn(q, self.components.len(), |i, k| self.components[k][i]);
        let theta = ModelParams::new(DVector::from_vec(self.c0), c, DVector::from_vec(self.sigma))
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        if theta.q() != space.q() {
            return Err(Error::ModelFile(format!(
                "model has q = {} but its basis has q = {}",
                theta.q(),
                space.q()
            )));
        }
        theta
            .check_canonical(space.gram(), ORTHONORMALITY_TOLERANCE)
            .map_err(|e| Error::ModelFile(e.to_string()))?;
        Ok(LoadedModel {
            space,
            theta,
            fit: self.fit,
        })
    }
}

pub fn save_model(path: impl AsRef<Path>, theta: &ModelParams, space: &ModelSpace, fit: Option<FitMetadata>) -> Result<()> {
    let mut text = ModelFile::new(theta, space, fit).to_json()?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LoadedModel> {
    ModelFile::from_json(&std::fs::read_to_string(path)?)?.into_model()
}
