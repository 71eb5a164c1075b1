//! Learning the map Γ from consecutive reservoir states back to the driving
//! input (or out to the hidden full state): PCA change of basis, dataset
//! assembly, a from-scratch MLP with adaptive-moment training, and a
//! closed-form ridge baseline.

pub mod dataset;
pub mod mlp;
pub mod pca;
pub mod ridge;

use std::path::Path;

use ndarray::{Array1, ArrayView1};
use serde::{Deserialize, Serialize};

pub use dataset::{make_dataset, TargetKind, TrainSet};
pub use mlp::{
    init_regressor, train_regressor, training_log_smooth_ok, Activation, Architecture, Layer,
    OptimizerConfig, Regressor,
};
pub use pca::{fit_pca, fit_pca_rows, PcaBasis};
pub use ridge::{fit_ridge, normal_equation_residual, ridge_objective};

use crate::error::{Error, Result};

/// Serialization format version for [`ReadoutModel`] files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained readout: the composition Γ(x_prev, x_cur) =
/// regressor(Pᵀx_prev, Pᵀx_cur), together with what it was trained to
/// predict and the scale its targets were multiplied by.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReadoutModel {
    #[serde(default = "default_version")]
    pub version: u32,
    pub basis: PcaBasis,
    pub regressor: Regressor,
    pub target_kind: TargetKind,
    pub target_scale: f64,
    /// Hash of the experiment config this model was trained under, when
    /// saved from a pipeline run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn default_version() -> u32 {
    MODEL_FORMAT_VERSION
}

impl ReadoutModel {
    pub fn new(
        basis: PcaBasis,
        regressor: Regressor,
        target_kind: TargetKind,
        target_scale: f64,
    ) -> Result<Self> {
        if regressor.input_dim() != 2 * basis.n() {
            return Err(Error::DimensionMismatch {
                expected: 2 * basis.n(),
                got: regressor.input_dim(),
            });
        }
        Ok(ReadoutModel {
            version: MODEL_FORMAT_VERSION,
            basis,
            regressor,
            target_kind,
            target_scale,
            config_hash: None,
        })
    }

    /// Γ(x_prev, x_cur): project both states and evaluate the regressor on
    /// the stacked coordinates. Pure; safe to call concurrently.
    pub fn apply_gamma(
        &self,
        x_prev: ArrayView1<'_, f64>,
        x_cur: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        let n = self.basis.n();
        let z_prev = self.basis.project(x_prev)?;
        let z_cur = self.basis.project(x_cur)?;
        let mut features = Array1::zeros(2 * n);
        features.slice_mut(ndarray::s![..n]).assign(&z_prev);
        features.slice_mut(ndarray::s![n..]).assign(&z_cur);
        self.regressor.forward(features.view())
    }

    pub fn output_dim(&self) -> usize {
        self.regressor.output_dim()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("numeric fields only")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: ReadoutModel = serde_json::from_str(text)?;
        if model.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported model format version {}",
                model.version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Free-function form of [`ReadoutModel::apply_gamma`].
pub fn apply_gamma(
    model: &ReadoutModel,
    x_prev: ArrayView1<'_, f64>,
    x_cur: ArrayView1<'_, f64>,
) -> Result<Array1<f64>> {
    model.apply_gamma(x_prev, x_cur)
}
