//! Neural conditional density estimators and the shared model contract.

mod heads;
mod kmeans;
mod mlp;
mod neural;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CdeError, Result};
use crate::nonparametric::{BandwidthRule, CkdeModel, NkdeModel};

pub use heads::{nfn_transform, MDN_STD_FLOOR};
pub use kmeans::kmeans;
pub use mlp::Mlp;
pub use neural::{Head, NeuralModel, PointGradients};

/// A fitted estimate of `p(y | x)`.
pub trait CondDensityModel {
    fn x_dim(&self) -> usize;
    fn y_dim(&self) -> usize;

    /// Natural-log conditional density in the data's original units.
    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64>;

    fn cond_log_pdf_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        (0..data.len())
            .map(|i| self.cond_log_pdf(data.x_row(i), data.y_row(i)))
            .collect()
    }

    fn cond_sample(&self, _x: &[f64], _rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        Err(CdeError::Unsupported("this model cannot draw samples".into()))
    }
}

fn default_hidden() -> Vec<usize> {
    vec![32, 32]
}

fn default_mdn_components() -> usize {
    10
}

fn default_kmn_centers() -> usize {
    50
}

fn default_kmn_scales() -> Vec<f64> {
    vec![0.3, 0.7]
}

fn default_radial() -> usize {
    10
}

/// Model choice and architecture as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Mdn {
        #[serde(default = "default_mdn_components")]
        n_components: usize,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    Kmn {
        #[serde(default = "default_kmn_centers")]
        n_centers: usize,
        #[serde(default = "default_kmn_scales")]
        init_scales: Vec<f64>,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    Nfn {
        #[serde(default = "default_radial")]
        n_radial: usize,
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
    Ckde {
        #[serde(default)]
        bandwidth: BandwidthRule,
    },
    Nkde {
        /// Neighborhood radius in x; defaults to the rule-of-thumb bandwidth.
        #[serde(default)]
        epsilon: Option<f64>,
    },
}

impl ModelSpec {
    pub fn mdn() -> Self {
        ModelSpec::Mdn {
            n_components: default_mdn_components(),
            hidden: default_hidden(),
        }
    }

    pub fn kmn() -> Self {
        ModelSpec::Kmn {
            n_centers: default_kmn_centers(),
            init_scales: default_kmn_scales(),
            hidden: default_hidden(),
        }
    }

    pub fn nfn() -> Self {
        ModelSpec::Nfn {
            n_radial: default_radial(),
            hidden: default_hidden(),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Mdn { .. } => "mdn",
            ModelSpec::Kmn { .. } => "kmn",
            ModelSpec::Nfn { .. } => "nfn",
            ModelSpec::Ckde { .. } => "ckde",
            ModelSpec::Nkde { .. } => "nkde",
        }
    }

    pub fn is_neural(&self) -> bool {
        matches!(self, ModelSpec::Mdn { .. } | ModelSpec::Kmn { .. } | ModelSpec::Nfn { .. })
    }
}

pub const MODEL_FORMAT: &str = "cde-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Any fitted estimator, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Neural(NeuralModel),
    Ckde(CkdeModel),
    Nkde(NkdeModel),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDocument {
    format: String,
    version: u32,
    model: FittedModel,
}

impl FittedModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = ModelDocument {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_FORMAT_VERSION,
            model: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format != MODEL_FORMAT || doc.version != MODEL_FORMAT_VERSION {
            return Err(CdeError::invalid(format!(
                "unsupported model document {} v{}",
                doc.format, doc.version
            )));
        }
        Ok(doc.model)
    }

    fn inner(&self) -> &dyn CondDensityModel {
        match self {
            FittedModel::Neural(m) => m,
            FittedModel::Ckde(m) => m,
            FittedModel::Nkde(m) => m,
        }
    }
}

impl CondDensityModel for FittedModel {
    fn x_dim(&self) -> usize {
        self.inner().x_dim()
    }

    fn y_dim(&self) -> usize {
        self.inner().y_dim()
    }

    fn cond_log_pdf(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.inner().cond_log_pdf(x, y)
    }

    fn cond_log_pdf_batch(&self, data: &Dataset) -> Result<Vec<f64>> {
        self.inner().cond_log_pdf_batch(data)
    }

    fn cond_sample(&self, x: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>> {
        self.inner().cond_sample(x, rng)
    }
}
