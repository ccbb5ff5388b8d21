//! Regressors mapping flattened depth stacks to received power in dBm.

mod features;
pub mod forest;
pub mod io;
pub mod mlp;

use thiserror::Error;

use crate::dataset::{Dataset, Dims, Tensor};

pub use features::{DenseMatrix, FeatureSource, WindowedColumns};
pub use forest::{predict_forest, train_forest, train_forest_on, ForestConfig, ForestModel};
pub use io::{read_model, read_model_file, write_model, write_model_file, ModelFormatError};
pub use mlp::{gradient_check, mlp_forward, train_mlp, MlpConfig, MlpModel, Samples, TrainingReport};

#[derive(Debug, Error, PartialEq)]
pub enum MlError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("expected {expected} features, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid hyperparameter `{0}`")]
    InvalidConfig(&'static str),
    #[error("training needs at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("feature source has {rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Forest,
    Mlp,
    Persistence,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Forest => "forest",
            ModelKind::Mlp => "mlp",
            ModelKind::Persistence => "persistence",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "forest" => Ok(ModelKind::Forest),
            "mlp" => Ok(ModelKind::Mlp),
            "persistence" => Ok(ModelKind::Persistence),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

/// A trained model that predicts from a flattened feature vector.
pub trait Regressor: Send + Sync {
    fn kind(&self) -> ModelKind;
    fn input_dim(&self) -> usize;
    fn predict(&self, x: &[f32]) -> Result<f64, MlError>;
}

/// Either trained model kind, as stored in model files.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Regressor for Model {
    fn kind(&self) -> ModelKind {
        match self {
            Model::Forest(_) => ModelKind::Forest,
            Model::Mlp(_) => ModelKind::Mlp,
        }
    }

    fn input_dim(&self) -> usize {
        match self {
            Model::Forest(m) => m.n_features(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    fn predict(&self, x: &[f32]) -> Result<f64, MlError> {
        match self {
            Model::Forest(m) => predict_forest(m, x),
            Model::Mlp(m) => mlp_forward(m, x),
        }
    }
}

/// Trains the configured model kind. The forest ignores the holdout set;
/// the MLP uses it for model selection.
pub fn train_model(
    kind: ModelKind,
    train: &Dataset,
    holdout: &Dataset,
    forest: &ForestConfig,
    mlp: &MlpConfig,
) -> Result<Model, MlError> {
    match kind {
        ModelKind::Forest => train_forest(train, forest).map(Model::Forest),
        ModelKind::Mlp => {
            let (m, _) = train_mlp(&Samples::from_dataset(train), &Samples::from_dataset(holdout), mlp)?;
            Ok(Model::Mlp(m))
        }
        ModelKind::Persistence => Err(MlError::InvalidConfig("persistence has no trainable model")),
    }
}

/// Flattens a stack time-major, then row-major: element `(j, r, c)` lands
/// at `j·h·w + r·w + c`.
pub fn flatten(tensor: &Tensor) -> Vec<f32> {
    let Dims { s, h, w } = tensor.dims;
    let mut out = vec![0.0; s * h * w];
    for j in 0..s {
        for r in 0..h {
            for c in 0..w {
                out[flat_index(tensor.dims, j, r, c)] = tensor.at(j, r, c);
            }
        }
    }
    out
}

pub fn flat_index(dims: Dims, j: usize, r: usize, c: usize) -> usize {
    j * dims.h * dims.w + r * dims.w + c
}

/// Inverse of [`flat_index`].
pub fn unflatten_index(dims: Dims, i: usize) -> (usize, usize, usize) {
    let hw = dims.h * dims.w;
    (i / hw, (i % hw) / dims.w, i % dims.w)
}

/// Naive forecast: the power `k` frames ahead equals the current power.
pub fn persistence_predict(current_dbm: f64) -> f64 {
    current_dbm
}

/// 64-bit mix of a seed and a stream index, used to derive independent
/// per-tree and per-node seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
