//! Model, parameter-vector and example types.

mod mlp;
mod param;

pub use mlp::{softmax, MlpModel};
pub use param::ParamVector;

use serde::{Deserialize, Serialize};

/// One labelled stream element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    /// Unique within a stream; the single-pass instrumentation keys on it.
    pub id: u64,
    /// Normalized pixel intensities in `[0, 1]` or synthetic feature values.
    pub features: Vec<f64>,
    /// Class index in `[0, num_classes)`.
    pub label: usize,
}

impl Example {
    pub fn new(id: u64, features: Vec<f64>, label: usize) -> Self {
        Self {
            id,
            features,
            label,
        }
    }
}
