//! Outcome regressions and propensity models.

mod kernel;
mod logistic;

use serde::{Deserialize, Serialize};

pub use kernel::{
    silverman_bandwidth, Bandwidth, KernelPrediction, KernelRegressor, KnnRegressor, ModelDump,
};
pub use logistic::{LogisticModel, LogisticOptions, PropensityFeatures, PropensityModel, EPS_P};

use crate::error::Result;
use crate::points::Points;

/// Hyperparameters of an outcome smoother, fitted once per arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SmootherSpec {
    Kernel { bandwidth: Bandwidth },
    Knn { k: usize },
}

impl Default for SmootherSpec {
    fn default() -> Self {
        SmootherSpec::Kernel {
            bandwidth: Bandwidth::Auto,
        }
    }
}

impl SmootherSpec {
    pub fn fit(&self, x: Points, y: Vec<f64>) -> Result<Smoother> {
        Ok(match self {
            SmootherSpec::Kernel { bandwidth } => {
                Smoother::Kernel(KernelRegressor::fit(x, y, bandwidth)?)
            }
            SmootherSpec::Knn { k } => Smoother::Knn(KnnRegressor::fit(x, y, *k)?),
        })
    }
}

/// A fitted outcome regression `x -> E[Y | X = x]`.
#[derive(Debug, Clone)]
pub enum Smoother {
    Kernel(KernelRegressor),
    Knn(KnnRegressor),
}

impl Smoother {
    pub fn dim(&self) -> usize {
        match self {
            Smoother::Kernel(m) => m.dim(),
            Smoother::Knn(m) => m.dim(),
        }
    }

    /// Prediction plus whether a nearest-neighbor fallback was used.
    pub fn predict_flagged(&self, x: &[f64]) -> (f64, bool) {
        match self {
            Smoother::Kernel(m) => {
                let p = m.predict(x);
                (p.value, p.fallback)
            }
            Smoother::Knn(m) => (m.predict(x), false),
        }
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.predict_flagged(x).0
    }

    pub fn dump(&self) -> ModelDump {
        match self {
            Smoother::Kernel(m) => m.dump(),
            Smoother::Knn(m) => m.dump(),
        }
    }
}
