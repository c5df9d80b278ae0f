use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{nearest_indices, Points};
use crate::univariate::mean_sd;

/// Bandwidth specification for [`KernelRegressor::fit`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bandwidth {
    /// Silverman's rule per column: `1.06 s_d m^{-1/5}`.
    #[default]
    Auto,
    /// Same bandwidth for every column.
    Scalar(f64),
    /// One bandwidth per column.
    PerColumn(Vec<f64>),
}

/// Nadaraya-Watson regression with a product Gaussian kernel.
#[derive(Debug, Clone)]
pub struct KernelRegressor {
    x: Points,
    y: Vec<f64>,
    h: Vec<f64>,
}

/// One kernel prediction. `fallback` is set when the kernel weights
/// underflowed and the nearest training outcome was used instead.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelPrediction {
    pub value: f64,
    pub fallback: bool,
}

const UNDERFLOW: f64 = 1e-300;

/// Silverman's rule-of-thumb bandwidth for every column of `x`.
pub fn silverman_bandwidth(x: &Points) -> Result<Vec<f64>> {
    let m = x.len() as f64;
    (0..x.dim())
        .map(|j| {
            let (_, sd) = mean_sd(&x.column(j));
            if sd > 0.0 {
                Ok(1.06 * sd * m.powf(-0.2))
            } else {
                Err(Error::ZeroVariance(format!(
                    "column {j} has zero variance; automatic bandwidth is undefined"
                )))
            }
        })
        .collect()
}

impl KernelRegressor {
    pub fn fit(x: Points, y: Vec<f64>, bandwidth: &Bandwidth) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if x.len() < 2 {
            return Err(Error::invalid(
                "kernel regression needs at least 2 training points",
            ));
        }
        let h = match bandwidth {
            Bandwidth::Auto => silverman_bandwidth(&x)?,
            Bandwidth::Scalar(h) => vec![*h; x.dim()],
            Bandwidth::PerColumn(h) => {
                if h.len() != x.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: x.dim(),
                        got: h.len(),
                    });
                }
                h.clone()
            }
        };
        if h.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
            return Err(Error::invalid("bandwidths must be positive and finite"));
        }
        Ok(KernelRegressor { x, y, h })
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.h
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn predict(&self, q: &[f64]) -> KernelPrediction {
        let inv_h: Vec<f64> = self.h.iter().map(|h| 1.0 / h).collect();
        let (mut num, mut den) = (0.0, 0.0);
        for (row, &y) in self.x.rows().zip(&self.y) {
            let mut z2 = 0.0;
            for ((a, b), s) in row.iter().zip(q).zip(&inv_h) {
                let z = (a - b) * s;
                z2 += z * z;
            }
            let w = (-0.5 * z2).exp();
            num += w * y;
            den += w;
        }
        if den < UNDERFLOW {
            let nn = nearest_indices(&self.x, q, 1)[0];
            return KernelPrediction {
                value: self.y[nn],
                fallback: true,
            };
        }
        // Clamp guards the convex-combination bound against rounding.
        let (lo, hi) = self.outcome_range();
        KernelPrediction {
            value: (num / den).clamp(lo, hi),
            fallback: false,
        }
    }

    pub fn predict_value(&self, q: &[f64]) -> f64 {
        self.predict(q).value
    }

    fn outcome_range(&self) -> (f64, f64) {
        self.y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump::Kernel {
            kernel: "gaussian".into(),
            bandwidth: self.h.clone(),
            training_rows: self.x.len(),
        }
    }
}

/// Unweighted mean of the `k` nearest training outcomes (Euclidean distance,
/// ties to the smaller training index).
#[derive(Debug, Clone)]
pub struct KnnRegressor {
    x: Points,
    y: Vec<f64>,
    k: usize,
}

impl KnnRegressor {
    pub fn fit(x: Points, y: Vec<f64>, k: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                got: y.len(),
            });
        }
        if k == 0 || k > x.len() {
            return Err(Error::invalid(format!(
                "k = {k} out of range for {} training points",
                x.len()
            )));
        }
        Ok(KnnRegressor { x, y, k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }

    pub fn predict(&self, q: &[f64]) -> f64 {
        let idx = nearest_indices(&self.x, q, self.k);
        idx.iter().map(|&i| self.y[i]).sum::<f64>() / self.k as f64
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump::Knn {
            k: self.k,
            distance: "euclidean".into(),
            training_rows: self.x.len(),
        }
    }
}

/// JSON description of a fitted smoother: hyperparameters plus a reference
/// to the training set (its size) or the fitted coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ModelDump {
    Kernel {
        kernel: String,
        bandwidth: Vec<f64>,
        training_rows: usize,
    },
    Knn {
        k: usize,
        distance: String,
        training_rows: usize,
    },
    Logistic {
        coefficients: Vec<f64>,
        iterations: usize,
        gradient_norm: f64,
    },
}
