use nalgebra::{DMatrix, DVector};

use super::kernel::ModelDump;
use crate::data::ObservationalDataset;
use crate::error::{Error, Result};
use crate::points::Points;

/// Predicted probabilities are clipped into `[EPS_P, 1 - EPS_P]`.
pub const EPS_P: f64 = 1e-6;

const SEPARATION_NORM: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticOptions {
    /// Per-observation weights (e.g. inverse propensities).
    pub weights: Option<Vec<f64>>,
    /// L2 penalty on the slopes; 0 disables it.
    pub ridge: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticOptions {
    fn default() -> Self {
        LogisticOptions {
            weights: None,
            ridge: 0.0,
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

/// Logistic regression coefficients (intercept first) fitted by IRLS.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    coefficients: Vec<f64>,
    iterations: usize,
    gradient_norm: f64,
    converged: bool,
    log_likelihood: Vec<f64>,
    covariance: Vec<f64>,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

struct Design<'a> {
    /// Row-major with a leading column of ones.
    x: &'a [f64],
    p: usize,
    y: &'a [f64],
    w: Vec<f64>,
}

impl Design<'_> {
    fn rows(&self) -> impl Iterator<Item = (&[f64], f64, f64)> + '_ {
        self.x
            .chunks_exact(self.p)
            .zip(self.y)
            .zip(&self.w)
            .map(|((r, &y), &w)| (r, y, w))
    }

    fn eta(row: &[f64], beta: &[f64]) -> f64 {
        row.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    /// Penalized weighted log-likelihood.
    fn log_likelihood(&self, beta: &[f64], ridge: f64) -> f64 {
        let ll: f64 = self
            .rows()
            .map(|(r, y, w)| {
                let z = Self::eta(r, beta);
                w * (y * z - softplus(z))
            })
            .sum();
        ll - 0.5 * ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    fn gradient_hessian(&self, beta: &[f64], ridge: f64) -> (DVector<f64>, DMatrix<f64>) {
        let p = self.p;
        let mut g = DVector::zeros(p);
        let mut h = DMatrix::zeros(p, p);
        for (r, y, w) in self.rows() {
            let mu = sigmoid(Self::eta(r, beta));
            let resid = w * (y - mu);
            let curv = w * mu * (1.0 - mu);
            for a in 0..p {
                g[a] += resid * r[a];
                for b in a..p {
                    h[(a, b)] += curv * r[a] * r[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                h[(a, b)] = h[(b, a)];
            }
        }
        for a in 1..p {
            g[a] -= ridge * beta[a];
            h[(a, a)] += ridge;
        }
        (g, h)
    }
}

impl LogisticModel {
    /// Fits `P(y = 1 | x) = sigmoid(b0 + x . b)`.
    pub fn fit(x: &Points, y: &[f64], options: &LogisticOptions) -> Result<Self> {
        let mut design = Vec::with_capacity(x.len() * (x.dim() + 1));
        for row in x.rows() {
            design.push(1.0);
            design.extend_from_slice(row);
        }
        Self::fit_design(&design, x.dim() + 1, y, options)
    }

    /// Intercept-only model.
    pub fn fit_intercept(y: &[f64], options: &LogisticOptions) -> Result<Self> {
        Self::fit_design(&vec![1.0; y.len()], 1, y, options)
    }

    fn fit_design(x: &[f64], p: usize, y: &[f64], options: &LogisticOptions) -> Result<Self> {
        let m = y.len();
        if x.len() != m * p {
            return Err(Error::DimensionMismatch {
                expected: m * p,
                got: x.len(),
            });
        }
        if m <= p {
            return Err(Error::invalid(format!(
                "logistic regression needs more than {p} rows, got {m}"
            )));
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::invalid("logistic outcomes must be 0 or 1"));
        }
        if !y.contains(&0.0) || !y.contains(&1.0) {
            return Err(Error::invalid("logistic regression needs both classes"));
        }
        let w = match &options.weights {
            Some(w) if w.len() != m => {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: w.len(),
                })
            }
            Some(w) if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => {
                return Err(Error::invalid(
                    "observation weights must be finite and nonnegative",
                ))
            }
            Some(w) => w.clone(),
            None => vec![1.0; m],
        };
        let d = Design { x, p, y, w };
        let ridge = options.ridge.max(0.0);
        // Convergence is judged on the gradient of the mean log-likelihood,
        // so the tolerance does not scale with the row count.
        let scale = 1.0 / d.w.iter().sum::<f64>().max(f64::MIN_POSITIVE);

        let mut beta = vec![0.0; p];
        let mut ll = d.log_likelihood(&beta, ridge);
        let mut trace = vec![ll];
        let mut converged = false;
        let mut iterations = 0;
        let mut grad_norm;
        loop {
            let (g, h) = d.gradient_hessian(&beta, ridge);
            grad_norm = g.norm() * scale;
            if grad_norm <= options.tol {
                converged = true;
                break;
            }
            if iterations == options.max_iter {
                break;
            }
            let step = h
                .cholesky()
                .ok_or_else(|| Error::Numerical("singular IRLS normal equations".into()))?
                .solve(&g);
            // Step halving keeps the likelihood non-decreasing.
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = beta
                    .iter()
                    .zip(step.iter())
                    .map(|(b, s)| b + t * s)
                    .collect();
                let cand_ll = d.log_likelihood(&cand, ridge);
                if cand_ll >= ll {
                    beta = cand;
                    ll = cand_ll;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            iterations += 1;
            trace.push(ll);
            let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
            if norm > SEPARATION_NORM {
                return Err(Error::Separation(norm));
            }
            if !accepted {
                // No ascent direction left at machine precision.
                converged = grad_norm <= options.tol.sqrt();
                break;
            }
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if !converged && norm > SEPARATION_NORM / 10.0 {
            return Err(Error::Separation(norm));
        }
        // Without a penalty a perfectly classifying beta can always be scaled
        // up, so no finite maximizer exists.
        if ridge == 0.0
            && p > 1
            && d.rows()
                .all(|(r, y, w)| w == 0.0 || (2.0 * y - 1.0) * Design::eta(r, &beta) > 0.0)
        {
            return Err(Error::Separation(norm));
        }
        if !converged {
            log::warn!("IRLS stopped after {iterations} iterations, gradient norm {grad_norm:e}");
        }
        let (_, h) = d.gradient_hessian(&beta, ridge);
        let covariance = h
            .try_inverse()
            .map(|inv| inv.iter().copied().collect())
            .unwrap_or_else(|| vec![f64::NAN; p * p]);
        Ok(LogisticModel {
            coefficients: beta,
            iterations,
            gradient_norm: grad_norm,
            converged,
            log_likelihood: trace,
            covariance,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    /// Gradient norm of the mean log-likelihood at the returned coefficients.
    pub fn gradient_norm(&self) -> f64 {
        self.gradient_norm
    }

    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Log-likelihood after each iteration (entry 0 is the start at `beta = 0`).
    pub fn log_likelihood_trace(&self) -> &[f64] {
        &self.log_likelihood
    }

    /// Asymptotic standard errors from the inverse observed information.
    pub fn standard_errors(&self) -> Vec<f64> {
        let p = self.coefficients.len();
        (0..p).map(|a| self.covariance[a * p + a].sqrt()).collect()
    }

    /// Unclipped linear predictor `b0 + x . b`.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self.coefficients[1..]
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }

    /// `P(y = 1 | x)` clipped into `[1e-6, 1 - 1e-6]`.
    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear_predictor(x)).clamp(EPS_P, 1.0 - EPS_P)
    }

    pub fn dump(&self) -> ModelDump {
        ModelDump::Logistic {
            coefficients: self.coefficients.clone(),
            iterations: self.iterations,
            gradient_norm: self.gradient_norm,
        }
    }
}

/// Features fed to the propensity model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PropensityFeatures {
    #[default]
    Linear,
    /// Linear terms plus squares, exact log-odds for Gaussian covariates with
    /// unequal arm variances.
    Quadratic,
}

/// Logistic propensity score `P(T = 1 | x)` on selected covariate columns.
#[derive(Debug, Clone)]
pub struct PropensityModel {
    model: LogisticModel,
    columns: Vec<usize>,
    features: PropensityFeatures,
}

impl PropensityModel {
    /// Fits on `columns` of `data`; an empty column list gives the
    /// intercept-only model `p = n1 / n`.
    pub fn fit(
        data: &ObservationalDataset,
        columns: &[usize],
        features: PropensityFeatures,
        options: &LogisticOptions,
    ) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= data.k()) {
            return Err(Error::invalid(format!(
                "propensity column {bad} out of range"
            )));
        }
        let t: Vec<f64> = data.treatments().iter().map(|&t| t as f64).collect();
        let model = if columns.is_empty() {
            LogisticModel::fit_intercept(&t, options)?
        } else {
            let rows: Vec<Vec<f64>> = (0..data.n())
                .map(|i| expand(data.row(i), columns, features))
                .collect();
            LogisticModel::fit(&Points::from_rows(&rows)?, &t, options)?
        };
        Ok(PropensityModel {
            model,
            columns: columns.to_vec(),
            features,
        })
    }

    pub fn model(&self) -> &LogisticModel {
        &self.model
    }

    pub fn columns(&self) -> &[usize] {
        &self.columns
    }

    /// Clipped score for a full covariate row.
    pub fn score(&self, row: &[f64]) -> f64 {
        self.model
            .predict(&expand(row, &self.columns, self.features))
    }

    /// Whether the unclipped score would fall outside the clip range.
    pub fn is_clipped(&self, row: &[f64]) -> bool {
        let raw = sigmoid(
            self.model
                .linear_predictor(&expand(row, &self.columns, self.features)),
        );
        !(EPS_P..=1.0 - EPS_P).contains(&raw)
    }

    pub fn scores(&self, data: &ObservationalDataset) -> Vec<f64> {
        (0..data.n()).map(|i| self.score(data.row(i))).collect()
    }
}

fn expand(row: &[f64], columns: &[usize], features: PropensityFeatures) -> Vec<f64> {
    let mut out: Vec<f64> = columns.iter().map(|&j| row[j]).collect();
    if features == PropensityFeatures::Quadratic {
        out.extend(columns.iter().map(|&j| row[j] * row[j]));
    }
    out
}
