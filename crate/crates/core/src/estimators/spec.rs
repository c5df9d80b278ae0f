use serde::{Deserialize, Serialize};

use super::curve::CateCurve;
use super::ipw::{cate_ipw_kernel, cate_ipw_knn};
use super::matching::{couple_outcomes, match_greedy, match_optimal, scate_coupled, scate_matched};
use super::transport::{
    qcate, scate_gaussian, scate_gaussian_marginal, scate_quantile, scate_quantile_gaussian,
    ArmSmoothers,
};
use crate::data::ObservationalDataset;
use crate::discrete::CostKind;
use crate::error::{Error, Result};
use crate::gaussian::GaussianTransport;
use crate::points::Points;
use crate::smoothers::{LogisticOptions, PropensityFeatures, PropensityModel, SmootherSpec};

/// How the matched estimator pairs rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pairing {
    #[default]
    Greedy,
    Optimal,
}

/// A curve-producing estimator with its hyperparameters. Grids passed to
/// [`run`](Self::run) are covariate values for one-column estimators, mediator
/// vectors for `ScateGaussian` and quantile levels for `Qcate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimator", rename_all = "kebab-case")]
pub enum EstimatorSpec {
    IpwKernel {
        column: usize,
        propensity_columns: Vec<usize>,
        features: PropensityFeatureSpec,
        bandwidth: f64,
    },
    IpwKnn {
        column: usize,
        propensity_columns: Vec<usize>,
        features: PropensityFeatureSpec,
        k: usize,
    },
    Matched {
        columns: Vec<usize>,
        k: usize,
        pairing: Pairing,
    },
    Coupled {
        columns: Vec<usize>,
        k: usize,
        force: bool,
    },
    ScateQuantile {
        column: usize,
        smoother: SmootherSpec,
    },
    ScateQuantileGaussian {
        column: usize,
        smoother: SmootherSpec,
    },
    Qcate {
        column: usize,
        smoother: SmootherSpec,
    },
    ScateGaussian {
        columns: Vec<usize>,
        smoother: SmootherSpec,
    },
    ScateGaussianMarginal {
        columns: Vec<usize>,
        along: usize,
        nodes: usize,
        smoother: SmootherSpec,
    },
}

/// Serializable mirror of [`PropensityFeatures`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropensityFeatureSpec {
    #[default]
    Linear,
    Quadratic,
}

impl From<PropensityFeatureSpec> for PropensityFeatures {
    fn from(f: PropensityFeatureSpec) -> Self {
        match f {
            PropensityFeatureSpec::Linear => PropensityFeatures::Linear,
            PropensityFeatureSpec::Quadratic => PropensityFeatures::Quadratic,
        }
    }
}

fn single(grid: &Points) -> Result<Vec<f64>> {
    if grid.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: grid.dim(),
        });
    }
    Ok(grid.column(0))
}

impl EstimatorSpec {
    /// Dimension of grid points this estimator expects.
    pub fn grid_dim(&self) -> usize {
        match self {
            EstimatorSpec::Matched { columns, .. }
            | EstimatorSpec::Coupled { columns, .. }
            | EstimatorSpec::ScateGaussian { columns, .. } => columns.len(),
            _ => 1,
        }
    }

    /// Names of the grid coordinates, as used in curve exports.
    pub fn grid_columns(&self, data: &ObservationalDataset) -> Vec<String> {
        let name = |j: &usize| {
            data.names()
                .get(*j)
                .cloned()
                .unwrap_or_else(|| format!("x{j}"))
        };
        match self {
            EstimatorSpec::Matched { columns, .. }
            | EstimatorSpec::Coupled { columns, .. }
            | EstimatorSpec::ScateGaussian { columns, .. } => columns.iter().map(name).collect(),
            EstimatorSpec::Qcate { .. } => vec!["u".into()],
            EstimatorSpec::ScateGaussianMarginal { along, .. } => vec![name(along)],
            EstimatorSpec::IpwKernel { column, .. }
            | EstimatorSpec::IpwKnn { column, .. }
            | EstimatorSpec::ScateQuantile { column, .. }
            | EstimatorSpec::ScateQuantileGaussian { column, .. } => vec![name(column)],
        }
    }

    /// Fits everything on `data` and evaluates the curve on `grid`. `seed`
    /// drives the greedy matching order.
    pub fn run(&self, data: &ObservationalDataset, grid: &Points, seed: u64) -> Result<CateCurve> {
        match self {
            EstimatorSpec::IpwKernel {
                column,
                propensity_columns,
                features,
                bandwidth,
            } => {
                let p = PropensityModel::fit(
                    data,
                    propensity_columns,
                    (*features).into(),
                    &LogisticOptions::default(),
                )?;
                cate_ipw_kernel(data, &p, *column, &single(grid)?, *bandwidth)
            }
            EstimatorSpec::IpwKnn {
                column,
                propensity_columns,
                features,
                k,
            } => {
                let p = PropensityModel::fit(
                    data,
                    propensity_columns,
                    (*features).into(),
                    &LogisticOptions::default(),
                )?;
                cate_ipw_knn(data, &p, *column, &single(grid)?, *k)
            }
            EstimatorSpec::Matched {
                columns,
                k,
                pairing,
            } => {
                let pairs = match pairing {
                    Pairing::Greedy => match_greedy(data, columns, seed)?,
                    Pairing::Optimal => {
                        match_optimal(data, columns, CostKind::SquaredEuclidean, false)?
                    }
                };
                scate_matched(data, &pairs, columns, *k, grid)
            }
            EstimatorSpec::Coupled { columns, k, force } => {
                let c = couple_outcomes(data, columns, CostKind::SquaredEuclidean, *force)?;
                scate_coupled(data, &c, columns, *k, grid)
            }
            EstimatorSpec::ScateQuantile { column, smoother } => {
                let m = ArmSmoothers::fit(data, &[*column], smoother)?;
                scate_quantile(data, &m, &single(grid)?)
            }
            EstimatorSpec::ScateQuantileGaussian { column, smoother } => {
                let m = ArmSmoothers::fit(data, &[*column], smoother)?;
                scate_quantile_gaussian(data, &m, &single(grid)?)
            }
            EstimatorSpec::Qcate { column, smoother } => {
                let m = ArmSmoothers::fit(data, &[*column], smoother)?;
                qcate(data, &m, &single(grid)?)
            }
            EstimatorSpec::ScateGaussian { columns, smoother } => {
                let t = GaussianTransport::fit_columns(data, columns)?;
                let m = ArmSmoothers::fit(data, columns, smoother)?;
                scate_gaussian(data, &t, &m, grid)
            }
            EstimatorSpec::ScateGaussianMarginal {
                columns,
                along,
                nodes,
                smoother,
            } => {
                let t = GaussianTransport::fit_columns(data, columns)?;
                let m = ArmSmoothers::fit(data, columns, smoother)?;
                scate_gaussian_marginal(data, &t, &m, *along, &single(grid)?, *nodes)
            }
        }
    }
}
