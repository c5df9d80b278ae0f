use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{CateCurve, Method};
use crate::data::{split_by_treatment, ObservationalDataset};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::smoothers::{Bandwidth, KernelRegressor, KnnRegressor, PropensityModel, EPS_P};

/// Anything that yields `P(T = 1 | x)` for a full covariate row.
pub trait Propensity: Sync {
    fn score(&self, row: &[f64]) -> f64;

    /// Whether the score hit the clipping bounds.
    fn is_clipped(&self, row: &[f64]) -> bool;
}

impl Propensity for PropensityModel {
    fn score(&self, row: &[f64]) -> f64 {
        PropensityModel::score(self, row)
    }

    fn is_clipped(&self, row: &[f64]) -> bool {
        PropensityModel::is_clipped(self, row)
    }
}

/// The same score for every row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPropensity(pub f64);

impl Propensity for ConstantPropensity {
    fn score(&self, _: &[f64]) -> f64 {
        self.0.clamp(EPS_P, 1.0 - EPS_P)
    }

    fn is_clipped(&self, _: &[f64]) -> bool {
        !(EPS_P..=1.0 - EPS_P).contains(&self.0)
    }
}

/// Result of [`sate_ipw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SateEstimate {
    pub estimate: f64,
    /// Kish effective sample size of the control weights `1 / (1 - p)`.
    pub ess_control: f64,
    /// Kish effective sample size of the treated weights `1 / p`.
    pub ess_treated: f64,
    pub clipped: usize,
    pub warning: Option<String>,
}

/// Per-row IPW terms `t y / p - (1 - t) y / (1 - p)` and the clip count.
fn ipw_terms(
    data: &ObservationalDataset,
    propensity: &dyn Propensity,
) -> (Vec<f64>, Vec<f64>, usize) {
    let mut terms = Vec::with_capacity(data.n());
    let mut scores = Vec::with_capacity(data.n());
    let mut clipped = 0;
    for i in 0..data.n() {
        let row = data.row(i);
        let p = propensity.score(row);
        clipped += usize::from(propensity.is_clipped(row));
        let y = data.outcomes()[i];
        terms.push(if data.treatments()[i] == 1 {
            y / p
        } else {
            -y / (1.0 - p)
        });
        scores.push(p);
    }
    (terms, scores, clipped)
}

fn kish(weights: impl Iterator<Item = f64>) -> f64 {
    let (s, s2) = weights.fold((0.0, 0.0), |(s, s2), w| (s + w, s2 + w * w));
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Inverse-propensity-weighted sample average treatment effect.
pub fn sate_ipw(data: &ObservationalDataset, propensity: &dyn Propensity) -> Result<SateEstimate> {
    split_by_treatment(data)?;
    let (terms, scores, clipped) = ipw_terms(data, propensity);
    let n = data.n() as f64;
    let t = data.treatments();
    let ess_treated = kish(
        (0..data.n())
            .filter(|&i| t[i] == 1)
            .map(|i| 1.0 / scores[i]),
    );
    let ess_control = kish(
        (0..data.n())
            .filter(|&i| t[i] == 0)
            .map(|i| 1.0 / (1.0 - scores[i])),
    );
    let warning = (clipped as f64 > 0.1 * n).then(|| {
        format!(
            "{clipped} of {} propensity scores were clipped to [{EPS_P:e}, 1 - {EPS_P:e}]",
            data.n()
        )
    });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Ok(SateEstimate {
        estimate: terms.iter().sum::<f64>() / n,
        ess_control,
        ess_treated,
        clipped,
        warning,
    })
}

fn check_grid(data: &ObservationalDataset, column: usize, grid: &[f64]) -> Result<Vec<f64>> {
    if column >= data.k() {
        return Err(Error::invalid(format!(
            "column {column} out of range (k = {})",
            data.k()
        )));
    }
    let x = data.column(column);
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if let Some(g) = grid.iter().find(|g| !(**g >= lo && **g <= hi)) {
        return Err(Error::invalid(format!(
            "grid point {g} outside the covariate range [{lo}, {hi}]"
        )));
    }
    Ok(x)
}

/// Kernel-localized IPW average along one covariate, bandwidth `h`.
pub fn cate_ipw_kernel(
    data: &ObservationalDataset,
    propensity: &dyn Propensity,
    column: usize,
    grid: &[f64],
    h: f64,
) -> Result<CateCurve> {
    split_by_treatment(data)?;
    let x = check_grid(data, column, grid)?;
    let (terms, _, _) = ipw_terms(data, propensity);
    let reg = KernelRegressor::fit(Points::from_column(x), terms, &Bandwidth::Scalar(h))?;
    let preds: Vec<_> = grid.par_iter().map(|&g| reg.predict(&[g])).collect();
    CateCurve::new(
        Method::IpwKernel,
        vec![data.names()[column].clone()],
        &Points::from_column(grid.to_vec()),
        preds.iter().map(|p| p.value).collect(),
    )?
    .with_flags(preds.iter().map(|p| p.fallback).collect())
}

/// IPW average over the `k` rows nearest each grid point.
pub fn cate_ipw_knn(
    data: &ObservationalDataset,
    propensity: &dyn Propensity,
    column: usize,
    grid: &[f64],
    k: usize,
) -> Result<CateCurve> {
    split_by_treatment(data)?;
    let x = check_grid(data, column, grid)?;
    let (terms, _, _) = ipw_terms(data, propensity);
    let reg = KnnRegressor::fit(Points::from_column(x), terms, k)?;
    let est = grid.par_iter().map(|&g| reg.predict(&[g])).collect();
    CateCurve::new(
        Method::IpwKnn,
        vec![data.names()[column].clone()],
        &Points::from_column(grid.to_vec()),
        est,
    )
}
