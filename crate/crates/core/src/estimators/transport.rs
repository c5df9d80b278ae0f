use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::curve::{CateCurve, Method};
use crate::data::{split_by_treatment, ObservationalDataset};
use crate::error::{Error, Result};
use crate::gaussian::GaussianTransport;
use crate::points::Points;
use crate::smoothers::{Smoother, SmootherSpec};
use crate::univariate::{GaussianTransport1D, QuantileTransport1D};

/// Outcome regressions fitted separately on each arm over `columns`.
#[derive(Debug, Clone)]
pub struct ArmSmoothers {
    pub m0: Smoother,
    pub m1: Smoother,
    pub columns: Vec<usize>,
}

impl ArmSmoothers {
    pub fn fit(
        data: &ObservationalDataset,
        columns: &[usize],
        spec: &SmootherSpec,
    ) -> Result<Self> {
        if let Some(&bad) = columns.iter().find(|&&j| j >= data.k()) {
            return Err(Error::invalid(format!(
                "column {bad} out of range (k = {})",
                data.k()
            )));
        }
        let (g0, g1) = split_by_treatment(data)?;
        Ok(ArmSmoothers {
            m0: spec.fit(g0.points(data, columns), g0.outcomes(data))?,
            m1: spec.fit(g1.points(data, columns), g1.outcomes(data))?,
            columns: columns.to_vec(),
        })
    }

    fn names(&self, data: &ObservationalDataset) -> Vec<String> {
        self.columns
            .iter()
            .map(|&j| data.names()[j].clone())
            .collect()
    }
}

fn one_column(models: &ArmSmoothers) -> Result<usize> {
    match models.columns[..] {
        [c] => Ok(c),
        _ => Err(Error::DimensionMismatch {
            expected: 1,
            got: models.columns.len(),
        }),
    }
}

/// `m1(T(x)) - m0(x)` and `m1(x) - m0(x)` along one column for any 1D map.
fn scate_1d(
    data: &ObservationalDataset,
    models: &ArmSmoothers,
    grid: &[f64],
    map: impl Fn(f64) -> f64 + Sync,
    outside: impl Fn(f64) -> bool + Sync,
    method: Method,
) -> Result<CateCurve> {
    let rows: Vec<(f64, f64, bool)> = grid
        .par_iter()
        .map(|&x| {
            let (a, fa) = models.m1.predict_flagged(&[map(x)]);
            let (b, fb) = models.m1.predict_flagged(&[x]);
            let (c, fc) = models.m0.predict_flagged(&[x]);
            (a - c, b - c, fa || fb || fc || outside(x))
        })
        .collect();
    CateCurve::new(
        method,
        models.names(data),
        &Points::from_column(grid.to_vec()),
        rows.iter().map(|r| r.0).collect(),
    )?
    .with_cp(rows.iter().map(|r| r.1).collect())?
    .with_flags(rows.iter().map(|r| r.2).collect())
}

/// Mutatis mutandis CATE through the empirical quantile map. Grid points
/// outside the control range are clamped by the map and flagged.
pub fn scate_quantile(
    data: &ObservationalDataset,
    models: &ArmSmoothers,
    grid: &[f64],
) -> Result<CateCurve> {
    let column = one_column(models)?;
    let t = QuantileTransport1D::fit(data, column, false)?;
    scate_1d(
        data,
        models,
        grid,
        |x| t.apply(x),
        |x| !t.in_support(x),
        Method::ScateQuantile,
    )
}

/// As [`scate_quantile`] with the moment-matching affine map.
pub fn scate_quantile_gaussian(
    data: &ObservationalDataset,
    models: &ArmSmoothers,
    grid: &[f64],
) -> Result<CateCurve> {
    let column = one_column(models)?;
    let t = GaussianTransport1D::fit(data, column, false)?;
    scate_1d(
        data,
        models,
        grid,
        |x| t.apply(x),
        |_| false,
        Method::ScateQuantileGaussian,
    )
}

/// Quantile-indexed CATE `m1(F1^{-1}(u)) - m0(F0^{-1}(u))` for `u` in `(0, 1)`.
pub fn qcate(
    data: &ObservationalDataset,
    models: &ArmSmoothers,
    levels: &[f64],
) -> Result<CateCurve> {
    let column = one_column(models)?;
    if let Some(u) = levels.iter().find(|u| !(**u > 0.0 && **u < 1.0)) {
        return Err(Error::invalid(format!("quantile level {u} outside (0, 1)")));
    }
    let t = QuantileTransport1D::fit(data, column, false)?;
    let rows: Vec<(f64, bool)> = levels
        .par_iter()
        .map(|&u| {
            let q1 = t.treated().quantile(u).expect("level checked");
            let q0 = t.control().quantile(u).expect("level checked");
            let (a, fa) = models.m1.predict_flagged(&[q1]);
            let (b, fb) = models.m0.predict_flagged(&[q0]);
            (a - b, fa || fb)
        })
        .collect();
    CateCurve::new(
        Method::Qcate,
        vec!["u".into()],
        &Points::from_column(levels.to_vec()),
        rows.iter().map(|r| r.0).collect(),
    )?
    .with_flags(rows.iter().map(|r| r.1).collect())
}

fn check_transport(models: &ArmSmoothers, transport: &GaussianTransport) -> Result<()> {
    if models.columns != transport.mediator_columns() {
        return Err(Error::invalid(format!(
            "smoother columns {:?} differ from transport columns {:?}",
            models.columns,
            transport.mediator_columns()
        )));
    }
    Ok(())
}

/// Mutatis mutandis CATE through the Gaussian map on mediator vectors.
pub fn scate_gaussian(
    data: &ObservationalDataset,
    transport: &GaussianTransport,
    models: &ArmSmoothers,
    grid: &Points,
) -> Result<CateCurve> {
    check_transport(models, transport)?;
    if grid.dim() != transport.dim() {
        return Err(Error::DimensionMismatch {
            expected: transport.dim(),
            got: grid.dim(),
        });
    }
    let rows: Vec<(f64, f64, bool)> = grid
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|x| {
            let tx = transport.apply(x).expect("dimension checked");
            let (a, fa) = models.m1.predict_flagged(&tx);
            let (b, fb) = models.m1.predict_flagged(x);
            let (c, fc) = models.m0.predict_flagged(x);
            (a - c, b - c, fa || fb || fc)
        })
        .collect();
    CateCurve::new(
        Method::ScateGaussian,
        models.names(data),
        grid,
        rows.iter().map(|r| r.0).collect(),
    )?
    .with_cp(rows.iter().map(|r| r.1).collect())?
    .with_flags(rows.iter().map(|r| r.2).collect())
}

/// Gauss-Hermite rule for the standard normal: nodes and weights summing
/// to one (Golub-Welsch).
pub fn gauss_hermite(q: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(q, q, |i, j| {
        if i.abs_diff(j) == 1 {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = jacobi.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..q)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// Gaussian SCATE as a function of one mediator: the other mediators are
/// integrated over their Gaussian conditional law given `x_along` under the
/// control moments, with `nodes` Gauss-Hermite points per dimension.
pub fn scate_gaussian_marginal(
    data: &ObservationalDataset,
    transport: &GaussianTransport,
    models: &ArmSmoothers,
    along: usize,
    grid: &[f64],
    nodes: usize,
) -> Result<CateCurve> {
    check_transport(models, transport)?;
    let k = transport.dim();
    let pos = transport
        .mediator_columns()
        .iter()
        .position(|&j| j == along)
        .ok_or_else(|| Error::invalid(format!("column {along} is not a transported mediator")))?;
    let rest: Vec<usize> = (0..k).filter(|&i| i != pos).collect();
    let total = nodes.checked_pow(rest.len() as u32).unwrap_or(usize::MAX);
    if nodes == 0 || total > 100_000 {
        return Err(Error::invalid(format!(
            "{nodes} nodes in {} dimensions is out of range",
            rest.len()
        )));
    }
    let (g0, _) = split_by_treatment(data)?;
    let pts = g0.points(data, transport.mediator_columns());
    let moments = crate::gaussian::GroupMoments::estimate(&pts)?;
    let (mu, s) = (&moments.mean, &moments.cov);

    // Conditional law of the other coordinates given coordinate `pos`.
    let r = rest.len();
    let s_aa = s[(pos, pos)];
    let gain = DVector::from_iterator(r, rest.iter().map(|&i| s[(i, pos)] / s_aa));
    let cond = DMatrix::from_fn(r, r, |a, b| {
        s[(rest[a], rest[b])] - s[(rest[a], pos)] * s[(pos, rest[b])] / s_aa
    });
    let chol = if r == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let jitter = 1e-12 * cond.trace().max(f64::MIN_POSITIVE);
        (cond.clone() + DMatrix::identity(r, r) * jitter)
            .cholesky()
            .ok_or_else(|| Error::NotPositiveSemidefinite(cond.min()))?
            .l()
    };
    let (z, w) = gauss_hermite(nodes);
    let mut offsets: Vec<(DVector<f64>, f64)> = Vec::with_capacity(total);
    for flat in 0..total {
        let mut idx = flat;
        let mut u = DVector::zeros(r);
        let mut weight = 1.0;
        for d in 0..r {
            u[d] = z[idx % nodes];
            weight *= w[idx % nodes];
            idx /= nodes;
        }
        offsets.push((&chol * u, weight));
    }

    let rows: Vec<(f64, f64, bool)> = grid
        .par_iter()
        .map(|&xa| {
            let (mut est, mut cp, mut flag) = (0.0, 0.0, false);
            for (off, weight) in &offsets {
                let mut x = vec![0.0; k];
                x[pos] = xa;
                for (a, &i) in rest.iter().enumerate() {
                    x[i] = mu[i] + gain[a] * (xa - mu[pos]) + off[a];
                }
                let tx = transport.apply(&x).expect("dimension checked");
                let (a, fa) = models.m1.predict_flagged(&tx);
                let (b, fb) = models.m1.predict_flagged(&x);
                let (c, fc) = models.m0.predict_flagged(&x);
                est += weight * (a - c);
                cp += weight * (b - c);
                flag |= fa || fb || fc;
            }
            (est, cp, flag)
        })
        .collect();
    CateCurve::new(
        Method::ScateGaussianMarginal,
        vec![data.names()[along].clone()],
        &Points::from_column(grid.to_vec()),
        rows.iter().map(|r| r.0).collect(),
    )?
    .with_cp(rows.iter().map(|r| r.1).collect())?
    .with_flags(rows.iter().map(|r| r.2).collect())
}
