//! Closed-form optimal transport between Gaussian approximations of the two
//! arms: `x -> mu1 + A (x - mu0)` with `A = S0^{-1/2} (S0^{1/2} S1 S0^{1/2})^{1/2} S0^{-1/2}`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::{split_by_treatment, ObservationalDataset};
use crate::error::{Error, Result};
use crate::points::Points;

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_FLOOR: f64 = -1e-10;
const MAX_CONDITION: f64 = 1e12;

/// Symmetric PSD square root via the symmetric eigendecomposition.
/// Eigenvalues in `[-1e-10, 0)` are clamped to zero.
pub fn sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vectors, values) = checked_eigen(m)?;
    Ok(reassemble(
        &vectors,
        values.iter().map(|&l| l.max(0.0).sqrt()),
    ))
}

/// `M^{-1/2}` for a symmetric positive definite `M`.
fn inv_sqrtm_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vectors, values) = checked_eigen(m)?;
    if values.iter().any(|&l| l <= 0.0) {
        return Err(Error::Singular(f64::INFINITY));
    }
    Ok(reassemble(&vectors, values.iter().map(|&l| 1.0 / l.sqrt())))
}

fn checked_eigen(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch {
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * (1.0 + m.amax()) {
        return Err(Error::Asymmetric(asym));
    }
    let sym = symmetrize(m);
    let eig = SymmetricEigen::new(sym);
    let min = eig.eigenvalues.min();
    if min < EIGEN_FLOOR * m.amax().max(1.0) {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    Ok((eig.eigenvectors, eig.eigenvalues))
}

fn reassemble(vectors: &DMatrix<f64>, diag: impl Iterator<Item = f64>) -> DMatrix<f64> {
    let d = DVector::from_iterator(vectors.ncols(), diag);
    let scaled = vectors * DMatrix::from_diagonal(&d);
    symmetrize(&(scaled * vectors.transpose()))
}

fn asymmetry(m: &DMatrix<f64>) -> f64 {
    (m - m.transpose()).amax()
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetrize(m));
    let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Sample mean and unbiased (divisor `n - 1`) covariance of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupMoments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GroupMoments {
    pub fn estimate(points: &Points) -> Result<Self> {
        let (n, k) = (points.len(), points.dim());
        if n < 2 {
            return Err(Error::invalid("moments need at least two rows"));
        }
        let mut mean = DVector::zeros(k);
        for row in points.rows() {
            for (m, &x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean /= n as f64;
        let mut cov = DMatrix::zeros(k, k);
        let mut centered = vec![0.0; k];
        for row in points.rows() {
            for (c, (&x, m)) in centered.iter_mut().zip(row.iter().zip(mean.iter())) {
                *c = x - m;
            }
            for a in 0..k {
                for b in a..k {
                    cov[(a, b)] += centered[a] * centered[b];
                }
            }
        }
        for a in 0..k {
            for b in a..k {
                let v = cov[(a, b)] / (n as f64 - 1.0);
                cov[(a, b)] = v;
                cov[(b, a)] = v;
            }
        }
        Ok(GroupMoments { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Affine Gaussian optimal transport map on the mediator block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianTransport {
    mu0: DVector<f64>,
    mu1: DVector<f64>,
    a: DMatrix<f64>,
    mediator_columns: Vec<usize>,
    ridge: f64,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mu0: Vec<f64>,
    mu1: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    mediator_columns: Vec<usize>,
    #[serde(default)]
    ridge: f64,
}

impl From<GaussianTransport> for GaussianRepr {
    fn from(t: GaussianTransport) -> Self {
        let k = t.mu0.len();
        GaussianRepr {
            mu0: t.mu0.iter().copied().collect(),
            mu1: t.mu1.iter().copied().collect(),
            a: (0..k)
                .map(|i| t.a.row(i).iter().copied().collect())
                .collect(),
            mediator_columns: t.mediator_columns,
            ridge: t.ridge,
        }
    }
}

impl TryFrom<GaussianRepr> for GaussianTransport {
    type Error = Error;

    fn try_from(r: GaussianRepr) -> Result<Self> {
        let k = r.mu0.len();
        if k == 0 || r.mu1.len() != k || r.a.len() != k || r.mediator_columns.len() != k {
            return Err(Error::invalid("inconsistent gaussian transport dimensions"));
        }
        if r.a.iter().any(|row| row.len() != k) {
            return Err(Error::invalid("A must be square"));
        }
        let a = DMatrix::from_fn(k, k, |i, j| r.a[i][j]);
        let all = r.mu0.iter().chain(&r.mu1).chain(a.iter());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite transport parameter"));
        }
        if asymmetry(&a) > SYMMETRY_TOL * (1.0 + a.amax()) {
            return Err(Error::Asymmetric(asymmetry(&a)));
        }
        Ok(GaussianTransport {
            mu0: DVector::from_vec(r.mu0),
            mu1: DVector::from_vec(r.mu1),
            a,
            mediator_columns: r.mediator_columns,
            ridge: r.ridge,
        })
    }
}

impl GaussianTransport {
    /// Transport between two moment estimates. If the control covariance has
    /// condition number above 1e12, a ridge of `1e-10 * trace / k` is added once.
    pub fn from_moments(m0: &GroupMoments, m1: &GroupMoments) -> Result<Self> {
        let k = m0.dim();
        if k == 0 {
            return Err(Error::invalid("no mediator columns to transport"));
        }
        if m1.dim() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: m1.dim(),
            });
        }
        let mut sigma0 = symmetrize(&m0.cov);
        let mut ridge = 0.0;
        let cond = condition_number(&sigma0);
        if cond > MAX_CONDITION {
            ridge = 1e-10 * sigma0.trace() / k as f64;
            if !(ridge > 0.0) {
                return Err(Error::Singular(cond));
            }
            sigma0 += DMatrix::identity(k, k) * ridge;
            let cond = condition_number(&sigma0);
            if cond > MAX_CONDITION {
                return Err(Error::Singular(cond));
            }
        }
        let a = transport_matrix(&sigma0, &m1.cov)?;
        Ok(GaussianTransport {
            mu0: m0.mean.clone(),
            mu1: m1.mean.clone(),
            a,
            mediator_columns: (0..k).collect(),
            ridge,
        })
    }

    /// Fits on the dataset's mediator columns. Each group needs `k + 1` rows.
    pub fn fit(data: &ObservationalDataset) -> Result<Self> {
        Self::fit_columns(data, &data.mediator_columns())
    }

    pub fn fit_columns(data: &ObservationalDataset, columns: &[usize]) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("no mediator columns to transport"));
        }
        let (g0, g1) = split_by_treatment(data)?;
        let k = columns.len();
        if g0.len() < k + 1 || g1.len() < k + 1 {
            return Err(Error::invalid(format!(
                "each group needs at least {} rows for {k} mediators",
                k + 1
            )));
        }
        let m0 = GroupMoments::estimate(&g0.points(data, columns))?;
        let m1 = GroupMoments::estimate(&g1.points(data, columns))?;
        let mut t = Self::from_moments(&m0, &m1)?;
        t.mediator_columns = columns.to_vec();
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.mu0.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn mu0(&self) -> &DVector<f64> {
        &self.mu0
    }

    pub fn mu1(&self) -> &DVector<f64> {
        &self.mu1
    }

    pub fn mediator_columns(&self) -> &[usize] {
        &self.mediator_columns
    }

    /// Ridge added to the control covariance during fitting (0 if none).
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Maps one mediator vector.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let k = self.dim();
        if x.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: x.len(),
            });
        }
        let mut out = self.mu1.iter().copied().collect::<Vec<_>>();
        for (i, o) in out.iter_mut().enumerate() {
            for j in 0..k {
                *o += self.a[(i, j)] * (x[j] - self.mu0[j]);
            }
        }
        Ok(out)
    }

    /// Maps a full covariate row: mediator columns are transported, every
    /// other column passes through unchanged.
    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if let Some(&bad) = self.mediator_columns.iter().find(|&&j| j >= row.len()) {
            return Err(Error::DimensionMismatch {
                expected: bad + 1,
                got: row.len(),
            });
        }
        let block: Vec<f64> = self.mediator_columns.iter().map(|&j| row[j]).collect();
        let mapped = self.apply(&block)?;
        let mut out = row.to_vec();
        for (&j, v) in self.mediator_columns.iter().zip(mapped) {
            out[j] = v;
        }
        Ok(out)
    }

    /// Row-wise image of a `m x k` point set.
    pub fn push_forward(&self, x: &Points) -> Result<Points> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.dim(),
            });
        }
        let mut out = Vec::with_capacity(x.len() * x.dim());
        for row in x.rows() {
            out.extend(self.apply(row)?);
        }
        Points::new(out, self.dim())
    }

    /// `||A S0 A - S1||_F / ||S1||_F`.
    pub fn fixed_point_residual(&self, sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> f64 {
        let lhs = &self.a * sigma0 * &self.a;
        (lhs - sigma1).norm() / sigma1.norm().max(f64::MIN_POSITIVE)
    }
}

/// The unique symmetric positive `A` with `A S0 A = S1`.
pub fn transport_matrix(sigma0: &DMatrix<f64>, sigma1: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if sigma0.shape() != sigma1.shape() {
        return Err(Error::DimensionMismatch {
            expected: sigma0.nrows(),
            got: sigma1.nrows(),
        });
    }
    let root = sqrtm_spd(sigma0)?;
    let inv_root = inv_sqrtm_spd(sigma0)?;
    let inner = symmetrize(&(&root * symmetrize(sigma1) * &root));
    let middle = sqrtm_spd(&inner)?;
    Ok(symmetrize(&(&inv_root * middle * &inv_root)))
}
