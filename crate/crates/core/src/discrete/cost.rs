use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::{squared_distance, Points};

/// Ground cost between a control point and a treated point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `|x - y|^2`
    #[default]
    SquaredEuclidean,
    /// `|x - y|`
    Euclidean,
    /// `|x - y|^p`
    Power(f64),
}

impl CostKind {
    fn eval(self, a: &[f64], b: &[f64]) -> f64 {
        let sq = squared_distance(a, b);
        match self {
            CostKind::SquaredEuclidean => sq,
            CostKind::Euclidean => sq.sqrt(),
            CostKind::Power(p) => sq.sqrt().powf(p),
        }
    }
}

/// Dense `n0 x n1` nonnegative cost matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n0: usize,
    n1: usize,
    data: Vec<f64>,
    kind: Option<CostKind>,
}

impl CostMatrix {
    /// Wraps an explicit matrix; every entry must be finite and nonnegative.
    pub fn from_vec(n0: usize, n1: usize, data: Vec<f64>) -> Result<Self> {
        if n0 == 0 || n1 == 0 {
            return Err(Error::invalid(
                "cost matrix needs at least one row and one column",
            ));
        }
        if data.len() != n0 * n1 {
            return Err(Error::DimensionMismatch {
                expected: n0 * n1,
                got: data.len(),
            });
        }
        if data.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::invalid(
                "cost entries must be finite and nonnegative",
            ));
        }
        Ok(CostMatrix {
            n0,
            n1,
            data,
            kind: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n1 = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n1) {
            return Err(Error::invalid("ragged cost matrix"));
        }
        Self::from_vec(rows.len(), n1, rows.concat())
    }

    /// Pairwise costs between control points `x0` and treated points `x1`.
    pub fn build(x0: &Points, x1: &Points, kind: CostKind) -> Result<Self> {
        if x0.dim() != x1.dim() {
            return Err(Error::DimensionMismatch {
                expected: x0.dim(),
                got: x1.dim(),
            });
        }
        if x0
            .as_slice()
            .iter()
            .chain(x1.as_slice())
            .any(|v| !v.is_finite())
        {
            return Err(Error::invalid("non-finite coordinate in cost input"));
        }
        if let CostKind::Power(p) = kind {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!(
                    "cost exponent must be positive, got {p}"
                )));
            }
        }
        let (n0, n1) = (x0.len(), x1.len());
        if n0 == 0 || n1 == 0 {
            return Err(Error::invalid("cost matrix needs points in both groups"));
        }
        let mut data = vec![0.0; n0 * n1];
        data.par_chunks_mut(n1).enumerate().for_each(|(i, row)| {
            let a = x0.row(i);
            for (j, c) in row.iter_mut().enumerate() {
                *c = kind.eval(a, x1.row(j));
            }
        });
        Ok(CostMatrix {
            n0,
            n1,
            data,
            kind: Some(kind),
        })
    }

    pub fn rows(&self) -> usize {
        self.n0
    }

    pub fn cols(&self) -> usize {
        self.n1
    }

    pub fn kind(&self) -> Option<CostKind> {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n1 + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::from_vec(
            self.n0,
            self.n1,
            self.data.iter().map(|c| c * factor).collect(),
        )
    }

    pub fn transpose(&self) -> Self {
        let mut data = vec![0.0; self.data.len()];
        for i in 0..self.n0 {
            for j in 0..self.n1 {
                data[j * self.n0 + i] = self.get(i, j);
            }
        }
        CostMatrix {
            n0: self.n1,
            n1: self.n0,
            data,
            kind: self.kind,
        }
    }
}
