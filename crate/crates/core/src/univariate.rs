//! One-dimensional transport: empirical CDFs, the quantile map
//! `T(x) = F1^{-1}(F0(x))`, and its moment-matching Gaussian counterpart.

use serde::{Deserialize, Serialize};

use crate::data::{split_by_treatment, ObservationalDataset, Role};
use crate::error::{Error, Result};

/// Right-continuous step CDF of a finite sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("empirical cdf of an empty sample"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("empirical cdf requires finite values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(EmpiricalCdf { sorted })
    }

    fn from_sorted(sorted: Vec<f64>) -> Result<Self> {
        if sorted.is_empty() || sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("sorted sample must be nonempty and finite"));
        }
        if sorted.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("sample is not sorted ascending"));
        }
        Ok(EmpiricalCdf { sorted })
    }

    pub fn n(&self) -> usize {
        self.sorted.len()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Number of sample values `<= x`.
    pub fn count_le(&self, x: f64) -> usize {
        self.sorted.partition_point(|&v| v <= x)
    }

    /// `#{v <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.count_le(x) as f64 / self.n() as f64
    }

    /// Left-continuous generalized inverse: the smallest sample value `v`
    /// with `F(v) >= u`. `u` must lie in `(0, 1]`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u <= 1.0) {
            return Err(Error::invalid(format!("quantile level {u} outside (0, 1]")));
        }
        Ok(self.sorted[self.rank_for(u) - 1])
    }

    /// Smallest count `c` in `1..=n` with `c / n >= u`, using the same
    /// arithmetic as [`eval`](Self::eval) so that `quantile(eval(x)) <= x` holds exactly.
    fn rank_for(&self, u: f64) -> usize {
        let n = self.n();
        let nf = n as f64;
        let mut c = ((u * nf).ceil() as usize).clamp(1, n);
        while c > 1 && (c - 1) as f64 / nf >= u {
            c -= 1;
        }
        while c < n && (c as f64) / nf < u {
            c += 1;
        }
        c
    }
}

/// Fitted empirical optimal transport map between two 1D samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "QuantileRepr", into = "QuantileRepr")]
pub struct QuantileTransport1D {
    control: EmpiricalCdf,
    treated: EmpiricalCdf,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename = "quantile")]
struct QuantileRepr {
    sorted0: Vec<f64>,
    sorted1: Vec<f64>,
}

impl TryFrom<QuantileRepr> for QuantileTransport1D {
    type Error = Error;

    fn try_from(r: QuantileRepr) -> Result<Self> {
        Ok(QuantileTransport1D {
            control: EmpiricalCdf::from_sorted(r.sorted0)?,
            treated: EmpiricalCdf::from_sorted(r.sorted1)?,
        })
    }
}

impl From<QuantileTransport1D> for QuantileRepr {
    fn from(t: QuantileTransport1D) -> Self {
        QuantileRepr {
            sorted0: t.control.sorted,
            sorted1: t.treated.sorted,
        }
    }
}

impl QuantileTransport1D {
    pub fn from_samples(control: &[f64], treated: &[f64]) -> Result<Self> {
        Ok(QuantileTransport1D {
            control: EmpiricalCdf::fit(control)?,
            treated: EmpiricalCdf::fit(treated)?,
        })
    }

    /// Fits the map for covariate `column`. Collider columns are refused
    /// unless `force` is set.
    pub fn fit(data: &ObservationalDataset, column: usize, force: bool) -> Result<Self> {
        check_column(data, column, force)?;
        let (g0, g1) = split_by_treatment(data)?;
        Self::from_samples(&g0.column(data, column), &g1.column(data, column))
    }

    pub fn control(&self) -> &EmpiricalCdf {
        &self.control
    }

    pub fn treated(&self) -> &EmpiricalCdf {
        &self.treated
    }

    /// `F1^{-1}(F0(x))` with `F0(x)` clamped into `[1/n0, 1]`: inputs below
    /// the control minimum go to the treated minimum, inputs above the
    /// control maximum go to the treated maximum.
    pub fn apply(&self, x: f64) -> f64 {
        let count = self.control.count_le(x).max(1);
        let u = count as f64 / self.control.n() as f64;
        self.treated.sorted[self.treated.rank_for(u) - 1]
    }

    /// Whether `x` lies inside the control sample's range.
    pub fn in_support(&self, x: f64) -> bool {
        let s = &self.control.sorted;
        x >= s[0] && x <= s[s.len() - 1]
    }
}

/// `x -> mean1 + (sd1 / sd0) (x - mean0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename = "gaussian", try_from = "Gaussian1DRepr")]
pub struct GaussianTransport1D {
    pub mu0: f64,
    pub mu1: f64,
    pub s0: f64,
    pub s1: f64,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename = "gaussian")]
struct Gaussian1DRepr {
    mu0: f64,
    mu1: f64,
    s0: f64,
    s1: f64,
}

impl TryFrom<Gaussian1DRepr> for GaussianTransport1D {
    type Error = Error;

    fn try_from(r: Gaussian1DRepr) -> Result<Self> {
        if ![r.mu0, r.mu1, r.s0, r.s1].iter().all(|v| v.is_finite()) || !(r.s0 > 0.0) || r.s1 < 0.0
        {
            return Err(Error::invalid(
                "gaussian transport needs finite moments and s0 > 0, s1 >= 0",
            ));
        }
        Ok(GaussianTransport1D {
            mu0: r.mu0,
            mu1: r.mu1,
            s0: r.s0,
            s1: r.s1,
        })
    }
}

impl GaussianTransport1D {
    pub fn from_samples(control: &[f64], treated: &[f64]) -> Result<Self> {
        if control.len() < 2 || treated.len() < 2 {
            return Err(Error::invalid(
                "gaussian transport needs at least 2 points per group",
            ));
        }
        let (mu0, s0) = mean_sd(control);
        let (mu1, s1) = mean_sd(treated);
        if !(s0 > 0.0) {
            return Err(Error::ZeroVariance("control group".into()));
        }
        Ok(GaussianTransport1D { mu0, mu1, s0, s1 })
    }

    pub fn fit(data: &ObservationalDataset, column: usize, force: bool) -> Result<Self> {
        check_column(data, column, force)?;
        let (g0, g1) = split_by_treatment(data)?;
        Self::from_samples(&g0.column(data, column), &g1.column(data, column))
    }

    pub fn slope(&self) -> f64 {
        self.s1 / self.s0
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.mu1 + self.slope() * (x - self.mu0)
    }
}

fn check_column(data: &ObservationalDataset, column: usize, force: bool) -> Result<()> {
    match data.roles().get(column) {
        None => Err(Error::invalid(format!(
            "column {column} out of range (k = {})",
            data.k()
        ))),
        Some(Role::Collider) if !force => Err(Error::ColliderTransport(column)),
        Some(_) => Ok(()),
    }
}

/// Sample mean and standard deviation (divisor `n - 1`).
pub(crate) fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let var = if values.len() > 1 {
        ss / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}
