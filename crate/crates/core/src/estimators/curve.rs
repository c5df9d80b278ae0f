use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;
use crate::univariate::EmpiricalCdf;

/// Which estimator produced a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    IpwKernel,
    IpwKnn,
    Matched,
    Coupled,
    ScateQuantile,
    ScateQuantileGaussian,
    Qcate,
    ScateGaussian,
    ScateGaussianMarginal,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::IpwKernel => "ipw-kernel",
            Method::IpwKnn => "ipw-knn",
            Method::Matched => "matched",
            Method::Coupled => "coupled",
            Method::ScateQuantile => "scate-quantile",
            Method::ScateQuantileGaussian => "scate-quantile-gaussian",
            Method::Qcate => "qcate",
            Method::ScateGaussian => "scate-gaussian",
            Method::ScateGaussianMarginal => "scate-gaussian-marginal",
        }
    }
}

/// Pointwise bootstrap quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bands {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub level: f64,
}

/// Treatment effect evaluated on a grid of covariate points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateCurve {
    pub method: Method,
    pub columns: Vec<String>,
    pub grid: Vec<Vec<f64>>,
    pub estimates: Vec<f64>,
    /// Ceteris paribus companion `m1(x) - m0(x)`, where the method has one.
    pub cp_estimates: Option<Vec<f64>>,
    pub bands: Option<Bands>,
    /// Points that needed a fallback or were clamped to the data support.
    pub flags: Vec<bool>,
}

impl CateCurve {
    pub fn new(
        method: Method,
        columns: Vec<String>,
        grid: &Points,
        estimates: Vec<f64>,
    ) -> Result<Self> {
        if grid.len() != estimates.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                got: estimates.len(),
            });
        }
        if columns.len() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: columns.len(),
            });
        }
        Ok(CateCurve {
            method,
            columns,
            grid: grid.rows().map(<[f64]>::to_vec).collect(),
            flags: vec![false; estimates.len()],
            estimates,
            cp_estimates: None,
            bands: None,
        })
    }

    pub fn with_cp(mut self, cp: Vec<f64>) -> Result<Self> {
        self.check_len(cp.len())?;
        self.cp_estimates = Some(cp);
        Ok(self)
    }

    pub fn with_flags(mut self, flags: Vec<bool>) -> Result<Self> {
        self.check_len(flags.len())?;
        self.flags = flags;
        Ok(self)
    }

    /// Attaches bands, widened where needed so each contains its estimate.
    pub fn with_bands(mut self, mut bands: Bands) -> Result<Self> {
        self.check_len(bands.lo.len())?;
        self.check_len(bands.hi.len())?;
        for ((lo, hi), &e) in bands.lo.iter_mut().zip(&mut bands.hi).zip(&self.estimates) {
            *lo = lo.min(e);
            *hi = hi.max(e);
        }
        self.bands = Some(bands);
        Ok(self)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.estimates.len() {
            return Err(Error::DimensionMismatch {
                expected: self.estimates.len(),
                got,
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.estimates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.estimates.is_empty()
    }

    /// First grid coordinate of every point.
    pub fn xs(&self) -> Vec<f64> {
        self.grid.iter().map(|p| p[0]).collect()
    }

    /// CSV with columns `<grid columns>, estimate, cp_estimate, lo, hi, flag`.
    /// Missing values are empty cells.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.columns.clone();
        header.extend(["estimate", "cp_estimate", "lo", "hi", "flag"].map(String::from));
        w.write_record(&header)?;
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:?}")).unwrap_or_default();
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.grid[i].iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.estimates[i]));
            rec.push(fmt(self.cp_estimates.as_ref().map(|c| c[i])));
            rec.push(fmt(self.bands.as_ref().map(|b| b.lo[i])));
            rec.push(fmt(self.bands.as_ref().map(|b| b.hi[i])));
            rec.push(u8::from(self.flags[i]).to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Sign of each estimate (`1`, `-1` or `0`), exact zero threshold.
    pub fn sign_map(&self) -> Vec<i8> {
        self.estimates
            .iter()
            .map(|&v| {
                if v > 0.0 {
                    1
                } else if v < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect()
    }

    /// CSV `<grid columns>, sign`.
    pub fn write_sign_map<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = self.columns.clone();
        header.push("sign".into());
        w.write_record(&header)?;
        for (p, s) in self.grid.iter().zip(self.sign_map()) {
            let mut rec: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
            rec.push(s.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// `n` equally spaced points from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n)
            .map(|i| {
                if i == n - 1 {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// 101 points between the 1st and 99th percentile of `control`.
pub fn default_grid(control: &[f64]) -> Result<Vec<f64>> {
    let cdf = EmpiricalCdf::fit(control)?;
    Ok(linspace(cdf.quantile(0.01)?, cdf.quantile(0.99)?, 101))
}
