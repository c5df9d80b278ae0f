//! Gaussian structural equation model with two correlated mediators and one
//! collider, plus its closed-form treatment effects.
//!
//! ```text
//! T   = 1(U_t < threshold)
//! X_1 = mu_t1 + s_t1 U_1
//! X_2 = mu_t2 + s_t2 (r_t U_1 + sqrt(1 - r_t^2) U_2)
//! X_c = mu_c + s_c U_c
//! Y   = alpha + b_1 X_1 + b_2 X_2 + b_c X_c + gamma T + s_y U_y
//! ```
//!
//! Potential outcomes share all noises, so the treated mediator is the
//! affine image of the control one.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ObservationalDataset, Role};
use crate::error::{Error, Result};
use crate::points::Points;
use crate::rng::{substream, Domain};

/// Rows per simulation block; each block owns one substream.
pub const BLOCK_ROWS: usize = 4096;

/// Mediator distribution of one arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmParams {
    pub mean: [f64; 2],
    pub sd: [f64; 2],
    pub corr: f64,
}

impl ArmParams {
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        let [s1, s2] = self.sd;
        let c = self.corr * s1 * s2;
        [[s1 * s1, c], [c, s2 * s2]]
    }

    /// Mediators from standard normals through the lower Cholesky factor.
    pub fn mediators(&self, u1: f64, u2: f64) -> [f64; 2] {
        let r = self.corr;
        [
            self.mean[0] + self.sd[0] * u1,
            self.mean[1] + self.sd[1] * (r * u1 + (1.0 - r * r).sqrt() * u2),
        ]
    }

    /// Slope of `E[X_2 | X_1 = x]` in `x`.
    fn regression_slope(&self) -> f64 {
        self.sd[1] * self.corr / self.sd[0]
    }

    pub fn conditional_x2_mean(&self, x1: f64) -> f64 {
        self.mean[1] + self.regression_slope() * (x1 - self.mean[0])
    }

    pub fn conditional_x2_sd(&self) -> f64 {
        self.sd[1] * (1.0 - self.corr * self.corr).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemParams {
    pub control: ArmParams,
    pub treated: ArmParams,
    pub collider_mean: f64,
    pub collider_sd: f64,
    pub alpha: f64,
    pub beta_m: [f64; 2],
    pub beta_c: f64,
    pub gamma: f64,
    pub noise_sd: f64,
    /// `T = 1(U_t < threshold)`; 0 gives `P(T = 1) = 1/2`.
    pub threshold: f64,
}

/// `intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub intercept: f64,
    pub slope: f64,
}

impl Line {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Effects written as `ATE + delta x + kappa`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectDecomposition {
    pub ate: f64,
    pub delta: f64,
    pub kappa: f64,
}

impl SemParams {
    /// Reference instance: treated mediators `(2 + 1.2 U_1, 0.8 (...))`,
    /// `Y = 2 + T + X_1 - X_2 + X_c + eps`.
    pub fn reference(r: f64) -> Self {
        SemParams {
            control: ArmParams {
                mean: [0.0, 0.0],
                sd: [1.0, 1.0],
                corr: r,
            },
            treated: ArmParams {
                mean: [2.0, 0.0],
                sd: [1.2, 0.8],
                corr: r,
            },
            collider_mean: 0.0,
            collider_sd: 1.0,
            alpha: 2.0,
            beta_m: [1.0, -1.0],
            beta_c: 1.0,
            gamma: 1.0,
            noise_sd: 1.0,
            threshold: 0.0,
        }
    }

    /// Reference instance with the treated mediators distributed as the
    /// control ones, so every CATE equals `gamma`.
    pub fn homogeneous(r: f64) -> Self {
        let mut p = Self::reference(r);
        p.treated = p.control;
        p
    }

    pub fn arm(&self, t: u8) -> &ArmParams {
        if t == 1 {
            &self.treated
        } else {
            &self.control
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.collider_mean,
            self.alpha,
            self.beta_m[0],
            self.beta_m[1],
            self.beta_c,
            self.gamma,
            self.threshold,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("SEM parameters must be finite"));
        }
        for (name, arm) in [("control", &self.control), ("treated", &self.treated)] {
            if arm.mean.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} mediator mean must be finite"
                )));
            }
            if arm.sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::invalid(format!(
                    "{name} mediator sds must be positive"
                )));
            }
            if !(arm.corr > -1.0 && arm.corr < 1.0) {
                return Err(Error::invalid(format!(
                    "{name} correlation {} outside (-1, 1)",
                    arm.corr
                )));
            }
        }
        if !(self.collider_sd > 0.0 && self.collider_sd.is_finite()) {
            return Err(Error::invalid("collider sd must be positive"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::invalid("outcome noise sd must be nonnegative"));
        }
        Ok(())
    }

    /// `E[Y_{T<-1} - Y_{T<-0}]`, including the mediator mean shift.
    pub fn analytic_ate(&self) -> f64 {
        let [b1, b2] = self.beta_m;
        self.gamma
            + b1 * (self.treated.mean[0] - self.control.mean[0])
            + b2 * (self.treated.mean[1] - self.control.mean[1])
    }

    /// The direct effect `gamma` alone.
    pub fn gamma_direct(&self) -> f64 {
        self.gamma
    }

    /// `x -> E[Y_{T<-t} | X_1 = x]` in arm `t`.
    pub fn conditional_mean(&self, t: u8) -> Line {
        let arm = self.arm(t);
        let [b1, b2] = self.beta_m;
        let slope = b1 + b2 * arm.regression_slope();
        let intercept = self.alpha
            + self.gamma * t as f64
            + b2 * (arm.mean[1] - arm.regression_slope() * arm.mean[0])
            + self.beta_c * self.collider_mean;
        Line { intercept, slope }
    }

    /// Counterfactual first mediator `mu_11 + (s_11 / s_01)(x - mu_01)`.
    pub fn transport_x1(&self, x1: f64) -> f64 {
        self.treated.mean[0] + self.treated.sd[0] / self.control.sd[0] * (x1 - self.control.mean[0])
    }

    pub fn analytic_cate_cp(&self, x1: f64) -> f64 {
        self.conditional_mean(1).eval(x1) - self.conditional_mean(0).eval(x1)
    }

    pub fn analytic_cate_mm(&self, x1: f64) -> f64 {
        self.conditional_mean(1).eval(self.transport_x1(x1)) - self.conditional_mean(0).eval(x1)
    }

    /// Ceteris paribus CATE as `ATE + delta x + kappa`.
    pub fn cp_decomposition(&self) -> EffectDecomposition {
        let line = self.line_of(|x| self.analytic_cate_cp(x));
        self.decompose(line)
    }

    /// Mutatis mutandis CATE as `ATE + delta' x + kappa'`.
    pub fn mm_decomposition(&self) -> EffectDecomposition {
        let line = self.line_of(|x| self.analytic_cate_mm(x));
        self.decompose(line)
    }

    /// `CATE_mm - CATE_cp = d x + k`. The slope is
    /// `d = (b_1 + b_2 s_12 r_1 / s_11)(s_11 / s_01 - 1)`: the treated
    /// conditional-mean slope, not `b_1` alone, multiplies the stretch.
    pub fn gap(&self) -> Line {
        let b = self.conditional_mean(1).slope;
        let ratio = self.treated.sd[0] / self.control.sd[0];
        Line {
            slope: b * (ratio - 1.0),
            intercept: b * (self.treated.mean[0] - ratio * self.control.mean[0]),
        }
    }

    fn line_of(&self, f: impl Fn(f64) -> f64) -> Line {
        let intercept = f(0.0);
        Line {
            intercept,
            slope: f(1.0) - intercept,
        }
    }

    fn decompose(&self, line: Line) -> EffectDecomposition {
        let ate = self.analytic_ate();
        EffectDecomposition {
            ate,
            delta: line.slope,
            kappa: line.intercept - ate,
        }
    }
}

/// Simulated dataset plus the latent potential outcomes of every row.
#[derive(Debug, Clone)]
pub struct SemSample {
    pub data: ObservationalDataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
}

impl SemSample {
    /// Mean of `y1* - y0*`.
    pub fn latent_ate(&self) -> f64 {
        self.y1
            .iter()
            .zip(&self.y0)
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / self.y0.len() as f64
    }
}

/// Column names of simulated datasets: two mediators then the collider.
pub const COLUMNS: [&str; 3] = ["x1", "x2", "xc"];

struct Row {
    t: u8,
    x: [f64; 3],
    y0: f64,
    y1: f64,
}

fn draw_row<R: Rng>(p: &SemParams, rng: &mut R) -> Row {
    let mut z = || -> f64 { rng.sample(StandardNormal) };
    let (ut, u1, u2, uc, uy) = (z(), z(), z(), z(), z());
    let t = u8::from(ut < p.threshold);
    let xc = p.collider_mean + p.collider_sd * uc;
    let world = |arm: u8| {
        let m = p.arm(arm).mediators(u1, u2);
        let y = p.alpha
            + p.beta_m[0] * m[0]
            + p.beta_m[1] * m[1]
            + p.beta_c * xc
            + p.gamma * arm as f64
            + p.noise_sd * uy;
        (m, y)
    };
    let (m0, y0) = world(0);
    let (m1, y1) = world(1);
    let m = if t == 1 { m1 } else { m0 };
    Row {
        t,
        x: [m[0], m[1], xc],
        y0,
        y1,
    }
}

/// Draws `n` rows. Block `b` covers rows `b * BLOCK_ROWS ..` and uses
/// substream `b`, so the output depends only on `(params, n, seed)`.
pub fn simulate(params: &SemParams, n: usize, seed: u64) -> Result<SemSample> {
    params.validate()?;
    if n == 0 {
        return Err(Error::invalid("simulation needs n >= 1"));
    }
    let blocks = n.div_ceil(BLOCK_ROWS);
    let rows: Vec<Vec<Row>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, Domain::Simulation, b as u64);
            let len = BLOCK_ROWS.min(n - b * BLOCK_ROWS);
            (0..len).map(|_| draw_row(params, &mut rng)).collect()
        })
        .collect();

    let mut y = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(3 * n);
    let mut y0 = Vec::with_capacity(n);
    let mut y1 = Vec::with_capacity(n);
    for row in rows.into_iter().flatten() {
        y.push(if row.t == 1 { row.y1 } else { row.y0 });
        t.push(row.t);
        x.extend_from_slice(&row.x);
        y0.push(row.y0);
        y1.push(row.y1);
    }
    let data = ObservationalDataset::new(
        y,
        t,
        Points::new(x, 3)?,
        COLUMNS.iter().map(|s| s.to_string()).collect(),
        vec![Role::Mediator, Role::Mediator, Role::Collider],
    )?;
    Ok(SemSample { data, y0, y1 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_closed_forms() {
        let p = SemParams::reference(0.4);
        assert!((p.analytic_ate() - 3.0).abs() < 1e-12);
        assert_eq!(p.gamma_direct(), 1.0);
        assert!((p.analytic_cate_mm(0.0) - 3.0).abs() < 1e-12);
        assert!((p.analytic_cate_mm(1.0) - 3.28).abs() < 1e-12);
        for x in [-1.5, -0.3, 0.0, 0.7, 2.0] {
            let cp = 1.0 + 1.6 * 0.4 / 1.2 + 0.4 / 3.0 * x;
            assert!((p.analytic_cate_cp(x) - cp).abs() < 1e-12);
        }
    }

    #[test]
    fn consistency_triangle() {
        let p = SemParams::reference(0.4);
        let gap = p.gap();
        for i in 0..10 {
            let x = -2.0 + 0.43 * i as f64;
            let diff = p.analytic_cate_mm(x) - p.analytic_cate_cp(x);
            assert!((diff - gap.eval(x)).abs() < 1e-12);
        }
        let cp = p.cp_decomposition();
        let mm = p.mm_decomposition();
        assert!((mm.delta - cp.delta - gap.slope).abs() < 1e-12);
        assert!((mm.kappa - cp.kappa - gap.intercept).abs() < 1e-12);
        assert!((gap.slope - 0.2 * (1.0 - 0.8 * 0.4 / 1.2)).abs() < 1e-12);
    }

    #[test]
    fn homogeneous_effect_is_flat() {
        let p = SemParams::homogeneous(0.4);
        for x in [-1.0, 0.0, 2.5] {
            assert!((p.analytic_cate_cp(x) - 1.0).abs() < 1e-12);
            assert!((p.analytic_cate_mm(x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_flips_with_mirrored_correlations() {
        let mut p = SemParams::reference(0.4);
        p.treated.sd = p.control.sd;
        p.treated.corr = 0.6;
        let up = p.cp_decomposition().delta;
        std::mem::swap(&mut p.treated.corr, &mut p.control.corr);
        let down = p.cp_decomposition().delta;
        assert!(up * down < 0.0);
        assert!((up + down).abs() < 1e-12);
    }

    #[test]
    fn validation() {
        let mut p = SemParams::reference(0.4);
        p.treated.corr = 1.0;
        assert!(p.validate().is_err());
        let mut p = SemParams::reference(0.4);
        p.control.sd[1] = 0.0;
        assert!(simulate(&p, 10, 1).is_err());
        assert!(simulate(&SemParams::reference(0.4), 0, 1).is_err());
    }

    #[test]
    fn simulate_is_deterministic_and_consistent() {
        let p = SemParams::reference(0.4);
        let a = simulate(&p, 5000, 11).unwrap();
        let b = simulate(&p, 5000, 11).unwrap();
        assert_eq!(a.data.outcomes(), b.data.outcomes());
        assert_eq!(
            a.data.covariates().as_slice(),
            b.data.covariates().as_slice()
        );
        for i in 0..a.data.n() {
            let t = a.data.treatments()[i] as f64;
            assert_eq!(a.data.outcomes()[i], t * a.y1[i] + (1.0 - t) * a.y0[i]);
        }
        let one = simulate(&p, 1, 3).unwrap();
        assert_eq!(one.data.row(0), simulate(&p, 1, 3).unwrap().data.row(0));
        // a prefix of a longer run is the shorter run
        let short = simulate(&p, 100, 11).unwrap();
        assert_eq!(short.data.outcomes(), &a.data.outcomes()[..100]);
    }
}
