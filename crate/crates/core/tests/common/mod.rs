//! Oracles and fixtures shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use nalgebra::DMatrix;
use otcf::data::ObservationalDataset;
use otcf::discrete::CostMatrix;
use otcf::points::Points;
use otcf::sem::SemParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Dataset from columns; every covariate a mediator.
pub fn dataset(y: Vec<f64>, t: Vec<u8>, x: Vec<Vec<f64>>) -> ObservationalDataset {
    let k = x[0].len();
    let names = (1..=k).map(|j| format!("x{j}")).collect();
    ObservationalDataset::new(y, t, Points::from_rows(&x).unwrap(), names, vec![]).unwrap()
}

pub fn dataset_1d(y: Vec<f64>, t: Vec<u8>, x: Vec<f64>) -> ObservationalDataset {
    dataset(y, t, x.into_iter().map(|v| vec![v]).collect())
}

/// Minimum of `sum_i C[i, s(i)]` over every permutation `s` (Heap's algorithm).
pub fn exhaustive_min(c: &CostMatrix) -> f64 {
    let n = c.rows();
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| p.iter().enumerate().map(|(i, &j)| c.get(i, j)).sum::<f64>();
    let mut best = cost(&perm);
    let mut stack = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(cost(&perm));
            stack[i] += 1;
            i = 0;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    best
}

/// Optimal value of the vectorized transport LP `min c.p` subject to
/// row sums `a0`, column sums `a1`, `p >= 0`.
pub fn lp_coupling_objective(c: &CostMatrix, a0: &[f64], a1: &[f64]) -> f64 {
    let (n0, n1) = (c.rows(), c.cols());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<Vec<_>> = (0..n0)
        .map(|i| {
            (0..n1)
                .map(|j| lp.add_var(c.get(i, j), (0.0, f64::INFINITY)))
                .collect()
        })
        .collect();
    for (i, row) in vars.iter().enumerate() {
        lp.add_constraint(
            row.iter().map(|&v| (v, 1.0)).collect::<Vec<_>>(),
            ComparisonOp::Eq,
            a0[i],
        );
    }
    for j in 0..n1 {
        lp.add_constraint(
            vars.iter().map(|row| (row[j], 1.0)).collect::<Vec<_>>(),
            ComparisonOp::Eq,
            a1[j],
        );
    }
    lp.solve()
        .expect("balanced transport LP is feasible")
        .objective()
}

/// `B^T B + eps I` for a random Gaussian `B`.
pub fn random_spd(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
    let b = DMatrix::from_fn(k, k, |_, _| normal(rng));
    b.transpose() * &b + DMatrix::identity(k, k) * 0.05
}

pub fn frobenius_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

/// One draw of both potential worlds of the SEM, written out from the
/// structural equations with its own noise stream.
pub struct World {
    pub x1_control: f64,
    pub x1_treated: f64,
    pub y0: f64,
    pub y1: f64,
}

pub fn draw_world(p: &SemParams, rng: &mut ChaCha8Rng) -> World {
    let (u1, u2, uc, uy) = (normal(rng), normal(rng), normal(rng), normal(rng));
    let xc = p.collider_mean + p.collider_sd * uc;
    let arm = |t: u8| {
        let a = if t == 0 { &p.control } else { &p.treated };
        let x1 = a.mean[0] + a.sd[0] * u1;
        let x2 = a.mean[1] + a.sd[1] * (a.corr * u1 + (1.0 - a.corr * a.corr).sqrt() * u2);
        let y = p.alpha
            + p.beta_m[0] * x1
            + p.beta_m[1] * x2
            + p.beta_c * xc
            + p.gamma * f64::from(t)
            + p.noise_sd * uy;
        (x1, y)
    };
    let (x1_control, y0) = arm(0);
    let (x1_treated, y1) = arm(1);
    World {
        x1_control,
        x1_treated,
        y0,
        y1,
    }
}

pub fn worlds(p: &SemParams, n: usize, seed: u64) -> Vec<World> {
    let mut r = rng(seed);
    (0..n).map(|_| draw_world(p, &mut r)).collect()
}

/// Mean and standard error of `values`.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Window averages around `x`: `E[Y1* - Y0* | X1(0) = x]` (mutatis
/// mutandis) and `E[Y1* | X1(1) = x] - E[Y0* | X1(0) = x]` (ceteris paribus).
pub fn windowed_cates(ws: &[World], x: f64, half_width: f64) -> (f64, f64) {
    let near = |v: f64| (v - x).abs() <= half_width;
    let mm: Vec<f64> = ws
        .iter()
        .filter(|w| near(w.x1_control))
        .map(|w| w.y1 - w.y0)
        .collect();
    let y1: Vec<f64> = ws
        .iter()
        .filter(|w| near(w.x1_treated))
        .map(|w| w.y1)
        .collect();
    let y0: Vec<f64> = ws
        .iter()
        .filter(|w| near(w.x1_control))
        .map(|w| w.y0)
        .collect();
    (mean_se(&mm).0, mean_se(&y1).0 - mean_se(&y0).0)
}

/// Least-squares line `(intercept, slope)` and the slope's standard error.
pub fn ols(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let se = (rss / (n - 2.0) / sxx).sqrt();
    (intercept, slope, se)
}

/// Brute-force gap slope `b1 (s11 / s01 - 1)` with its delta-method
/// standard error, where `b1` is the slope of `Y1*` on the treated-world
/// `x1` and `s01`, `s11` the two worlds' `x1` standard deviations.
pub fn gap_slope_oracle(p: &SemParams, draws: usize, seed: u64) -> (f64, f64) {
    let ws = worlds(p, draws, seed);
    let x1t: Vec<f64> = ws.iter().map(|w| w.x1_treated).collect();
    let x1c: Vec<f64> = ws.iter().map(|w| w.x1_control).collect();
    let y1: Vec<f64> = ws.iter().map(|w| w.y1).collect();
    let (_, b1, b1_se) = ols(&x1t, &y1);
    let sd = |v: &[f64]| mean_se(v).1 * (v.len() as f64).sqrt();
    let ratio = sd(&x1t) / sd(&x1c);
    let d = b1 * (ratio - 1.0);
    (d, b1_se * (ratio - 1.0).abs())
}
