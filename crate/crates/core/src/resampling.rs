//! Stratified bootstrap bands and subsample-size stability tables.
//!
//! Every replicate resamples each treatment arm separately, keeping the arm
//! sizes (bootstrap) or their ratio (subsampling). Replicate `b` draws from
//! its own substream of the master seed, so results do not depend on the
//! number of worker threads.

use std::io::Write;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_by_treatment, ObservationalDataset};
use crate::error::{Error, Result};
use crate::estimators::{Bands, CateCurve, EstimatorSpec};
use crate::points::Points;
use crate::rng::{substream, Domain};

/// Abort when more than this share of replicates fail.
pub const MAX_FAILURE_RATE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMode {
    Bootstrap,
    Subsample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub mode: ResampleMode,
    pub replicates: usize,
    /// Rows per replicate; `None` keeps the full sample size.
    pub size: Option<usize>,
    pub seed: u64,
    /// Central coverage of the percentile bands.
    pub level: f64,
}

impl ResamplePlan {
    pub fn bootstrap(replicates: usize, seed: u64) -> Self {
        ResamplePlan {
            mode: ResampleMode::Bootstrap,
            replicates,
            size: None,
            seed,
            level: 0.95,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.replicates < 2 {
            return Err(Error::invalid("at least 2 replicates are required"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::invalid(format!(
                "band level {} outside (0, 1)",
                self.level
            )));
        }
        match (self.mode, self.size) {
            (_, Some(s)) if s < 2 => Err(Error::invalid("replicates need at least 2 rows")),
            (ResampleMode::Subsample, Some(s)) if s > n => Err(Error::invalid(format!(
                "subsample size {s} exceeds the {n} available rows"
            ))),
            _ => Ok(()),
        }
    }
}

/// Arm sizes of one replicate, for auditing the stratification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicateAudit {
    pub replicate: usize,
    pub n0: usize,
    pub n1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub curve: CateCurve,
    pub replicates: usize,
    pub failed: usize,
    pub audit: Vec<ReplicateAudit>,
    /// Per replicate (in replicate order), the curve estimates; `None` for
    /// failed replicates.
    #[serde(skip)]
    pub draws: Vec<Option<Vec<f64>>>,
}

/// Arm sizes `(n0, n1)` for a replicate of `size >= 2` rows, keeping the
/// ratio and at least one row per arm.
fn arm_sizes(n0: usize, n1: usize, size: usize) -> (usize, usize) {
    let s1 = ((size as f64) * n1 as f64 / (n0 + n1) as f64).round() as usize;
    let s1 = s1.clamp(1, size - 1);
    (size - s1, s1)
}

/// Row indices of one stratified replicate.
fn draw_rows(
    rng: &mut ChaCha8Rng,
    arms: [&[usize]; 2],
    sizes: [usize; 2],
    replace: bool,
) -> Vec<usize> {
    let mut rows = Vec::with_capacity(sizes[0] + sizes[1]);
    for (arm, &m) in arms.iter().zip(&sizes) {
        if replace {
            rows.extend((0..m).map(|_| arm[rng.random_range(0..arm.len())]));
        } else {
            let mut pick: Vec<usize> = index::sample(rng, arm.len(), m)
                .into_iter()
                .map(|p| arm[p])
                .collect();
            pick.sort_unstable();
            rows.extend(pick);
        }
    }
    rows
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn run_replicates(
    data: &ObservationalDataset,
    spec: &EstimatorSpec,
    grid: &Points,
    count: usize,
    domain: Domain,
    stream_base: u64,
    seed: u64,
    sizes: [usize; 2],
    replace: bool,
) -> Result<Vec<(ReplicateAudit, Result<Vec<f64>>)>> {
    let (g0, g1) = split_by_treatment(data)?;
    let arms = [g0.indices(), g1.indices()];
    Ok((0..count)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream(seed, domain, stream_base + b as u64);
            let inner_seed: u64 = rng.random();
            let rows = draw_rows(&mut rng, arms, sizes, replace);
            let audit = ReplicateAudit {
                replicate: b,
                n0: sizes[0],
                n1: sizes[1],
            };
            log::debug!("replicate {b}: n0 = {}, n1 = {}", sizes[0], sizes[1]);
            let rep = data.select_rows(&rows);
            (audit, spec.run(&rep, grid, inner_seed).map(|c| c.estimates))
        })
        .collect())
}

fn check_failures<T>(results: &[(ReplicateAudit, Result<T>)]) -> Result<usize> {
    let failed = results.iter().filter(|r| r.1.is_err()).count();
    if failed as f64 > MAX_FAILURE_RATE * results.len() as f64 {
        let last = results
            .iter()
            .rev()
            .find_map(|r| r.1.as_ref().err())
            .map(|e| e.to_string())
            .unwrap_or_default();
        return Err(Error::ReplicateFailures {
            failed,
            total: results.len(),
            last,
        });
    }
    if failed > 0 {
        log::warn!(
            "{failed} of {} replicates failed and were skipped",
            results.len()
        );
    }
    Ok(failed)
}

/// Point estimate on the full sample plus percentile bands over stratified
/// replicates.
pub fn bootstrap_curve(
    data: &ObservationalDataset,
    spec: &EstimatorSpec,
    grid: &Points,
    plan: &ResamplePlan,
) -> Result<BootstrapResult> {
    plan.validate(data.n())?;
    let (g0, g1) = split_by_treatment(data)?;
    let full = spec.run(data, grid, plan.seed)?;
    let replace = plan.mode == ResampleMode::Bootstrap;
    let sizes = match plan.size {
        None => [g0.len(), g1.len()],
        Some(s) => {
            let (a, b) = arm_sizes(g0.len(), g1.len(), s);
            [a, b]
        }
    };
    let results = run_replicates(
        data,
        spec,
        grid,
        plan.replicates,
        Domain::Bootstrap,
        0,
        plan.seed,
        sizes,
        replace,
    )?;
    let failed = check_failures(&results)?;

    let ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.1.as_ref().ok()).collect();
    let alpha = (1.0 - plan.level) / 2.0;
    let (mut lo, mut hi) = (
        Vec::with_capacity(full.len()),
        Vec::with_capacity(full.len()),
    );
    for p in 0..full.len() {
        let mut v: Vec<f64> = ok.iter().map(|e| e[p]).collect();
        v.sort_by(f64::total_cmp);
        lo.push(quantile_sorted(&v, alpha));
        hi.push(quantile_sorted(&v, 1.0 - alpha));
    }
    let curve = full.with_bands(Bands {
        lo,
        hi,
        level: plan.level,
    })?;
    let audit = results.iter().map(|r| r.0).collect();
    let draws = results.into_iter().map(|r| r.1.ok()).collect();
    Ok(BootstrapResult {
        curve,
        replicates: plan.replicates,
        failed,
        audit,
        draws,
    })
}

/// Per grid point mean and standard deviation of the estimate at one
/// subsample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub size: usize,
    pub point: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityTable {
    pub columns: Vec<String>,
    pub rows: Vec<StabilityRow>,
}

impl StabilityTable {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["size".to_string()];
        header.extend(self.columns.iter().cloned());
        header.extend(["mean", "sd", "replicates"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.size.to_string()];
            rec.extend(r.point.iter().map(|v| format!("{v:?}")));
            rec.push(format!("{:?}", r.mean));
            rec.push(format!("{:?}", r.sd));
            rec.push(r.replicates.to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Rows for one subsample size.
    pub fn at_size(&self, size: usize) -> impl Iterator<Item = &StabilityRow> {
        self.rows.iter().filter(move |r| r.size == size)
    }
}

/// Re-estimates the curve on `replicates` stratified subsamples (without
/// replacement) of every size in `sizes`.
pub fn subsample_stability(
    data: &ObservationalDataset,
    spec: &EstimatorSpec,
    grid: &Points,
    sizes: &[usize],
    replicates: usize,
    seed: u64,
) -> Result<StabilityTable> {
    if replicates == 0 {
        return Err(Error::invalid("at least 1 replicate is required"));
    }
    let (g0, g1) = split_by_treatment(data)?;
    let mut rows = Vec::new();
    for (si, &size) in sizes.iter().enumerate() {
        if size < 2 || size > data.n() {
            return Err(Error::invalid(format!(
                "subsample size {size} outside 2..={}",
                data.n()
            )));
        }
        let (a, b) = arm_sizes(g0.len(), g1.len(), size);
        let results = run_replicates(
            data,
            spec,
            grid,
            replicates,
            Domain::Stability,
            (si as u64) << 24,
            seed,
            [a, b],
            false,
        )?;
        check_failures(&results)?;
        let ok: Vec<&Vec<f64>> = results.iter().filter_map(|r| r.1.as_ref().ok()).collect();
        for p in 0..grid.len() {
            let v: Vec<f64> = ok.iter().map(|e| e[p]).collect();
            let m = v.len() as f64;
            // Deviations from the first draw, so identical draws give sd exactly 0.
            let shift = v[0];
            let offset = v.iter().map(|x| x - shift).sum::<f64>() / m;
            let mean = shift + offset;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - shift - offset).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.push(StabilityRow {
                size,
                point: grid.row(p).to_vec(),
                mean,
                sd,
                replicates: v.len(),
            });
        }
    }
    Ok(StabilityTable {
        columns: spec.grid_columns(data),
        rows,
    })
}
