use std::collections::BTreeSet;
use std::io::Write;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::curve::{CateCurve, Method};
use crate::data::{split_by_treatment, GroupView, ObservationalDataset, Role};
use crate::discrete::{
    check_size, optimal_coupling_uniform, optimal_matching, CostKind, CostMatrix, Coupling,
};
use crate::error::{Error, Result};
use crate::kdtree::KdTree;
use crate::points::{nearest_indices, squared_distance, Points};
use crate::rng::{substream, Domain};

/// One row of a matching: dataset row indices and `y_treated - y_control`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pair {
    pub control: usize,
    pub treated: usize,
    pub difference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPairs {
    pub pairs: Vec<Pair>,
    /// Which arm (if any) was subsampled to equalize group sizes.
    pub subsampled_group: Option<u8>,
}

impl MatchedPairs {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn mean_difference(&self) -> f64 {
        self.pairs.iter().map(|p| p.difference).sum::<f64>() / self.pairs.len() as f64
    }

    /// Sum of Euclidean distances between matched rows on `columns`.
    pub fn total_distance(&self, data: &ObservationalDataset, columns: &[usize]) -> f64 {
        self.pairs
            .iter()
            .map(|p| {
                let a: Vec<f64> = columns.iter().map(|&j| data.row(p.control)[j]).collect();
                let b: Vec<f64> = columns.iter().map(|&j| data.row(p.treated)[j]).collect();
                squared_distance(&a, &b).sqrt()
            })
            .sum()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["control", "treated", "difference"])?;
        for p in &self.pairs {
            w.write_record([
                p.control.to_string(),
                p.treated.to_string(),
                format!("{:?}", p.difference),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

pub(crate) fn check_columns(data: &ObservationalDataset, columns: &[usize]) -> Result<()> {
    if columns.is_empty() {
        return Err(Error::invalid("at least one covariate column is required"));
    }
    for &j in columns {
        match data.roles().get(j) {
            None => {
                return Err(Error::invalid(format!(
                    "column {j} out of range (k = {})",
                    data.k()
                )))
            }
            Some(Role::Collider) => return Err(Error::ColliderTransport(j)),
            Some(Role::Mediator) => {}
        }
    }
    Ok(())
}

fn select_row(data: &ObservationalDataset, i: usize, columns: &[usize]) -> Vec<f64> {
    columns.iter().map(|&j| data.row(i)[j]).collect()
}

/// Order-preserving float key (`-0.0` folded into `0.0`).
fn ordered_key(x: f64) -> i64 {
    let b = (x + 0.0).to_bits() as i64;
    b ^ (((b >> 63) as u64) >> 1) as i64
}

/// Sequential nearest-neighbor matching with removal, visiting control rows
/// in `order`. Ties go to the smaller treated row index. `treated` lists the
/// candidate treated rows and must have the same length as `order`.
pub fn match_greedy_ordered(
    data: &ObservationalDataset,
    columns: &[usize],
    order: &[usize],
    treated: &[usize],
) -> Result<MatchedPairs> {
    check_columns(data, columns)?;
    if order.len() != treated.len() {
        return Err(Error::DimensionMismatch {
            expected: order.len(),
            got: treated.len(),
        });
    }
    let t = data.treatments();
    if order.iter().any(|&i| i >= data.n() || t[i] != 0)
        || treated.iter().any(|&j| j >= data.n() || t[j] != 1)
    {
        return Err(Error::invalid(
            "matching indices must name control then treated rows",
        ));
    }
    let y = data.outcomes();
    let pair = |i: usize, j: usize| Pair {
        control: i,
        treated: j,
        difference: y[j] - y[i],
    };
    let mut pairs = Vec::with_capacity(order.len());
    if columns.len() == 1 {
        let c = columns[0];
        let mut alive: BTreeSet<(i64, usize)> = treated
            .iter()
            .map(|&j| (ordered_key(data.row(j)[c]), j))
            .collect();
        for &i in order {
            let x = data.row(i)[c];
            let key = ordered_key(x);
            let above = alive.range((key, 0)..).next().copied();
            // Smallest index among the largest values below x.
            let below = alive
                .range(..(key, 0))
                .next_back()
                .and_then(|&(v, _)| alive.range((v, 0)..).next().copied());
            let dist = |e: &(i64, usize)| (data.row(e.1)[c] - x).abs();
            let best = match (below, above) {
                (Some(b), Some(a)) => {
                    let (db, da) = (dist(&b), dist(&a));
                    if db < da || (db == da && b.1 < a.1) {
                        b
                    } else {
                        a
                    }
                }
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (None, None) => unreachable!("one treated row per control row"),
            };
            alive.remove(&best);
            pairs.push(pair(i, best.1));
        }
    } else {
        let coords: Vec<f64> = treated
            .iter()
            .flat_map(|&j| select_row(data, j, columns))
            .collect();
        let mut tree = KdTree::new(&coords, columns.len(), treated);
        for &i in order {
            let j = tree
                .pop_nearest(&select_row(data, i, columns))
                .expect("one treated row per control row");
            pairs.push(pair(i, j));
        }
    }
    Ok(MatchedPairs {
        pairs,
        subsampled_group: None,
    })
}

/// Greedy 1:1 nearest-neighbor matching on `columns`. The larger arm is
/// subsampled uniformly to the smaller arm's size and the control visiting
/// order is shuffled, both from `seed`.
pub fn match_greedy(
    data: &ObservationalDataset,
    columns: &[usize],
    seed: u64,
) -> Result<MatchedPairs> {
    check_columns(data, columns)?;
    let (g0, g1) = split_by_treatment(data)?;
    let (control, treated, subsampled) = equalize(&g0, &g1, seed);
    let mut order = control;
    order.shuffle(&mut substream(seed, Domain::Shuffle, 0));
    let mut m = match_greedy_ordered(data, columns, &order, &treated)?;
    m.subsampled_group = subsampled;
    Ok(m)
}

fn equalize(g0: &GroupView, g1: &GroupView, seed: u64) -> (Vec<usize>, Vec<usize>, Option<u8>) {
    let n = g0.len().min(g1.len());
    let shrink = |g: &GroupView| -> Vec<usize> {
        let mut rng = substream(seed, Domain::Subsample, g.group() as u64);
        let mut pick: Vec<usize> = index::sample(&mut rng, g.len(), n)
            .into_iter()
            .map(|p| g.indices()[p])
            .collect();
        pick.sort_unstable();
        pick
    };
    if g0.len() > n {
        (shrink(g0), g1.indices().to_vec(), Some(0))
    } else if g1.len() > n {
        (g0.indices().to_vec(), shrink(g1), Some(1))
    } else {
        (g0.indices().to_vec(), g1.indices().to_vec(), None)
    }
}

fn cost_between(
    data: &ObservationalDataset,
    columns: &[usize],
    kind: CostKind,
    force: bool,
) -> Result<(GroupView, GroupView, CostMatrix)> {
    check_columns(data, columns)?;
    let (g0, g1) = split_by_treatment(data)?;
    check_size(g0.len(), g1.len(), force)?;
    let cost = CostMatrix::build(&g0.points(data, columns), &g1.points(data, columns), kind)?;
    Ok((g0, g1, cost))
}

/// Optimal one-to-one matching; needs equal arm sizes.
pub fn match_optimal(
    data: &ObservationalDataset,
    columns: &[usize],
    kind: CostKind,
    force: bool,
) -> Result<MatchedPairs> {
    let (g0, g1, cost) = cost_between(data, columns, kind, force)?;
    let m = optimal_matching(&cost)?;
    let y = data.outcomes();
    let pairs = m
        .sigma()
        .iter()
        .enumerate()
        .map(|(a, &b)| {
            let (i, j) = (g0.indices()[a], g1.indices()[b]);
            Pair {
                control: i,
                treated: j,
                difference: y[j] - y[i],
            }
        })
        .collect();
    Ok(MatchedPairs {
        pairs,
        subsampled_group: None,
    })
}

/// Counterfactual treated outcomes of every control row through an optimal
/// coupling with uniform marginals.
#[derive(Debug, Clone)]
pub struct CoupledOutcomes {
    pub control: Vec<usize>,
    pub counterfactual: Vec<f64>,
    pub differences: Vec<f64>,
    pub coupling: Coupling,
}

pub fn couple_outcomes(
    data: &ObservationalDataset,
    columns: &[usize],
    kind: CostKind,
    force: bool,
) -> Result<CoupledOutcomes> {
    let (g0, g1, cost) = cost_between(data, columns, kind, force)?;
    let coupling = optimal_coupling_uniform(&cost)?;
    let y1 = g1.outcomes(data);
    let y0 = g0.outcomes(data);
    let counterfactual: Vec<f64> = coupling
        .rows_normalized()
        .iter()
        .map(|row| row.iter().map(|&(j, w)| w * y1[j]).sum())
        .collect();
    let differences = counterfactual.iter().zip(&y0).map(|(a, b)| a - b).collect();
    Ok(CoupledOutcomes {
        control: g0.indices().to_vec(),
        counterfactual,
        differences,
        coupling,
    })
}

/// Mean of per-control differences over the `k` control rows nearest each
/// grid point (on `columns`).
fn knn_difference_curve(
    data: &ObservationalDataset,
    control: &[usize],
    differences: &[f64],
    columns: &[usize],
    k: usize,
    grid: &Points,
    method: Method,
) -> Result<CateCurve> {
    if k == 0 || k > control.len() {
        return Err(Error::invalid(format!(
            "k = {k} out of range for {} control rows",
            control.len()
        )));
    }
    if grid.dim() != columns.len() {
        return Err(Error::DimensionMismatch {
            expected: columns.len(),
            got: grid.dim(),
        });
    }
    let rows: Vec<Vec<f64>> = control
        .iter()
        .map(|&i| select_row(data, i, columns))
        .collect();
    let pts = Points::from_rows(&rows)?;
    let est = grid
        .rows()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|q| {
            let idx = nearest_indices(&pts, q, k);
            idx.iter().map(|&i| differences[i]).sum::<f64>() / k as f64
        })
        .collect();
    let names = columns.iter().map(|&j| data.names()[j].clone()).collect();
    CateCurve::new(method, names, grid, est)
}

/// SCATE from matched pairs: mean pair difference over the `k` pairs whose
/// control row is nearest each grid point.
pub fn scate_matched(
    data: &ObservationalDataset,
    pairs: &MatchedPairs,
    columns: &[usize],
    k: usize,
    grid: &Points,
) -> Result<CateCurve> {
    let control: Vec<usize> = pairs.pairs.iter().map(|p| p.control).collect();
    let diff: Vec<f64> = pairs.pairs.iter().map(|p| p.difference).collect();
    knn_difference_curve(data, &control, &diff, columns, k, grid, Method::Matched)
}

/// SCATE from coupled counterfactual outcomes.
pub fn scate_coupled(
    data: &ObservationalDataset,
    coupled: &CoupledOutcomes,
    columns: &[usize],
    k: usize,
    grid: &Points,
) -> Result<CateCurve> {
    knn_difference_curve(
        data,
        &coupled.control,
        &coupled.differences,
        columns,
        k,
        grid,
        Method::Coupled,
    )
}
