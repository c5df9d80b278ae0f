//! Discrete Kantorovich problems between the control and treated samples:
//! permutation matchings for equal group sizes and couplings over the
//! transportation polytope `U(a0, a1)` otherwise.

mod cost;
mod simplex;

use std::collections::VecDeque;
use std::io::Write;

pub use cost::{CostKind, CostMatrix};

use crate::error::{Error, Result};

/// Largest `n0 * n1` solved without an explicit override.
pub const MAX_CELLS: usize = 50_000_000;

const MARGINAL_TOL: f64 = 1e-9;

/// Refuses instances above [`MAX_CELLS`] unless `force` is set.
pub fn check_size(n0: usize, n1: usize, force: bool) -> Result<()> {
    let cells = n0.saturating_mul(n1);
    if cells > MAX_CELLS && !force {
        return Err(Error::TooLarge {
            cells,
            limit: MAX_CELLS,
        });
    }
    Ok(())
}

/// Optimal transport plan with its marginals and objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    n0: usize,
    n1: usize,
    /// Nonzero cells `(i, j, mass)` sorted by `(i, j)`.
    entries: Vec<(usize, usize, f64)>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    objective: f64,
}

impl Coupling {
    pub fn shape(&self) -> (usize, usize) {
        (self.n0, self.n1)
    }

    pub fn entries(&self) -> &[(usize, usize, f64)] {
        &self.entries
    }

    pub fn row_marginal(&self) -> &[f64] {
        &self.a0
    }

    pub fn col_marginal(&self) -> &[f64] {
        &self.a1
    }

    /// `<P, C>` at the solution.
    pub fn objective(&self) -> f64 {
        self.objective
    }

    pub fn dense(&self) -> Vec<Vec<f64>> {
        let mut p = vec![vec![0.0; self.n1]; self.n0];
        for &(i, j, m) in &self.entries {
            p[i][j] += m;
        }
        p
    }

    /// Largest absolute violation of `P 1 = a0` and `P^T 1 = a1`.
    pub fn marginal_residual(&self) -> f64 {
        let mut rows = vec![0.0; self.n0];
        let mut cols = vec![0.0; self.n1];
        for &(i, j, m) in &self.entries {
            rows[i] += m;
            cols[j] += m;
        }
        let r = rows.iter().zip(&self.a0).map(|(s, a)| (s - a).abs());
        let c = cols.iter().zip(&self.a1).map(|(s, a)| (s - a).abs());
        r.chain(c).fold(0.0, f64::max)
    }

    /// Row `i` divided by `a0[i]`: the counterfactual weights over treated rows
    /// for control row `i`. Each returned vector sums to one.
    pub fn rows_normalized(&self) -> Vec<Vec<(usize, f64)>> {
        let mut out = vec![Vec::new(); self.n0];
        for &(i, j, m) in &self.entries {
            out[i].push((j, m / self.a0[i]));
        }
        out
    }

    /// Sparse `i,j,mass` CSV export.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "mass"])?;
        for &(i, j, m) in &self.entries {
            w.write_record([i.to_string(), j.to_string(), format!("{m:?}")])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Per-control-row normalized coupling weights.
pub fn coupling_rows(p: &Coupling) -> Vec<Vec<(usize, f64)>> {
    p.rows_normalized()
}

/// Solves `min <P, C>` over `U(a0, a1)`. Weights must be positive and the
/// totals must agree within 1e-9.
pub fn optimal_coupling(cost: &CostMatrix, a0: &[f64], a1: &[f64]) -> Result<Coupling> {
    let (n0, n1) = (cost.rows(), cost.cols());
    if a0.len() != n0 {
        return Err(Error::DimensionMismatch {
            expected: n0,
            got: a0.len(),
        });
    }
    if a1.len() != n1 {
        return Err(Error::DimensionMismatch {
            expected: n1,
            got: a1.len(),
        });
    }
    if a0.iter().chain(a1).any(|w| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::invalid(
            "marginal weights must be positive and finite",
        ));
    }
    let (s0, s1): (f64, f64) = (a0.iter().sum(), a1.iter().sum());
    if (s0 - s1).abs() > MARGINAL_TOL {
        return Err(Error::UnbalancedMarginals(s0, s1));
    }
    let sol = simplex::solve(cost, a0, a1)?;
    log::debug!("coupling {n0}x{n1}: {} pivots", sol.pivots);
    finish(cost, sol.cells, a0.to_vec(), a1.to_vec(), 1.0)
}

/// Coupling with the default marginals `a0 = 1`, `a1 = (n0 / n1) 1`.
///
/// Solved internally on the integer-scaled problem (rows `n1`, columns `n0`)
/// so every pivot is exact, then rescaled.
pub fn optimal_coupling_uniform(cost: &CostMatrix) -> Result<Coupling> {
    let (n0, n1) = (cost.rows(), cost.cols());
    let sol = simplex::solve(cost, &vec![n1 as f64; n0], &vec![n0 as f64; n1])?;
    log::debug!("coupling {n0}x{n1}: {} pivots", sol.pivots);
    let ratio = n0 as f64 / n1 as f64;
    finish(
        cost,
        sol.cells,
        vec![1.0; n0],
        vec![ratio; n1],
        1.0 / n1 as f64,
    )
}

fn finish(
    cost: &CostMatrix,
    cells: Vec<(usize, usize, f64)>,
    a0: Vec<f64>,
    a1: Vec<f64>,
    scale: f64,
) -> Result<Coupling> {
    let mut entries: Vec<(usize, usize, f64)> = cells
        .into_iter()
        .filter(|&(_, _, m)| m > 0.0)
        .map(|(i, j, m)| (i, j, m * scale))
        .collect();
    entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
    let objective = entries.iter().map(|&(i, j, m)| m * cost.get(i, j)).sum();
    let p = Coupling {
        n0: cost.rows(),
        n1: cost.cols(),
        entries,
        a0,
        a1,
        objective,
    };
    let residual = p.marginal_residual();
    if residual > MARGINAL_TOL {
        return Err(Error::Numerical(format!(
            "coupling violates its marginals by {residual:e}"
        )));
    }
    Ok(p)
}

/// A permutation `i -> sigma(i)` pairing control row `i` with treated row `sigma(i)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Matching {
    sigma: Vec<usize>,
}

impl Matching {
    pub fn new(sigma: Vec<usize>) -> Result<Self> {
        let n = sigma.len();
        let mut seen = vec![false; n];
        for &j in &sigma {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(Error::invalid("matching is not a permutation"));
            }
        }
        Ok(Matching { sigma })
    }

    pub fn identity(n: usize) -> Self {
        Matching {
            sigma: (0..n).collect(),
        }
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn cost(&self, c: &CostMatrix) -> f64 {
        self.sigma
            .iter()
            .enumerate()
            .map(|(i, &j)| c.get(i, j))
            .sum()
    }

    /// Two-column `control_index,treated_index` CSV export.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["control_index", "treated_index"])?;
        for (i, &j) in self.sigma.iter().enumerate() {
            w.write_record([i.to_string(), j.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Minimum-cost permutation for a square cost matrix. Among optimal
/// permutations the lexicographically smallest `sigma` is returned.
pub fn optimal_matching(cost: &CostMatrix) -> Result<Matching> {
    let n = cost.rows();
    if cost.cols() != n {
        return Err(Error::invalid(format!(
            "optimal matching needs a square cost matrix, got {}x{}",
            n,
            cost.cols()
        )));
    }
    let ones = vec![1.0; n];
    let sol = simplex::solve(cost, &ones, &ones)?;
    log::debug!("matching {n}x{n}: {} pivots", sol.pivots);

    // Unit marginals keep every pivot integral, so the basic solution is a permutation.
    let mut sigma = vec![usize::MAX; n];
    for &(i, j, f) in &sol.cells {
        if f > 0.5 {
            sigma[i] = j;
        }
    }
    if sigma.contains(&usize::MAX) {
        return Err(Error::Numerical(
            "assignment solution is not integral".into(),
        ));
    }

    // Every optimal permutation uses only cells with zero reduced cost, and
    // every perfect matching on those cells is optimal.
    let tol = 1e-9 * cost.max().max(f64::MIN_POSITIVE);
    let tight: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let u = sol.row_potentials[i];
            (0..n)
                .filter(|&j| cost.get(i, j) - u - sol.col_potentials[j] <= tol)
                .collect()
        })
        .collect();
    if tight.iter().all(|t| t.len() == 1) {
        return Matching::new(sigma);
    }
    Matching::new(lexicographic_min(&tight, sigma))
}

/// Lexicographically smallest perfect matching in the bipartite graph `adj`
/// (rows to sorted column lists), starting from a known perfect matching.
fn lexicographic_min(adj: &[Vec<usize>], mut sigma: Vec<usize>) -> Vec<usize> {
    let n = adj.len();
    let mut owner = vec![0; n];
    for (i, &j) in sigma.iter().enumerate() {
        owner[j] = i;
    }
    let mut fixed_col = vec![false; n];
    // came_from[r] = (p, c): row p takes column c, which row r held.
    let mut came_from = vec![(usize::MAX, usize::MAX); n];
    let mut visited = vec![false; n];
    let mut queue = VecDeque::new();

    for i in 0..n {
        for &j in &adj[i] {
            if fixed_col[j] {
                continue;
            }
            if sigma[i] == j {
                break;
            }
            // Force (i, j): the row holding j must reach the column sigma[i]
            // that i releases, through an alternating path among rows > i.
            let target = sigma[i];
            let start = owner[j];
            visited.iter_mut().for_each(|v| *v = false);
            queue.clear();
            queue.push_back(start);
            visited[start] = true;
            let mut end = None;
            'bfs: while let Some(r) = queue.pop_front() {
                for &c in &adj[r] {
                    if fixed_col[c] || c == j || c == sigma[r] {
                        continue;
                    }
                    if c == target {
                        end = Some(r);
                        break 'bfs;
                    }
                    let next = owner[c];
                    if !visited[next] {
                        visited[next] = true;
                        came_from[next] = (r, c);
                        queue.push_back(next);
                    }
                }
            }
            let Some(end) = end else { continue };
            let mut moves = vec![(end, target)];
            let mut r = end;
            while r != start {
                let (p, c) = came_from[r];
                moves.push((p, c));
                r = p;
            }
            for (r, c) in moves {
                sigma[r] = c;
                owner[c] = r;
            }
            sigma[i] = j;
            owner[j] = i;
            break;
        }
        fixed_col[sigma[i]] = true;
    }
    sigma
}
