//! Transportation simplex on the bipartite network `rows -> columns`.
//!
//! The basis is a spanning tree rooted at row 0, started from the northwest
//! corner rule. Potentials satisfy `u_i + v_j = c_ij` on basic cells (MODI);
//! entering cells are chosen by block search over reduced costs and the
//! leaving cell by the last-blocking-arc rule, which keeps the tree strongly
//! feasible and rules out cycling on degenerate pivots.

use std::collections::VecDeque;

use super::cost::CostMatrix;
use crate::error::{Error, Result};

const NONE: usize = usize::MAX;

/// Optimal basic solution: basic cells with their flows plus duals.
#[derive(Debug, Clone)]
pub(crate) struct BasicSolution {
    /// `(row, col, flow)` for every basic cell (`n0 + n1 - 1` entries).
    pub cells: Vec<(usize, usize, f64)>,
    pub row_potentials: Vec<f64>,
    pub col_potentials: Vec<f64>,
    pub pivots: usize,
}

struct Tree<'a> {
    cost: &'a CostMatrix,
    n0: usize,
    cell_row: Vec<usize>,
    cell_col: Vec<usize>,
    flow: Vec<f64>,
    adj: Vec<Vec<usize>>,
    parent: Vec<usize>,
    pred: Vec<usize>,
    depth: Vec<usize>,
    pot: Vec<f64>,
}

impl<'a> Tree<'a> {
    fn col_node(&self, j: usize) -> usize {
        self.n0 + j
    }

    fn is_row(&self, node: usize) -> bool {
        node < self.n0
    }

    fn slot_cost(&self, slot: usize) -> f64 {
        self.cost.get(self.cell_row[slot], self.cell_col[slot])
    }

    fn other_end(&self, slot: usize, node: usize) -> usize {
        let r = self.cell_row[slot];
        if node == r {
            self.col_node(self.cell_col[slot])
        } else {
            r
        }
    }

    /// Sets parent, depth and potential of `child` reached through `slot`.
    fn attach(&mut self, child: usize, parent: usize, slot: usize) {
        self.parent[child] = parent;
        self.pred[child] = slot;
        self.depth[child] = self.depth[parent] + 1;
        self.pot[child] = self.slot_cost(slot) - self.pot[parent];
    }

    /// Recomputes the tree below `start` (whose own links are already set).
    fn rehang_from(&mut self, start: usize, queue: &mut VecDeque<usize>) {
        queue.clear();
        queue.push_back(start);
        while let Some(node) = queue.pop_front() {
            for idx in 0..self.adj[node].len() {
                let slot = self.adj[node][idx];
                if slot == self.pred[node] {
                    continue;
                }
                let child = self.other_end(slot, node);
                self.attach(child, node, slot);
                queue.push_back(child);
            }
        }
    }

    fn remove_adj(&mut self, node: usize, slot: usize) {
        let list = &mut self.adj[node];
        let pos = list
            .iter()
            .position(|&s| s == slot)
            .expect("slot is adjacent");
        list.swap_remove(pos);
    }
}

/// Solves `min <P, C>` over nonnegative `P` with row sums `supply` and
/// column sums `demand`. Both must be positive with equal totals.
pub(crate) fn solve(cost: &CostMatrix, supply: &[f64], demand: &[f64]) -> Result<BasicSolution> {
    let (n0, n1) = (cost.rows(), cost.cols());
    debug_assert_eq!(supply.len(), n0);
    debug_assert_eq!(demand.len(), n1);
    let nodes = n0 + n1;
    let nslots = nodes - 1;

    let mut tree = Tree {
        cost,
        n0,
        cell_row: Vec::with_capacity(nslots),
        cell_col: Vec::with_capacity(nslots),
        flow: Vec::with_capacity(nslots),
        adj: vec![Vec::new(); nodes],
        parent: vec![NONE; nodes],
        pred: vec![NONE; nodes],
        depth: vec![0; nodes],
        pot: vec![0.0; nodes],
    };

    // Northwest corner. On a simultaneous row/column exhaustion the zero cell
    // is placed to the right, so degenerate arcs point away from row 0.
    let mut ra = supply.to_vec();
    let mut rb = demand.to_vec();
    let (mut i, mut j) = (0, 0);
    loop {
        let last = i == n0 - 1 && j == n1 - 1;
        let x = if last {
            ra[i].max(rb[j]).max(0.0)
        } else {
            ra[i].min(rb[j]).max(0.0)
        };
        ra[i] -= x;
        rb[j] -= x;
        let slot = tree.cell_row.len();
        tree.cell_row.push(i);
        tree.cell_col.push(j);
        tree.flow.push(x);
        tree.adj[i].push(slot);
        tree.adj[n0 + j].push(slot);
        if last {
            break;
        }
        if i == n0 - 1 {
            j += 1;
        } else if j == n1 - 1 || ra[i] < rb[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    debug_assert_eq!(tree.cell_row.len(), nslots);

    let mut queue = VecDeque::with_capacity(nodes);
    tree.depth[0] = 0;
    tree.pot[0] = 0.0;
    tree.rehang_from(0, &mut queue);

    let total = n0 * n1;
    let block = ((total as f64).sqrt().ceil() as usize).max(10).min(total);
    let tol = 1e-12 * cost.max().max(f64::MIN_POSITIVE);
    let max_pivots = 50 * total + 10_000;
    let mut next = 0usize;
    let mut pivots = 0usize;

    loop {
        // Block search for an entering cell.
        let mut best = NONE;
        let mut best_rc = -tol;
        let mut scanned = 0;
        let mut in_block = 0;
        while scanned < total {
            let e = next;
            next += 1;
            if next == total {
                next = 0;
            }
            scanned += 1;
            in_block += 1;
            let (r, c) = (e / n1, e % n1);
            let rc = cost.get(r, c) - tree.pot[r] - tree.pot[n0 + c];
            if rc < best_rc {
                best_rc = rc;
                best = e;
            }
            if in_block == block {
                if best != NONE {
                    break;
                }
                in_block = 0;
            }
        }
        if best == NONE {
            break;
        }
        pivots += 1;
        if pivots > max_pivots {
            return Err(Error::Numerical(format!(
                "transportation simplex exceeded {max_pivots} pivots"
            )));
        }

        let (er, ec) = (best / n1, best % n1);
        let first = er;
        let second = n0 + ec;

        // Join node of the cycle.
        let (mut a, mut b) = (first, second);
        while a != b {
            if tree.depth[a] >= tree.depth[b] {
                a = tree.parent[a];
            } else {
                b = tree.parent[b];
            }
        }
        let join = a;

        // Leaving arc: on the first side a row node's pred arc loses flow; on
        // the second side a column node's pred arc loses flow.
        let mut delta = f64::INFINITY;
        let mut leave = NONE;
        let mut leave_first = true;
        let mut u = first;
        while u != join {
            if tree.is_row(u) {
                let d = tree.flow[tree.pred[u]];
                if d < delta {
                    delta = d;
                    leave = u;
                }
            }
            u = tree.parent[u];
        }
        let mut u = second;
        while u != join {
            if !tree.is_row(u) {
                let d = tree.flow[tree.pred[u]];
                if d <= delta {
                    delta = d;
                    leave = u;
                    leave_first = false;
                }
            }
            u = tree.parent[u];
        }
        if leave == NONE {
            return Err(Error::Numerical("unbounded transportation cycle".into()));
        }
        let delta = delta.max(0.0);

        // Augment along the cycle.
        if delta > 0.0 {
            let mut u = first;
            while u != join {
                let s = tree.pred[u];
                if tree.is_row(u) {
                    tree.flow[s] = (tree.flow[s] - delta).max(0.0);
                } else {
                    tree.flow[s] += delta;
                }
                u = tree.parent[u];
            }
            let mut u = second;
            while u != join {
                let s = tree.pred[u];
                if tree.is_row(u) {
                    tree.flow[s] += delta;
                } else {
                    tree.flow[s] = (tree.flow[s] - delta).max(0.0);
                }
                u = tree.parent[u];
            }
        }

        // Swap the leaving slot for the entering cell and re-hang the
        // detached subtree from the entering endpoint inside it.
        let slot = tree.pred[leave];
        let old_parent = tree.parent[leave];
        tree.remove_adj(leave, slot);
        tree.remove_adj(old_parent, slot);
        tree.cell_row[slot] = er;
        tree.cell_col[slot] = ec;
        tree.flow[slot] = delta;
        tree.adj[first].push(slot);
        tree.adj[second].push(slot);
        let (inside, outside) = if leave_first {
            (first, second)
        } else {
            (second, first)
        };
        tree.attach(inside, outside, slot);
        tree.rehang_from(inside, &mut queue);
    }

    let cells = (0..nslots)
        .map(|s| (tree.cell_row[s], tree.cell_col[s], tree.flow[s]))
        .collect();
    Ok(BasicSolution {
        cells,
        row_potentials: tree.pot[..n0].to_vec(),
        col_potentials: tree.pot[n0..].to_vec(),
        pivots,
    })
}
