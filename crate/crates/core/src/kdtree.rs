//! Static k-d tree with deletion, for exact nearest-neighbor queries
//! ordered by (squared distance, id).

use crate::points::squared_distance;

const LEAF: usize = 16;

#[derive(Debug)]
struct Node {
    lo: usize,
    hi: usize,
    axis: usize,
    split: f64,
    children: Option<(usize, usize)>,
    parent: Option<usize>,
    alive: usize,
}

#[derive(Debug)]
pub(crate) struct KdTree {
    dim: usize,
    coords: Vec<f64>,
    ids: Vec<usize>,
    alive: Vec<bool>,
    leaf_of: Vec<usize>,
    nodes: Vec<Node>,
}

impl KdTree {
    /// `points` holds `ids.len()` rows of `dim` coordinates each.
    pub(crate) fn new(points: &[f64], dim: usize, ids: &[usize]) -> Self {
        assert!(dim > 0 && points.len() == dim * ids.len());
        let n = ids.len();
        let mut slots: Vec<usize> = (0..n).collect();
        let mut nodes = Vec::new();
        build(points, dim, &mut slots, 0, n, None, &mut nodes);
        let mut coords = Vec::with_capacity(points.len());
        for &s in &slots {
            coords.extend_from_slice(&points[s * dim..(s + 1) * dim]);
        }
        let mut leaf_of = vec![0; n];
        for (k, node) in nodes.iter().enumerate() {
            if node.children.is_none() {
                leaf_of[node.lo..node.hi].iter_mut().for_each(|l| *l = k);
            }
        }
        KdTree {
            dim,
            coords,
            ids: slots.iter().map(|&s| ids[s]).collect(),
            alive: vec![true; n],
            leaf_of,
            nodes,
        }
    }

    /// Removes and returns the id of the live point nearest to `q`.
    pub(crate) fn pop_nearest(&mut self, q: &[f64]) -> Option<usize> {
        if self.nodes.is_empty() || self.nodes[0].alive == 0 {
            return None;
        }
        let mut best: Option<(f64, usize, usize)> = None;
        self.search(0, q, &mut best);
        let (_, id, slot) = best?;
        self.alive[slot] = false;
        let mut node = Some(self.leaf_of[slot]);
        while let Some(k) = node {
            self.nodes[k].alive -= 1;
            node = self.nodes[k].parent;
        }
        Some(id)
    }

    fn search(&self, k: usize, q: &[f64], best: &mut Option<(f64, usize, usize)>) {
        let node = &self.nodes[k];
        if node.alive == 0 {
            return;
        }
        match node.children {
            None => {
                for s in node.lo..node.hi {
                    if !self.alive[s] {
                        continue;
                    }
                    let d = squared_distance(&self.coords[s * self.dim..(s + 1) * self.dim], q);
                    let id = self.ids[s];
                    let better = match best {
                        None => true,
                        Some((bd, bid, _)) => d.total_cmp(bd).then(id.cmp(bid)).is_lt(),
                    };
                    if better {
                        *best = Some((d, id, s));
                    }
                }
            }
            Some((left, right)) => {
                let diff = q[node.axis] - node.split;
                let (near, far) = if diff <= 0.0 {
                    (left, right)
                } else {
                    (right, left)
                };
                self.search(near, q, best);
                // Equal bounds can still hide a smaller id, so only prune strictly.
                if best.map_or(true, |(bd, _, _)| diff * diff <= bd) {
                    self.search(far, q, best);
                }
            }
        }
    }
}

fn build(
    points: &[f64],
    dim: usize,
    slots: &mut [usize],
    lo: usize,
    hi: usize,
    parent: Option<usize>,
    nodes: &mut Vec<Node>,
) -> usize {
    let k = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        axis: 0,
        split: 0.0,
        children: None,
        parent,
        alive: hi - lo,
    });
    if hi - lo <= LEAF {
        return k;
    }
    let at = |s: usize, a: usize| points[s * dim + a];
    let range = &mut slots[lo..hi];
    let axis = (0..dim)
        .map(|a| {
            let (mn, mx) = range
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(mn, mx), &s| {
                    (mn.min(at(s, a)), mx.max(at(s, a)))
                });
            (mx - mn, a)
        })
        .max_by(|x, y| x.0.total_cmp(&y.0).then(y.1.cmp(&x.1)))
        .map_or(0, |(_, a)| a);
    let mid = range.len() / 2;
    range.select_nth_unstable_by(mid, |&a, &b| at(a, axis).total_cmp(&at(b, axis)));
    let split = at(range[mid], axis);
    let left = build(points, dim, slots, lo, lo + mid, Some(k), nodes);
    let right = build(points, dim, slots, lo + mid, hi, Some(k), nodes);
    let node = &mut nodes[k];
    node.axis = axis;
    node.split = split;
    node.children = Some((left, right));
    k
}
