//! Binary collection tree over a placement.
//!
//! Built breadth-first from the sink: each node adopts up to two of its
//! nearest unassigned neighbours. When the breadth-first pass stalls with
//! nodes left over, the shallowest parent with a free slot and a reachable
//! orphan is joined and the pass resumes.

use std::collections::VecDeque;

use serde::Serialize;
use thiserror::Error;

use crate::coverage::GeoPoint;

pub const MAX_CHILDREN: usize = 2;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("node {node} cannot reach the sink within link range")]
    Disconnected { node: usize },
    #[error("no binary tree spans the placement; node {node} has no parent with a free slot")]
    NoBinaryTree { node: usize },
    #[error("node {node} has no tree parent")]
    OrphanNode { node: usize },
    #[error("node {node} has {children} children")]
    TooManyChildren { node: usize, children: usize },
    #[error("node {node} is linked to parent {parent} beyond link range")]
    LinkTooLong { node: usize, parent: usize },
    #[error("node {node} does not reach the sink by following parents")]
    Cycle { node: usize },
    #[error("sink {0} must not have a parent")]
    SinkHasParent(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutingTree {
    pub sink: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Hops to the sink.
    pub depth: Vec<u32>,
}

impl RoutingTree {
    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    /// Node indices from `node` up to and including the sink.
    pub fn path_to_sink(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(p) = self.parent[cur] {
            path.push(p);
            cur = p;
            if path.len() > self.len() {
                break;
            }
        }
        path
    }
}

fn neighbours_by_distance(points: &[GeoPoint], i: usize, range_km: f64) -> Vec<(f64, usize)> {
    let mut out: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, p)| (points[i].distance(p), j))
        .filter(|(d, _)| *d <= range_km + 1e-9)
        .collect();
    out.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    out
}

fn reachable_from(points: &[GeoPoint], start: usize, range_km: f64) -> Vec<bool> {
    let mut seen = vec![false; points.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(i) = queue.pop_front() {
        for (_, j) in neighbours_by_distance(points, i, range_km) {
            if !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}

pub fn build_binary_tree(
    points: &[GeoPoint],
    sink: usize,
    link_range_km: f64,
) -> Result<RoutingTree, TreeError> {
    let n = points.len();
    if let Some(node) = reachable_from(points, sink, link_range_km)
        .iter()
        .position(|r| !r)
    {
        return Err(TreeError::Disconnected { node });
    }
    let mut parent = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut depth = vec![0u32; n];
    let mut assigned = vec![false; n];
    assigned[sink] = true;
    let mut left = n - 1;
    let mut queue = VecDeque::from([sink]);

    while left > 0 {
        while let Some(p) = queue.pop_front() {
            for (_, c) in neighbours_by_distance(points, p, link_range_km) {
                if children[p].len() == MAX_CHILDREN {
                    break;
                }
                if assigned[c] {
                    continue;
                }
                assigned[c] = true;
                parent[c] = Some(p);
                children[p].push(c);
                depth[c] = depth[p] + 1;
                left -= 1;
                queue.push_back(c);
            }
        }
        if left == 0 {
            break;
        }
        // stalled: join the shallowest free parent to its nearest orphan
        let mut best: Option<(u32, f64, usize, usize)> = None;
        for p in (0..n).filter(|&p| assigned[p] && children[p].len() < MAX_CHILDREN) {
            for (d, c) in neighbours_by_distance(points, p, link_range_km) {
                if assigned[c] {
                    continue;
                }
                let cand = (depth[p], d, p, c);
                let better = match best {
                    None => true,
                    Some(b) => (cand.0, cand.1, cand.2, cand.3) < (b.0, b.1, b.2, b.3),
                };
                if better {
                    best = Some(cand);
                }
            }
        }
        let Some((_, _, p, c)) = best else {
            let node = (0..n).find(|&i| !assigned[i]).unwrap();
            return Err(TreeError::NoBinaryTree { node });
        };
        assigned[c] = true;
        parent[c] = Some(p);
        children[p].push(c);
        depth[c] = depth[p] + 1;
        left -= 1;
        queue.push_back(c);
    }

    Ok(RoutingTree {
        sink,
        parent,
        children,
        depth,
    })
}

/// Checks that every non-sink node has one parent within link range, no
/// node has more than two children, and every node reaches the sink.
pub fn validate_tree(tree: &RoutingTree, points: &[GeoPoint], link_range_km: f64) -> Result<(), TreeError> {
    let n = tree.len();
    if tree.parent[tree.sink].is_some() {
        return Err(TreeError::SinkHasParent(tree.sink));
    }
    let mut child_count = vec![0usize; n];
    for (node, p) in tree.parent.iter().enumerate() {
        if node == tree.sink {
            continue;
        }
        let Some(p) = *p else {
            return Err(TreeError::OrphanNode { node });
        };
        if points[node].distance(&points[p]) > link_range_km + 1e-9 {
            return Err(TreeError::LinkTooLong { node, parent: p });
        }
        child_count[p] += 1;
    }
    if let Some((node, &children)) = child_count.iter().enumerate().find(|(_, c)| **c > MAX_CHILDREN) {
        return Err(TreeError::TooManyChildren { node, children });
    }
    for node in 0..n {
        let mut cur = node;
        let mut steps = 0;
        while cur != tree.sink {
            cur = tree.parent[cur].ok_or(TreeError::OrphanNode { node: cur })?;
            steps += 1;
            if steps > n {
                return Err(TreeError::Cycle { node });
            }
        }
    }
    Ok(())
}
