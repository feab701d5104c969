//! Branch graph with position and label costs, and its minimum spanning tree.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::components::DisjointSet;
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::skeleton::Branch;

/// A branch with its re-centred artery likelihood in `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredBranch {
    pub branch: Branch,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub sigma_pos: f64,
    pub sigma_lab: f64,
    pub lambda_angle: f64,
    pub sigma_prop: f64,
    /// Endpoint distance (pixels) beyond which no candidate edge is created.
    pub max_link_distance: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        // The three published magnitudes, assigned so that attenuation falls
        // off over ~10 px of endpoint gap: exp(-d / (sigma_pos * sigma_prop)).
        // The label term stays a tie-breaker next to the distance term.
        Self {
            sigma_pos: 0.1,
            sigma_lab: 10.0,
            lambda_angle: 1.0,
            sigma_prop: 100.0,
            max_link_distance: 50.0,
        }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sigma_pos", self.sigma_pos),
            ("sigma_lab", self.sigma_lab),
            ("sigma_prop", self.sigma_prop),
            ("max_link_distance", self.max_link_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParams(format!("{name} = {v} must be > 0")));
            }
        }
        if !(self.lambda_angle >= 0.0) || !self.lambda_angle.is_finite() {
            return Err(Error::InvalidParams(format!(
                "lambda_angle = {} must be >= 0",
                self.lambda_angle
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedEdge {
    pub i: usize,
    pub j: usize,
    pub cost_total: f64,
    pub cost_pos: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VesselGraph {
    pub nodes: usize,
    pub edges: Vec<WeightedEdge>,
}

impl VesselGraph {
    pub fn is_connected(&self) -> bool {
        let mut ds = DisjointSet::new(self.nodes);
        let mut joined = 0;
        for e in &self.edges {
            if ds.union(e.i, e.j) {
                joined += 1;
            }
        }
        self.nodes == 0 || joined == self.nodes - 1
    }

    /// `i,j,cost_pos,cost_lab` rows for plotting and debugging.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        wtr.write_record(["i", "j", "cost_pos", "cost_lab"])?;
        for e in &self.edges {
            wtr.write_record([
                e.i.to_string(),
                e.j.to_string(),
                e.cost_pos.to_string(),
                (e.cost_total - e.cost_pos).to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Undirected difference between two orientations in `[0, pi)`.
pub fn angle_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).abs() % PI;
    d.min(PI - d)
}

/// Mean of the per-pixel likelihood over the branch, minus 0.5.
pub fn branch_score(b: &Branch, likelihood: &[f64], width: usize) -> Result<f64> {
    if b.pixels.is_empty() {
        return Err(Error::EmptyBranch);
    }
    let sum: f64 = b.pixels.iter().map(|&(x, y)| likelihood[y * width + x]).sum();
    Ok(sum / b.pixels.len() as f64 - 0.5)
}

fn endpoint_distance(p: (usize, usize), q: (usize, usize)) -> f64 {
    let dx = p.0 as f64 - q.0 as f64;
    let dy = p.1 as f64 - q.1 as f64;
    (dx * dx + dy * dy).sqrt()
}

/// Smallest endpoint-to-endpoint distance between two branches.
pub fn min_endpoint_distance(a: &Branch, b: &Branch) -> f64 {
    let mut best = f64::INFINITY;
    for (pa, _) in a.endpoints() {
        for (pb, _) in b.endpoints() {
            best = best.min(endpoint_distance(pa, pb));
        }
    }
    best
}

/// Minimum over the four endpoint pairings of
/// `distance / sigma_pos + lambda_angle * angle_difference`.
pub fn position_cost(a: &Branch, b: &Branch, p: &GraphParams) -> f64 {
    let mut best = f64::INFINITY;
    for (pa, aa) in a.endpoints() {
        for (pb, ab) in b.endpoints() {
            let c = endpoint_distance(pa, pb) / p.sigma_pos + p.lambda_angle * angle_difference(aa, ab);
            best = best.min(c);
        }
    }
    best
}

pub fn label_cost(a: &ScoredBranch, b: &ScoredBranch, p: &GraphParams) -> f64 {
    (a.score - b.score).abs() / p.sigma_lab
}

fn edge(branches: &[ScoredBranch], i: usize, j: usize, p: &GraphParams) -> WeightedEdge {
    let cost_pos = position_cost(&branches[i].branch, &branches[j].branch, p);
    WeightedEdge {
        i,
        j,
        cost_total: cost_pos + label_cost(&branches[i], &branches[j], p),
        cost_pos,
    }
}

pub fn build_graph(branches: &[ScoredBranch], p: &GraphParams) -> VesselGraph {
    build_graph_with(branches, p, Parallelism::default())
}

/// Links every pair of branches whose nearest endpoints are within
/// `max_link_distance`, then adds the cheapest inter-component edges until
/// the graph is connected.
pub fn build_graph_with(branches: &[ScoredBranch], p: &GraphParams, par: Parallelism) -> VesselGraph {
    let n = branches.len();
    let rows: Vec<Vec<WeightedEdge>> = par.map_range(n, |i| {
        ((i + 1)..n)
            .filter(|&j| {
                min_endpoint_distance(&branches[i].branch, &branches[j].branch) <= p.max_link_distance
            })
            .map(|j| edge(branches, i, j, p))
            .collect()
    });
    let mut edges: Vec<WeightedEdge> = rows.into_iter().flatten().collect();

    let mut ds = DisjointSet::new(n);
    let mut joined = 0usize;
    for e in &edges {
        if ds.union(e.i, e.j) {
            joined += 1;
        }
    }
    if n > 1 && joined < n - 1 {
        let roots: Vec<usize> = (0..n).map(|i| ds.find(i)).collect();
        let roots = &roots;
        let mut bridges: Vec<WeightedEdge> = par
            .map_range(n, |i| {
                ((i + 1)..n)
                    .filter(|&j| roots[i] != roots[j])
                    .map(|j| edge(branches, i, j, p))
                    .collect::<Vec<_>>()
            })
            .into_iter()
            .flatten()
            .collect();
        bridges.sort_by(|a, b| {
            a.cost_total
                .total_cmp(&b.cost_total)
                .then((a.i, a.j).cmp(&(b.i, b.j)))
        });
        for e in bridges {
            if ds.union(e.i, e.j) {
                edges.push(e);
                joined += 1;
                if joined == n - 1 {
                    break;
                }
            }
        }
    }
    VesselGraph { nodes: n, edges }
}

/// Rooted spanning tree. `order` lists nodes so that every parent precedes
/// its children (a pre-order), which drives both propagation passes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpanningTree {
    pub root: usize,
    pub parent: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
    /// Position cost of the edge to the parent (0 at the root).
    pub edge_pos_cost: Vec<f64>,
    /// Total cost of the edge to the parent (0 at the root).
    pub edge_total_cost: Vec<f64>,
    pub order: Vec<usize>,
}

impl SpanningTree {
    /// Roots an undirected tree given as `(i, j, cost_pos)` edges.
    pub fn from_edges(nodes: usize, edges: &[(usize, usize, f64)], root: usize) -> Result<Self> {
        let mut adj = vec![Vec::new(); nodes];
        for &(i, j, c) in edges {
            adj[i].push((j, c));
            adj[j].push((i, c));
        }
        let mut parent = vec![None; nodes];
        let mut children = vec![Vec::new(); nodes];
        let mut cost = vec![0.0; nodes];
        let mut seen = vec![false; nodes];
        let mut order = Vec::with_capacity(nodes);
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(u) = stack.pop() {
            order.push(u);
            for &(v, c) in adj[u].iter().rev() {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    cost[v] = c;
                    children[u].push(v);
                    stack.push(v);
                }
            }
        }
        if order.len() != nodes || edges.len() + 1 != nodes {
            return Err(Error::DisconnectedGraph {
                reached: order.len(),
                total: nodes,
            });
        }
        Ok(Self {
            root,
            parent,
            children,
            edge_total_cost: cost.clone(),
            edge_pos_cost: cost,
            order,
        })
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn total_cost(&self) -> f64 {
        self.edge_total_cost.iter().sum()
    }

    /// Tree edges as `(parent, child)` pairs in `order`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.order
            .iter()
            .filter_map(|&v| self.parent[v].map(|p| (p, v)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    cost: f64,
    node: usize,
    from: usize,
    pos: f64,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    // reversed for a min-heap; ties go to the smaller node, then smaller source
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then(other.node.cmp(&self.node))
            .then(other.from.cmp(&self.from))
    }
}

/// Node with the most pixels, smallest index on ties.
pub fn longest_branch(branches: &[ScoredBranch]) -> usize {
    let mut best = 0;
    for (k, b) in branches.iter().enumerate() {
        if b.branch.len() > branches[best].branch.len() {
            best = k;
        }
    }
    best
}

/// Prim's algorithm keyed on `cost_total`, grown from `root`.
pub fn prim_mst(g: &VesselGraph, root: usize) -> Result<SpanningTree> {
    let n = g.nodes;
    if root >= n {
        return Err(Error::InvalidParams(format!("root {root} out of range for {n} nodes")));
    }
    let mut adj: Vec<Vec<(usize, f64, f64)>> = vec![Vec::new(); n];
    for e in &g.edges {
        adj[e.i].push((e.j, e.cost_total, e.cost_pos));
        adj[e.j].push((e.i, e.cost_total, e.cost_pos));
    }
    let mut in_tree = vec![false; n];
    let mut parent = vec![None; n];
    let mut children = vec![Vec::new(); n];
    let mut edge_pos_cost = vec![0.0; n];
    let mut edge_total_cost = vec![0.0; n];
    let mut order = Vec::with_capacity(n);
    let mut heap = BinaryHeap::new();
    heap.push(Candidate {
        cost: 0.0,
        node: root,
        from: usize::MAX,
        pos: 0.0,
    });
    while let Some(c) = heap.pop() {
        if in_tree[c.node] {
            continue;
        }
        in_tree[c.node] = true;
        order.push(c.node);
        if c.from != usize::MAX {
            parent[c.node] = Some(c.from);
            children[c.from].push(c.node);
            edge_pos_cost[c.node] = c.pos;
            edge_total_cost[c.node] = c.cost;
        }
        for &(v, cost, pos) in &adj[c.node] {
            if !in_tree[v] {
                heap.push(Candidate {
                    cost,
                    node: v,
                    from: c.node,
                    pos,
                });
            }
        }
    }
    if order.len() != n {
        return Err(Error::DisconnectedGraph {
            reached: order.len(),
            total: n,
        });
    }
    Ok(SpanningTree {
        root,
        parent,
        children,
        edge_pos_cost,
        edge_total_cost,
        order,
    })
}
