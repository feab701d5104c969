//! Likelihood score propagation over the branch spanning tree.
//!
//! Each node ends up with the sum, over every node of the tree, of that
//! node's initial score times the product of edge attenuations along the
//! connecting path. Two linear passes compute this: a post-order pass that
//! accumulates subtree sums, then a pre-order pass that adds the
//! contribution of everything outside each subtree.

use serde::Serialize;

use crate::distance::nearest_seed;
use crate::error::{Error, Result};
use crate::par::Parallelism;
use crate::graph::{build_graph_with, longest_branch, prim_mst, GraphParams, ScoredBranch, SpanningTree};
use crate::raster::{BinaryImage, Label, LabelMap};
use crate::skeleton::Branch;

pub const DEFAULT_ITERATIONS: usize = 2;

/// Score clamp applied between iterations.
pub const SCORE_LIMIT: f64 = 0.5;

/// `exp(-cost_pos / sigma_prop)`.
pub fn attenuation(cost_pos: f64, sigma_prop: f64) -> f64 {
    (-cost_pos / sigma_prop).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropagationState {
    pub s_init: Vec<f64>,
    pub s_up: Vec<f64>,
    pub s_fin: Vec<f64>,
    pub iteration: usize,
}

pub fn upward_pass(t: &SpanningTree, s_init: &[f64], p: &GraphParams) -> Vec<f64> {
    let mut up = s_init.to_vec();
    for &v in t.order.iter().rev() {
        if let Some(parent) = t.parent[v] {
            up[parent] += attenuation(t.edge_pos_cost[v], p.sigma_prop) * up[v];
        }
    }
    up
}

pub fn downward_pass(t: &SpanningTree, s_up: &[f64], p: &GraphParams) -> Vec<f64> {
    let mut fin = s_up.to_vec();
    for &v in &t.order {
        if let Some(parent) = t.parent[v] {
            let a = attenuation(t.edge_pos_cost[v], p.sigma_prop);
            fin[v] = s_up[v] + a * (fin[parent] - a * s_up[v]);
        }
    }
    fin
}

/// Both passes on a fixed tree, without clamping.
pub fn aggregate(t: &SpanningTree, s_init: &[f64], p: &GraphParams) -> PropagationState {
    let s_up = upward_pass(t, s_init, p);
    let s_fin = downward_pass(t, &s_up, p);
    PropagationState {
        s_init: s_init.to_vec(),
        s_up,
        s_fin,
        iteration: 0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub scores_in: Vec<f64>,
    pub scores_out: Vec<f64>,
    pub root: usize,
    /// `(parent, child, cost_pos)` per tree edge.
    pub mst_edges: Vec<(usize, usize, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropagationResult {
    pub scores: Vec<f64>,
    pub trace: Vec<IterationTrace>,
}

/// Runs `iterations` rounds of: rebuild the graph with the current scores,
/// take its MST rooted at the longest branch, aggregate, clamp.
pub fn propagate(branches: &[ScoredBranch], p: &GraphParams, iterations: usize) -> Result<PropagationResult> {
    propagate_with(branches, p, iterations, Parallelism::default())
}

/// [`propagate`] with an explicit execution mode for the graph build.
pub fn propagate_with(
    branches: &[ScoredBranch],
    p: &GraphParams,
    iterations: usize,
    par: Parallelism,
) -> Result<PropagationResult> {
    p.validate()?;
    if branches.is_empty() {
        return Err(Error::InvalidParams("propagation needs at least one branch".into()));
    }
    let mut current: Vec<ScoredBranch> = branches.to_vec();
    let root = longest_branch(branches);
    let mut trace = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let g = build_graph_with(&current, p, par);
        let t = prim_mst(&g, root)?;
        let s_init: Vec<f64> = current.iter().map(|b| b.score).collect();
        let state = aggregate(&t, &s_init, p);
        let out: Vec<f64> = state
            .s_fin
            .iter()
            .map(|s| s.clamp(-SCORE_LIMIT, SCORE_LIMIT))
            .collect();
        trace.push(IterationTrace {
            iteration: it,
            scores_in: s_init,
            scores_out: out.clone(),
            root,
            mst_edges: t
                .edges()
                .into_iter()
                .map(|(a, b)| (a, b, t.edge_pos_cost[b]))
                .collect(),
        });
        for (b, s) in current.iter_mut().zip(out) {
            b.score = s;
        }
    }
    Ok(PropagationResult {
        scores: current.iter().map(|b| b.score).collect(),
        trace,
    })
}

/// Maps every vessel pixel to the branch owning the Euclidean-nearest branch
/// pixel. Non-vessel pixels map to `None`.
pub fn assign_pixels_to_branches(
    vessel_mask: &BinaryImage,
    branches: &[Branch],
) -> Vec<Option<usize>> {
    let (w, h) = (vessel_mask.width, vessel_mask.height);
    let owner = crate::skeleton::branch_index_map(branches, w, h);
    let seeds = BinaryImage {
        width: w,
        height: h,
        data: owner.iter().map(|o| o.is_some()).collect(),
    };
    let nearest = nearest_seed(&seeds);
    (0..w * h)
        .map(|i| {
            if vessel_mask.data[i] {
                nearest.seed[i].and_then(|s| owner[s])
            } else {
                None
            }
        })
        .collect()
}

/// Artery where the final score is positive, vein otherwise; non-vessel
/// pixels keep their code.
pub fn relabel(labels: &LabelMap, s_fin: &[f64], assignment: &[Option<usize>]) -> Result<LabelMap> {
    if assignment.len() != labels.width * labels.height {
        return Err(Error::DimensionMismatch(format!(
            "assignment of {} entries for {}x{} labels",
            assignment.len(),
            labels.width,
            labels.height
        )));
    }
    let mut out = labels.clone();
    for y in 0..labels.height {
        for x in 0..labels.width {
            if !labels.get(x, y).is_vessel() {
                continue;
            }
            let k = assignment[y * labels.width + x].ok_or(Error::UnassignedVesselPixel { x, y })?;
            let s = *s_fin
                .get(k)
                .ok_or_else(|| Error::InvalidParams(format!("branch {k} has no score")))?;
            out.set(x, y, if s > 0.0 { Label::Artery } else { Label::Vein });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Label::{Artery as A, Background as B, Vein as V};

    fn p(sigma_prop: f64) -> GraphParams {
        GraphParams {
            sigma_prop,
            ..GraphParams::default()
        }
    }

    #[test]
    fn attenuation_values() {
        assert_eq!(attenuation(0.0, 10.0), 1.0);
        assert!((attenuation(10.0, 10.0) - (-1f64).exp()).abs() < 1e-15);
        assert!((attenuation(10.0, 10.0) - 0.3679).abs() < 1e-4);
        let mut prev = 1.0;
        for k in 1..50 {
            let a = attenuation(k as f64 * 0.3, 2.0);
            assert!(a < prev && a > 0.0);
            prev = a;
        }
    }

    #[test]
    fn single_node() {
        let t = SpanningTree::from_edges(1, &[], 0).unwrap();
        let st = aggregate(&t, &[0.3], &p(10.0));
        assert_eq!(st.s_up, vec![0.3]);
        assert_eq!(st.s_fin, vec![0.3]);
    }

    #[test]
    fn parent_child_hand_evaluation() {
        let t = SpanningTree::from_edges(2, &[(0, 1, 10.0)], 0).unwrap();
        let e = (-1f64).exp();
        let up = upward_pass(&t, &[0.2, 0.4], &p(10.0));
        assert!((up[0] - (0.2 + e * 0.4)).abs() < 1e-15);
        assert_eq!(up[1], 0.4);
        let (a, b) = (0.2, 0.4);
        let fin = downward_pass(&t, &up, &p(10.0));
        assert!((fin[0] - (a + e * b)).abs() < 1e-15);
        assert!((fin[1] - (b + e * a)).abs() < 1e-15);
    }

    #[test]
    fn leaves_and_root_invariants() {
        let t = SpanningTree::from_edges(5, &[(0, 1, 1.0), (0, 2, 2.0), (2, 3, 0.5), (2, 4, 3.0)], 0)
            .unwrap();
        let s = [0.1, -0.2, 0.3, 0.4, -0.5];
        let st = aggregate(&t, &s, &p(2.0));
        for leaf in [1, 3, 4] {
            assert_eq!(st.s_up[leaf], s[leaf]);
        }
        assert_eq!(st.s_fin[0], st.s_up[0]);
    }

    #[test]
    fn relabel_by_sign() {
        let labels = LabelMap::new(4, 1, vec![A, V, B, Label::Outside]).unwrap();
        let assign = vec![Some(0), Some(1), None, None];
        let out = relabel(&labels, &[0.3, 0.0], &assign).unwrap();
        assert_eq!(out.labels(), &[A, V, B, Label::Outside]);
        let out = relabel(&labels, &[-0.3, 0.1], &assign).unwrap();
        assert_eq!(out.labels(), &[V, A, B, Label::Outside]);
        let bad = vec![None, Some(1), None, None];
        assert!(matches!(
            relabel(&labels, &[0.3, 0.0], &bad),
            Err(Error::UnassignedVesselPixel { x: 0, y: 0 })
        ));
    }

    #[test]
    fn pixels_follow_nearest_branch() {
        // two vertical branches, with a junction-like gap pixel between rows
        let b0 = Branch::from_pixels(0, (0..3).map(|y| (1, y)).collect());
        let b1 = Branch::from_pixels(1, (4..7).map(|y| (1, y)).collect());
        let mask = BinaryImage::from_fn(3, 7, |_, _| true);
        let a = assign_pixels_to_branches(&mask, &[b0, b1]);
        assert_eq!(a[2 * 3], Some(0));
        assert_eq!(a[5 * 3 + 2], Some(1));
        assert!(a.iter().all(|o| o.is_some()));
    }
}
