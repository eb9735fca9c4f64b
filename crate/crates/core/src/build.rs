//! Hierarchy construction: median-split BVH, bottom-up merging,
//! orientation matching and cut-driven compaction.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lod;
use crate::merge::{match_orientation, merge_node};
use crate::model::{Aabb, CameraModel, Gaussian, Hierarchy, TreeNode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BuildError {
    #[error("cannot build a hierarchy from zero leaves")]
    NoLeaves,
    #[error("sigma extent must be > 0, got {0}")]
    InvalidSigmaExtent(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    /// AABB half-extent in standard deviations.
    pub sigma_extent: f64,
    /// Groups of at most this many leaves become one node with leaf children.
    pub min_leaf_per_node: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            sigma_extent: 3.0,
            min_leaf_per_node: 1,
        }
    }
}

/// World-axis box of the `sigma_extent`-sigma ellipsoid.
pub fn leaf_aabb(g: &Gaussian, cfg: &BuildConfig) -> Aabb {
    let cov = g.covariance();
    let half = Vector3::new(cov[(0, 0)], cov[(1, 1)], cov[(2, 2)]).map(|v| cfg.sigma_extent * v.sqrt());
    Aabb::from_center_half(g.mean, half)
}

/// Split a group by the median projection on the longest axis of its box.
/// Means at the median go to the upper half; if that leaves a side empty,
/// fall back to splitting the (projection, index)-sorted list at n/2.
fn median_split(group: &[usize], leaves: &[Gaussian], boxes: &[Aabb]) -> (Vec<usize>, Vec<usize>) {
    let bounds = group.iter().fold(Aabb::empty(), |b, &i| b.union(&boxes[i]));
    let axis = bounds.longest_axis();
    let proj = |i: usize| leaves[i].mean[axis];
    let mut values: Vec<f64> = group.iter().map(|&i| proj(i)).collect();
    let mid = group.len() / 2;
    let (_, median, _) = values.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let median = *median;
    let (lower, upper): (Vec<usize>, Vec<usize>) = group.iter().partition(|&&i| proj(i) < median);
    if !lower.is_empty() && !upper.is_empty() {
        return (lower, upper);
    }
    let mut sorted = group.to_vec();
    sorted.sort_by(|&a, &b| proj(a).total_cmp(&proj(b)).then(a.cmp(&b)));
    let upper = sorted.split_off(mid);
    (sorted, upper)
}

pub fn build_bvh(leaves: &[Gaussian], cfg: &BuildConfig) -> Result<Hierarchy, BuildError> {
    if leaves.is_empty() {
        return Err(BuildError::NoLeaves);
    }
    if !(cfg.sigma_extent > 0.0) {
        return Err(BuildError::InvalidSigmaExtent(cfg.sigma_extent));
    }
    let boxes: Vec<Aabb> = leaves.par_iter().map(|g| leaf_aabb(g, cfg)).collect();
    let mut tree: Vec<TreeNode> = leaves
        .iter()
        .zip(&boxes)
        .map(|(g, b)| TreeNode {
            gaussian: g.clone(),
            bounds: *b,
            children: Vec::new(),
        })
        .collect();

    let group_limit = cfg.min_leaf_per_node.max(1);
    let root = if leaves.len() == 1 {
        0
    } else {
        let root = tree.len();
        tree.push(tree[0].clone());
        let mut stack = vec![(root, (0..leaves.len()).collect::<Vec<_>>())];
        while let Some((id, group)) = stack.pop() {
            if group.len() <= group_limit {
                tree[id].children = group;
                continue;
            }
            let (lower, upper) = median_split(&group, leaves, &boxes);
            let mut kids = Vec::with_capacity(2);
            for part in [lower, upper] {
                if part.len() == 1 {
                    kids.push(part[0]);
                } else {
                    let c = tree.len();
                    tree.push(tree[part[0]].clone());
                    kids.push(c);
                    stack.push((c, part));
                }
            }
            tree[id].children = kids;
        }
        root
    };

    let mut h = Hierarchy::from_tree(&tree, root, 3);
    merge_bottom_up(&mut h, None);
    match_orientations(&mut h, None);
    Ok(h)
}

/// Node indices grouped by depth, shallowest first.
fn levels(h: &Hierarchy) -> Vec<Vec<usize>> {
    let mut depth = vec![0usize; h.len()];
    let mut out: Vec<Vec<usize>> = vec![vec![0]];
    for i in 1..h.len() {
        let d = depth[h.nodes[i].parent.expect("non-root")] + 1;
        depth[i] = d;
        if out.len() <= d {
            out.push(Vec::new());
        }
        out[d].push(i);
    }
    out
}

/// Recompute interior Gaussians and bounds from their children, deepest
/// level first. With `only`, interior nodes outside the mask keep their
/// Gaussian but still get their bounds refreshed.
pub(crate) fn merge_bottom_up(h: &mut Hierarchy, only: Option<&[bool]>) {
    for level in levels(h).iter().rev() {
        let updates: Vec<(usize, Option<Gaussian>, Aabb)> = level
            .par_iter()
            .filter(|&&i| !h.nodes[i].is_leaf())
            .map(|&i| {
                let node = &h.nodes[i];
                let bounds = node
                    .children()
                    .fold(Aabb::empty(), |b, c| b.union(&h.nodes[c].bounds));
                let remerge = only.is_none_or(|m| m[i]);
                let gaussian = remerge.then(|| {
                    let kids: Vec<Gaussian> =
                        node.children().map(|c| h.nodes[c].gaussian.clone()).collect();
                    merge_node(&kids)
                });
                (i, gaussian, bounds)
            })
            .collect();
        for (i, g, b) in updates {
            if let Some(g) = g {
                h.nodes[i].gaussian = g;
            }
            h.nodes[i].bounds = b;
        }
    }
}

/// Root-down orientation matching of every child to its parent. With
/// `only`, only children of masked parents are touched.
pub(crate) fn match_orientations(h: &mut Hierarchy, only: Option<&[bool]>) {
    for level in levels(h) {
        let hr: &Hierarchy = h;
        let updates: Vec<(usize, Gaussian)> = level
            .par_iter()
            .filter(|&&i| only.is_none_or(|m| m[i]))
            .flat_map_iter(|&i| {
                let parent_rot = hr.nodes[i].gaussian.rotation;
                hr.nodes[i]
                    .children()
                    .map(move |c| (c, match_orientation(&hr.nodes[c].gaussian, &parent_rot)))
                    .collect::<Vec<_>>()
            })
            .collect();
        for (c, g) in updates {
            h.nodes[c].gaussian = g;
        }
    }
}

/// Half the largest image side over all cameras.
pub fn default_tau_max(cams: &[CameraModel]) -> f64 {
    cams.iter()
        .map(|c| c.max_resolution() as f64 / 2.0)
        .fold(0.0, f64::max)
}

/// Sparsify the tree: for `tau = tau_min, 2 tau_min, ... <= tau_max`, mark
/// the bottom-most nodes of the union of all cameras' cuts as relevant and
/// delete every unmarked node between them and previously marked nodes.
/// Surviving children are reparented to their nearest surviving ancestor,
/// so nodes may end up with more than two children.
pub fn compact(h: &Hierarchy, cams: &[CameraModel], tau_min: f64, tau_max: f64) -> Hierarchy {
    let n = h.len();
    let mut relevant: Vec<bool> = h.nodes.iter().map(|nd| nd.is_leaf()).collect();
    let mut deleted = vec![false; n];
    if n == 1 || cams.is_empty() || !(tau_min > 0.0) {
        return h.clone();
    }

    let mut tau = tau_min;
    while tau <= tau_max {
        let union: BTreeSet<usize> = cams
            .par_iter()
            .map(|cam| lod::cut_nodes(h, cam, tau))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect();
        // nodes with a union member strictly below them
        let mut has_desc = vec![false; n];
        for &m in &union {
            let mut cur = h.nodes[m].parent;
            while let Some(p) = cur {
                if has_desc[p] {
                    break;
                }
                has_desc[p] = true;
                cur = h.nodes[p].parent;
            }
        }
        let newly: Vec<usize> = union
            .iter()
            .copied()
            .filter(|&m| !has_desc[m] && !relevant[m])
            .collect();
        for &m in &newly {
            relevant[m] = true;
        }
        for &m in &newly {
            let mut stack: Vec<usize> = h.nodes[m].children().collect();
            while let Some(c) = stack.pop() {
                if relevant[c] || deleted[c] {
                    continue;
                }
                deleted[c] = true;
                stack.extend(h.nodes[c].children());
            }
        }
        tau *= 2.0;
    }

    let mut tree = h.to_tree();
    for i in 0..n {
        if deleted[i] {
            continue;
        }
        let mut kids = Vec::new();
        let mut stack: Vec<usize> = h.nodes[i].children().rev().collect();
        while let Some(c) = stack.pop() {
            if deleted[c] {
                stack.extend(h.nodes[c].children().rev());
            } else {
                kids.push(c);
            }
        }
        tree[i].children = kids;
    }
    Hierarchy::from_tree(&tree, 0, h.sh_degree)
}
