//! Granularity, cut selection and parent/child transition weights.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Aabb, CameraModel, CutEntry, Gaussian, Hierarchy, HierarchyNode};
use crate::render::{Blend, Splat, MAX_ALPHA};

/// Nodes closer than this (meters) are always refined.
pub const NEAR_PLANE: f64 = 0.01;

/// Below this many nodes the per-node passes run serially.
const PARALLEL_THRESHOLD: usize = 1 << 14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GranularityQuery {
    pub camera: CameraModel,
    /// Target granularity in pixels.
    pub tau: f64,
}

/// Projected size in pixels of the largest dimension of `bounds`.
///
/// Depth is the distance from the camera center to the nearest point of the
/// box, so a box containing another never appears smaller. Boxes closer than
/// the near plane, including boxes around the camera, return +inf.
pub fn granularity_of_bounds(bounds: &Aabb, cam: &CameraModel) -> f64 {
    let dist = bounds.distance_to_point(&cam.center());
    if dist <= NEAR_PLANE {
        return f64::INFINITY;
    }
    cam.max_focal() * bounds.largest_dimension() / dist
}

pub fn granularity(node: &HierarchyNode, cam: &CameraModel) -> f64 {
    granularity_of_bounds(&node.bounds, cam)
}

/// Granularity of every node, index-aligned.
pub fn node_granularities(h: &Hierarchy, cam: &CameraModel) -> Vec<f64> {
    if h.len() >= PARALLEL_THRESHOLD {
        h.nodes.par_iter().map(|n| granularity(n, cam)).collect()
    } else {
        h.nodes.iter().map(|n| granularity(n, cam)).collect()
    }
}

/// Cut membership from a node's and its parent's granularity only.
/// Leaves terminate refinement, so they pass the node-side test.
pub fn in_cut(node_eps: f64, parent_eps: Option<f64>, is_leaf: bool, tau: f64) -> bool {
    (is_leaf || node_eps <= tau) && parent_eps.is_none_or(|p| p > tau)
}

/// Indices of the cut at `tau`, ascending.
pub fn cut_nodes(h: &Hierarchy, cam: &CameraModel, tau: f64) -> Vec<usize> {
    let eps = node_granularities(h, cam);
    let test = |i: usize| {
        let n = &h.nodes[i];
        in_cut(eps[i], n.parent.map(|p| eps[p]), n.is_leaf(), tau)
    };
    if h.len() >= PARALLEL_THRESHOLD {
        (0..h.len()).into_par_iter().filter(|&i| test(i)).collect()
    } else {
        (0..h.len()).filter(|&i| test(i)).collect()
    }
}

/// Cut plus per-entry blend parameters.
pub fn select_cut(h: &Hierarchy, q: &GranularityQuery) -> Vec<CutEntry> {
    let eps = node_granularities(h, &q.camera);
    let entry = |i: usize| -> Option<CutEntry> {
        let n = &h.nodes[i];
        let parent_eps = n.parent.map(|p| eps[p]);
        if !in_cut(eps[i], parent_eps, n.is_leaf(), q.tau) {
            return None;
        }
        Some(match n.parent {
            None => CutEntry {
                node: i,
                t: 1.0,
                alpha_prime: 0.0,
            },
            Some(p) => {
                let parent = &h.nodes[p];
                CutEntry {
                    node: i,
                    t: own_weight(eps[i], eps[p], n.is_leaf(), q.tau),
                    alpha_prime: transition_alpha(
                        parent.gaussian.falloff.min(MAX_ALPHA),
                        parent.child_count,
                    ),
                }
            }
        })
    };
    if h.len() >= PARALLEL_THRESHOLD {
        (0..h.len()).into_par_iter().filter_map(entry).collect()
    } else {
        (0..h.len()).filter_map(entry).collect()
    }
}

/// Blend parameters for an already chosen node set, e.g. a cut kept from
/// an earlier frame.
pub fn cut_weights(h: &Hierarchy, cam: &CameraModel, tau: f64, nodes: &[usize]) -> Vec<CutEntry> {
    nodes
        .iter()
        .map(|&i| {
            let n = &h.nodes[i];
            match n.parent {
                None => CutEntry { node: i, t: 1.0, alpha_prime: 0.0 },
                Some(p) => {
                    let parent = &h.nodes[p];
                    CutEntry {
                        node: i,
                        t: own_weight(granularity(n, cam), granularity(parent, cam), n.is_leaf(), tau),
                        alpha_prime: transition_alpha(parent.gaussian.falloff.min(MAX_ALPHA), parent.child_count),
                    }
                }
            }
        })
        .collect()
}

/// `(tau - eps_n) / (eps_p - eps_n)` clamped to `[0, 1]`: how far the
/// target has moved from the node's own granularity towards its parent's.
/// Returns 1 when the two granularities coincide.
pub fn interp_weight(eps_n: f64, eps_p: f64, tau: f64) -> f64 {
    if eps_p == eps_n {
        return 1.0;
    }
    if eps_p.is_infinite() {
        return 0.0;
    }
    ((tau - eps_n) / (eps_p - eps_n)).clamp(0.0, 1.0)
}

/// Weight of a cut node's own attributes. A node that has just replaced its
/// parent (`tau` just below `eps_p`) starts at 0, i.e. renders exactly like
/// the parent, and reaches 1 as `tau` falls to its own granularity. Leaves
/// that are coarser than `tau` render as themselves.
pub fn own_weight(eps_n: f64, eps_p: f64, is_leaf: bool, tau: f64) -> f64 {
    if is_leaf && eps_n > tau {
        return 1.0;
    }
    1.0 - interp_weight(eps_n, eps_p, tau)
}

/// Per-child alpha such that `k` overlapping copies blend to `alpha_p`:
/// `1 - (1 - alpha_p)^(1/k)`.
pub fn transition_alpha(alpha_p: f64, k: usize) -> f64 {
    let k = k.max(1);
    if k == 1 {
        return alpha_p;
    }
    1.0 - (1.0 - alpha_p).powf(1.0 / k as f64)
}

/// Attribute interpolation between an orientation-matched child (`t = 1`)
/// and its parent (`t = 0`). The falloff channel blends towards the parent's
/// per-child transitional alpha for `k` siblings.
pub fn interpolated_gaussian(child: &Gaussian, parent: &Gaussian, t: f64, k: usize) -> Gaussian {
    let s = 1.0 - t;
    let mut qc = child.rotation.into_inner().coords;
    let qp = parent.rotation.into_inner().coords;
    if qc.dot(&qp) < 0.0 {
        qc = -qc;
    }
    let q = (t * qc + s * qp).normalize();
    let mut sh = child.sh;
    for (out, p) in sh.iter_mut().zip(&parent.sh) {
        for ch in 0..3 {
            out[ch] = t * out[ch] + s * p[ch];
        }
    }
    Gaussian {
        mean: t * child.mean + s * parent.mean,
        scale: t * child.scale + s * parent.scale,
        rotation: nalgebra::UnitQuaternion::new_unchecked(nalgebra::Quaternion::from(q)),
        falloff: t * child.falloff + s * transition_alpha(parent.falloff.min(MAX_ALPHA), k),
        sh,
    }
}

/// Renderable splat for one cut entry.
pub fn cut_splat(h: &Hierarchy, entry: &CutEntry) -> Splat {
    let node = &h.nodes[entry.node];
    match node.parent {
        Some(p) if entry.t < 1.0 => {
            let parent = &h.nodes[p];
            let mut gaussian =
                interpolated_gaussian(&node.gaussian, &parent.gaussian, entry.t, parent.child_count);
            gaussian.falloff = node.gaussian.falloff;
            Splat {
                gaussian,
                blend: Blend::Transition {
                    t: entry.t,
                    parent_falloff: parent.gaussian.falloff,
                    siblings: parent.child_count,
                },
            }
        }
        _ => Splat::plain(node.gaussian.clone()),
    }
}

pub fn cut_splats(h: &Hierarchy, cut: &[CutEntry]) -> Vec<Splat> {
    cut.iter().map(|e| cut_splat(h, e)).collect()
}
