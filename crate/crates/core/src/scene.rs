//! Chunked large-scene handling: ground-plane grid, camera assignment,
//! skybox, per-chunk leaf assembly and consolidation into one hierarchy.
//!
//! The ground plane is x/z; y is vertical and never partitioned.

use std::collections::BTreeSet;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::build::{match_orientations, merge_bottom_up};
use crate::merge::{match_orientation, merge_node};
use crate::model::{Aabb, CameraModel, Gaussian, Hierarchy, SfmPointSet, TreeNode};

/// Cameras need strictly more observed SfM points than this inside a chunk
/// to be assigned from its 2x neighbourhood.
pub const MIN_SFM_POINTS: usize = 50;
pub const SKYBOX_FALLOFF: f64 = 0.7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("no cameras")]
    EmptyScene,
    #[error("chunk size must be > 0, got {0}")]
    InvalidChunkSize(f64),
    #[error("scene diameter must be > 0, got {0}")]
    InvalidDiameter(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub grid: [i32; 2],
    /// Vertical extent spans the scene but is ignored by membership tests.
    pub bounds: Aabb,
    pub camera_ids: BTreeSet<u32>,
    pub sfm_point_ids: BTreeSet<u32>,
}

/// Ground-plane containment, closed bounds.
pub fn ground_contains(b: &Aabb, p: &Vector3<f64>) -> bool {
    p.x >= b.min.x && p.x <= b.max.x && p.z >= b.min.z && p.z <= b.max.z
}

/// Ground-plane distance from `p` to the box, 0 inside.
pub fn ground_distance(b: &Aabb, p: &Vector3<f64>) -> f64 {
    let dx = (b.min.x - p.x).max(p.x - b.max.x).max(0.0);
    let dz = (b.min.z - p.z).max(p.z - b.max.z).max(0.0);
    dx.hypot(dz)
}

/// `b` scaled by `factor` about its center on the ground axes.
pub fn ground_scaled(b: &Aabb, factor: f64) -> Aabb {
    let c = b.center();
    let mut half = b.extent() / 2.0;
    half.x *= factor;
    half.z *= factor;
    Aabb::from_center_half(c, half)
}

/// Cameras inside the chunk, or inside its 2x bounds with more than
/// [`MIN_SFM_POINTS`] of their observed SfM points inside the chunk.
pub fn assign_cameras(chunk: &ChunkSpec, cams: &[(u32, CameraModel)], sfm: &SfmPointSet) -> BTreeSet<u32> {
    let wide = ground_scaled(&chunk.bounds, 2.0);
    cams.iter()
        .filter(|(id, cam)| {
            let c = cam.center();
            if ground_contains(&chunk.bounds, &c) {
                return true;
            }
            if !ground_contains(&wide, &c) {
                return false;
            }
            let inside = sfm
                .observations_of(*id)
                .iter()
                .filter(|o| {
                    sfm.positions
                        .get(o.point as usize)
                        .is_some_and(|p| ground_contains(&chunk.bounds, p))
                })
                .count();
            inside > MIN_SFM_POINTS
        })
        .map(|(id, _)| *id)
        .collect()
}

/// Square grid over the ground rectangle of the camera centers, origin at
/// its min corner. Chunks without cameras are dropped.
pub fn make_grid(sfm: &SfmPointSet, cams: &[(u32, CameraModel)], chunk_size: f64) -> Result<Vec<ChunkSpec>, SceneError> {
    if !(chunk_size > 0.0 && chunk_size.is_finite()) {
        return Err(SceneError::InvalidChunkSize(chunk_size));
    }
    if cams.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    let mut rect = Aabb::empty();
    for (_, c) in cams {
        rect.grow(&c.center());
    }
    let mut vertical = rect;
    for p in &sfm.positions {
        vertical.grow(p);
    }
    let cells = |span: f64| ((span / chunk_size).ceil() as i32).max(1);
    let (nx, nz) = (cells(rect.max.x - rect.min.x), cells(rect.max.z - rect.min.z));
    let mut out = Vec::new();
    for gz in 0..nz {
        for gx in 0..nx {
            let min = Vector3::new(
                rect.min.x + gx as f64 * chunk_size,
                vertical.min.y,
                rect.min.z + gz as f64 * chunk_size,
            );
            let max = Vector3::new(min.x + chunk_size, vertical.max.y, min.z + chunk_size);
            let bounds = Aabb { min, max };
            let mut chunk = ChunkSpec {
                grid: [gx, gz],
                bounds,
                camera_ids: BTreeSet::new(),
                sfm_point_ids: sfm
                    .positions
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| ground_contains(&bounds, p))
                    .map(|(i, _)| i as u32)
                    .collect(),
            };
            chunk.camera_ids = assign_cameras(&chunk, cams, sfm);
            if !chunk.camera_ids.is_empty() {
                out.push(chunk);
            }
        }
    }
    Ok(out)
}

/// `count` Gaussians spread uniformly over a sphere of radius
/// `5 * diameter` around `center`, gray, falloff 0.7.
pub fn make_skybox(diameter: f64, center: Vector3<f64>, count: usize, seed: u64) -> Result<Vec<Gaussian>, SceneError> {
    if !(diameter > 0.0 && diameter.is_finite()) {
        return Err(SceneError::InvalidDiameter(diameter));
    }
    let radius = 5.0 * diameter;
    let sigma = 2.0 * std::f64::consts::PI * radius / (count.max(1) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let v: Vector3<f64> = Vector3::from_fn(|_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n < 1e-12 {
            continue;
        }
        out.push(Gaussian::isotropic(center + v * (radius / n), sigma, SKYBOX_FALLOFF, [0.5; 3]));
    }
    Ok(out)
}

/// A chunk's leaves plus scaffold Gaussians from its neighbourhood (outside
/// the chunk, inside its 2x bounds) as backdrop. The flag marks leaves
/// owned by the chunk.
pub fn assemble_chunk_leaves(chunk: &ChunkSpec, trained: &[Gaussian], scaffold: &[Gaussian]) -> Vec<(Gaussian, bool)> {
    let wide = ground_scaled(&chunk.bounds, 2.0);
    trained
        .iter()
        .map(|g| (g.clone(), true))
        .chain(
            scaffold
                .iter()
                .filter(|g| !ground_contains(&chunk.bounds, &g.mean) && ground_contains(&wide, &g.mean))
                .map(|g| (g.clone(), false)),
        )
        .collect()
}

/// What a child of the global root came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Chunk(usize),
    Skybox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Consolidated {
    pub hierarchy: Hierarchy,
    /// Owner of each child of the root, in child order.
    pub owners: Vec<Owner>,
}

impl Consolidated {
    /// Owner of the root child above `node`; `None` for the root.
    pub fn owner_of(&self, mut node: usize) -> Option<Owner> {
        let root_first = self.hierarchy.nodes[0].first_child;
        loop {
            let parent = self.hierarchy.nodes[node].parent?;
            if parent == 0 {
                return Some(self.owners[node - root_first]);
            }
            node = parent;
        }
    }
}

/// Leaves of `chunks[me]` that should go: outside their chunk and strictly
/// closer, on the ground plane, to some other chunk.
fn misplaced(leaf: &Vector3<f64>, me: usize, bounds: &[Aabb]) -> bool {
    if ground_contains(&bounds[me], leaf) {
        return false;
    }
    let own = ground_distance(&bounds[me], leaf);
    bounds
        .iter()
        .enumerate()
        .any(|(j, b)| j != me && ground_distance(b, leaf) < own)
}

/// Remove misplaced leaves of one chunk hierarchy, splicing out interiors
/// left with fewer than two children and re-merging what changed.
fn prune_chunk(h: &Hierarchy, me: usize, bounds: &[Aabb]) -> Option<Hierarchy> {
    let n = h.len();
    // post-order: children have larger indices than parents
    let mut kept: Vec<Option<usize>> = vec![None; n];
    let mut dirty_tree: Vec<bool> = Vec::new();
    let mut tree: Vec<TreeNode> = Vec::new();
    let mut lost = vec![false; n];
    for i in (0..n).rev() {
        let node = &h.nodes[i];
        if node.is_leaf() {
            if misplaced(&node.gaussian.mean, me, bounds) {
                lost[i] = true;
                continue;
            }
            kept[i] = Some(tree.len());
            tree.push(TreeNode {
                gaussian: node.gaussian.clone(),
                bounds: node.bounds,
                children: Vec::new(),
            });
            dirty_tree.push(false);
            continue;
        }
        let kids: Vec<usize> = node.children().filter_map(|c| kept[c]).collect();
        lost[i] = node.children().any(|c| lost[c]);
        match kids.len() {
            0 => {}
            1 => kept[i] = Some(kids[0]),
            _ => {
                kept[i] = Some(tree.len());
                tree.push(TreeNode {
                    gaussian: node.gaussian.clone(),
                    bounds: node.bounds,
                    children: kids,
                });
                dirty_tree.push(lost[i]);
            }
        }
    }
    let root = kept[0]?;
    let (mut out, map) = Hierarchy::from_tree_mapped(&tree, root, h.sh_degree);
    let mut dirty = vec![false; out.len()];
    for (t, &d) in dirty_tree.iter().enumerate() {
        if d && map[t] != usize::MAX {
            dirty[map[t]] = true;
        }
    }
    merge_bottom_up(&mut out, Some(&dirty));
    match_orientations(&mut out, Some(&dirty));
    Some(out)
}

/// Prune cross-chunk overlap and join all chunk hierarchies and the skybox
/// under one global root.
pub fn consolidate(chunks: &[(ChunkSpec, Hierarchy)], skybox: Option<&Hierarchy>) -> Consolidated {
    let bounds: Vec<Aabb> = chunks.iter().map(|(c, _)| c.bounds).collect();
    let pruned: Vec<Option<Hierarchy>> = chunks
        .par_iter()
        .enumerate()
        .map(|(i, (_, h))| prune_chunk(h, i, &bounds))
        .collect();

    let mut parts: Vec<(Owner, &Hierarchy)> = pruned
        .iter()
        .enumerate()
        .filter_map(|(i, h)| h.as_ref().map(|h| (Owner::Chunk(i), h)))
        .collect();
    if let Some(sky) = skybox {
        parts.push((Owner::Skybox, sky));
    }

    let mut tree: Vec<TreeNode> = vec![TreeNode {
        gaussian: Gaussian::isotropic(Vector3::zeros(), 1.0, 1.0, [0.5; 3]),
        bounds: Aabb::empty(),
        children: Vec::new(),
    }];
    let mut root_bounds = bounds.iter().fold(Aabb::empty(), |a, b| a.union(b));
    for (_, h) in &parts {
        let offset = tree.len();
        for node in h.to_tree() {
            tree.push(TreeNode {
                children: node.children.iter().map(|c| c + offset).collect(),
                ..node
            });
        }
        tree[0].children.push(offset);
        root_bounds = root_bounds.union(&h.nodes[0].bounds);
    }
    let kids: Vec<Gaussian> = tree[0].children.iter().map(|&c| tree[c].gaussian.clone()).collect();
    if !kids.is_empty() {
        let root_g = merge_node(&kids);
        for &c in &tree[0].children.clone() {
            tree[c].gaussian = match_orientation(&tree[c].gaussian, &root_g.rotation);
        }
        tree[0].gaussian = root_g;
    }
    tree[0].bounds = root_bounds;
    let sh_degree = parts.iter().map(|(_, h)| h.sh_degree).max().unwrap_or(3);
    Consolidated {
        hierarchy: Hierarchy::from_tree(&tree, 0, sh_degree),
        owners: parts.iter().map(|(o, _)| *o).collect(),
    }
}
