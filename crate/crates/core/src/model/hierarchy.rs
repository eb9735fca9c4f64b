use std::collections::VecDeque;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{Aabb, Gaussian, ModelError};

/// One node of a [`Hierarchy`]. Children of a node occupy the contiguous
/// index range `first_child .. first_child + child_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub gaussian: Gaussian,
    /// Box over the 3-sigma extents of every leaf below (or at) this node.
    pub bounds: Aabb,
    pub parent: Option<usize>,
    pub first_child: usize,
    pub child_count: usize,
}

impl HierarchyNode {
    pub fn is_leaf(&self) -> bool {
        self.child_count == 0
    }

    pub fn children(&self) -> Range<usize> {
        self.first_child..self.first_child + self.child_count
    }
}

/// Tree of Gaussians, root at index 0.
///
/// Nodes are laid out so every child index is larger than its parent's;
/// iterating indices in reverse therefore visits children before parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub nodes: Vec<HierarchyNode>,
    pub sh_degree: u32,
}

/// A node in an index-free tree description, used to (re)lay out hierarchies.
#[derive(Debug, Clone)]
pub struct TreeNode {
    pub gaussian: Gaussian,
    pub bounds: Aabb,
    pub children: Vec<usize>,
}

/// Selected node plus its blend parameters for one view.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutEntry {
    pub node: usize,
    /// Weight of the node's own attributes: 1 renders the node as itself,
    /// 0 renders it with its parent's attributes and transitional alpha.
    pub t: f64,
    /// Per-child transitional blend alpha for the parent's peak alpha.
    pub alpha_prime: f64,
}

impl Hierarchy {
    /// Hierarchy made of a single leaf.
    pub fn single(gaussian: Gaussian, bounds: Aabb) -> Self {
        Self {
            nodes: vec![HierarchyNode {
                gaussian,
                bounds,
                parent: None,
                first_child: 0,
                child_count: 0,
            }],
            sh_degree: 3,
        }
    }

    /// Lay out a tree breadth-first so siblings are contiguous.
    pub fn from_tree(tree: &[TreeNode], root: usize, sh_degree: u32) -> Self {
        Self::from_tree_mapped(tree, root, sh_degree).0
    }

    /// [`Hierarchy::from_tree`] plus the new index of every tree node
    /// (`usize::MAX` for nodes not reachable from `root`).
    pub fn from_tree_mapped(tree: &[TreeNode], root: usize, sh_degree: u32) -> (Self, Vec<usize>) {
        let mut map = vec![usize::MAX; tree.len()];
        map[root] = 0;
        let mut nodes = Vec::with_capacity(tree.len());
        let mut queue = VecDeque::new();
        nodes.push(HierarchyNode {
            gaussian: tree[root].gaussian.clone(),
            bounds: tree[root].bounds,
            parent: None,
            first_child: 0,
            child_count: 0,
        });
        queue.push_back((root, 0usize));
        while let Some((src, dst)) = queue.pop_front() {
            let kids = &tree[src].children;
            let first = nodes.len();
            nodes[dst].first_child = if kids.is_empty() { 0 } else { first };
            nodes[dst].child_count = kids.len();
            for (k, &c) in kids.iter().enumerate() {
                nodes.push(HierarchyNode {
                    gaussian: tree[c].gaussian.clone(),
                    bounds: tree[c].bounds,
                    parent: Some(dst),
                    first_child: 0,
                    child_count: 0,
                });
                map[c] = first + k;
                queue.push_back((c, first + k));
            }
        }
        (Self { nodes, sh_degree }, map)
    }

    /// Inverse of [`Hierarchy::from_tree`].
    pub fn to_tree(&self) -> Vec<TreeNode> {
        self.nodes
            .iter()
            .map(|n| TreeNode {
                gaussian: n.gaussian.clone(),
                bounds: n.bounds,
                children: n.children().collect(),
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> &HierarchyNode {
        &self.nodes[0]
    }

    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.is_leaf())
            .map(|(i, _)| i)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    pub fn interior_count(&self) -> usize {
        self.len() - self.leaf_count()
    }

    pub fn depth(&self) -> usize {
        let mut depth = vec![0usize; self.len()];
        let mut max = 0;
        for i in 1..self.len() {
            let p = self.nodes[i].parent.expect("non-root node without parent");
            depth[i] = depth[p] + 1;
            max = max.max(depth[i]);
        }
        max
    }

    /// Leaf indices at or below `node`, in index order.
    pub fn covered_leaves(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![node];
        while let Some(n) = stack.pop() {
            let nd = &self.nodes[n];
            if nd.is_leaf() {
                out.push(n);
            } else {
                stack.extend(nd.children());
            }
        }
        out.sort_unstable();
        out
    }

    /// Check layout, tree shape and bounds nesting.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidHierarchy(msg));
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        if self.nodes[0].parent.is_some() {
            return bad("node 0 has a parent".into());
        }
        let n = self.nodes.len();
        let mut seen_as_child = vec![false; n];
        for (i, node) in self.nodes.iter().enumerate() {
            if i > 0 && node.parent.is_none() {
                return bad(format!("node {i} is a second root"));
            }
            node.gaussian
                .validate()
                .map_err(|e| ModelError::InvalidHierarchy(format!("node {i}: {e}")))?;
            if node.bounds.is_empty() {
                return bad(format!("node {i} has empty bounds"));
            }
            if node.is_leaf() {
                continue;
            }
            let range = node.children();
            if range.start <= i || range.end > n {
                return bad(format!("node {i} has out-of-order children {range:?}"));
            }
            for c in range {
                if seen_as_child[c] {
                    return bad(format!("node {c} has two parents"));
                }
                seen_as_child[c] = true;
                if self.nodes[c].parent != Some(i) {
                    return bad(format!("node {c} does not point back to parent {i}"));
                }
                if !node.bounds.contains(&self.nodes[c].bounds) {
                    return bad(format!("bounds of node {i} do not contain child {c}"));
                }
            }
        }
        if let Some(orphan) = (1..n).find(|&i| !seen_as_child[i]) {
            return bad(format!("node {orphan} is not reachable from the root"));
        }
        Ok(())
    }
}
