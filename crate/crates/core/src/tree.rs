//! Skew-aware attribute-space partitioning tree.
//!
//! Nodes split at the lower median of a round-robin dimension. A split whose
//! larger child is at least `tau` times the smaller is rejected and the
//! dimension is excluded for the node and all its descendants. Objects are
//! physically reordered so every node owns a contiguous slice of
//! [`PartitionTree::ordered_ids`].

use std::collections::VecDeque;

use crate::error::{KhiError, Result};
use crate::model::{Dataset, Interval};

pub const DEFAULT_TAU: f64 = 3.0;
pub const DEFAULT_LEAF_CAPACITY: usize = 2;
/// Attribute sets are `u64` bitmasks.
pub const MAX_ATTRIBUTES: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub tau: f64,
    pub leaf_capacity: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            leaf_capacity: DEFAULT_LEAF_CAPACITY,
        }
    }
}

impl TreeParams {
    pub fn new(tau: f64, leaf_capacity: usize) -> Result<Self> {
        let p = Self { tau, leaf_capacity };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.is_nan() || self.tau <= 1.0 || !self.tau.is_finite() {
            return Err(KhiError::InvalidParam(format!("tau must be > 1, got {}", self.tau)));
        }
        if self.leaf_capacity == 0 {
            return Err(KhiError::InvalidParam("leaf capacity must be >= 1".into()));
        }
        Ok(())
    }

    /// Largest fraction of a node's objects an accepted child can hold.
    pub fn rho(&self) -> f64 {
        self.tau / (self.tau + 1.0)
    }

    /// Upper bound on the height of a tree over `n` objects:
    /// `ceil(log_{1/rho}(n / c_l)) + 1`.
    pub fn height_bound(&self, n: usize) -> usize {
        if n <= self.leaf_capacity {
            return 1;
        }
        let ratio = n as f64 / self.leaf_capacity as f64;
        (ratio.ln() / (1.0 / self.rho()).ln()).ceil() as usize + 1
    }
}

/// Set of attribute dimensions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct DimSet(u64);

impl DimSet {
    pub const EMPTY: DimSet = DimSet(0);

    pub fn from_bits(bits: u64) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn contains(self, dim: usize) -> bool {
        self.0 >> dim & 1 == 1
    }

    #[inline]
    pub fn with(self, dim: usize) -> Self {
        Self(self.0 | 1 << dim)
    }

    #[inline]
    pub fn union(self, other: DimSet) -> Self {
        Self(self.0 | other.0)
    }

    #[inline]
    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_superset_of(self, other: DimSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&d| self.contains(d))
    }
}

/// One side of a node region along a single dimension. Right children are
/// open at their lower bound: they hold values strictly above the parent's
/// split value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extent {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
}

impl Extent {
    pub const FULL: Extent = Extent {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_open: false,
    };

    #[inline]
    pub fn disjoint_from(&self, iv: &Interval) -> bool {
        let above = if self.lo_open {
            self.lo >= iv.hi
        } else {
            self.lo > iv.hi
        };
        above || self.hi < iv.lo
    }

    #[inline]
    pub fn within(&self, iv: &Interval) -> bool {
        self.lo >= iv.lo && self.hi <= iv.hi
    }

    #[inline]
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_open { v > self.lo } else { v >= self.lo };
        above && v <= self.hi
    }
}

#[derive(Debug, Clone)]
pub struct TreeNode {
    pub id: u32,
    pub parent: Option<u32>,
    pub left: Option<u32>,
    pub right: Option<u32>,
    /// Depth from the root (root = 0).
    pub level: u32,
    pub region: Vec<Extent>,
    pub split_dim: Option<usize>,
    /// Only meaningful when `split_dim` is set.
    pub split_value: f64,
    pub excluded: DimSet,
    pub begin: u32,
    pub end: u32,
}

// Leaves carry a NaN split value, so equality compares it bitwise.
impl PartialEq for TreeNode {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
            && self.parent == other.parent
            && self.left == other.left
            && self.right == other.right
            && self.level == other.level
            && self.region == other.region
            && self.split_dim == other.split_dim
            && self.split_value.to_bits() == other.split_value.to_bits()
            && self.excluded == other.excluded
            && self.begin == other.begin
            && self.end == other.end
    }
}

impl TreeNode {
    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.left.is_none()
    }

    #[inline]
    pub fn len(&self) -> usize {
        (self.end - self.begin) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }

    #[inline]
    pub fn contains_position(&self, pos: u32) -> bool {
        self.begin <= pos && pos < self.end
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionTree {
    pub(crate) nodes: Vec<TreeNode>,
    pub(crate) ordered_ids: Vec<u32>,
    /// Inverse of `ordered_ids`.
    pub(crate) position: Vec<u32>,
    pub(crate) leaf_of: Vec<u32>,
    pub(crate) height: usize,
    pub(crate) params: TreeParams,
    pub(crate) attr_count: usize,
}

/// Builds the partitioning tree over every object of `dataset`.
///
/// Node ids are assigned breadth-first, so the root is 0 and each level's
/// nodes are numbered left to right.
pub fn build_tree(dataset: &Dataset, params: TreeParams) -> Result<PartitionTree> {
    params.validate()?;
    let n = dataset.len();
    let m = dataset.attr_count();
    if n == 0 {
        return Err(KhiError::Input("cannot build a tree over zero objects".into()));
    }
    if m > MAX_ATTRIBUTES {
        return Err(KhiError::Input(format!(
            "at most {MAX_ATTRIBUTES} attributes are supported, got {m}"
        )));
    }

    let mut ordered_ids: Vec<u32> = (0..n as u32).collect();
    let mut nodes = vec![TreeNode {
        id: 0,
        parent: None,
        left: None,
        right: None,
        level: 0,
        region: vec![Extent::FULL; m],
        split_dim: None,
        split_value: f64::NAN,
        excluded: DimSet::EMPTY,
        begin: 0,
        end: n as u32,
    }];
    // (node id, first candidate split dimension)
    let mut queue = VecDeque::from([(0u32, 0usize)]);

    while let Some((id, mut dim)) = queue.pop_front() {
        let (begin, end, mut excluded) = {
            let node = &nodes[id as usize];
            (node.begin as usize, node.end as usize, node.excluded)
        };
        let len = end - begin;
        let slice = &mut ordered_ids[begin..end];

        let split = loop {
            if len <= params.leaf_capacity || excluded.len() == m {
                break None;
            }
            while excluded.contains(dim) {
                dim = (dim + 1) % m;
            }
            slice.sort_unstable_by(|&a, &b| dataset.attr(a, dim).total_cmp(&dataset.attr(b, dim)).then(a.cmp(&b)));
            let split_value = dataset.attr(slice[(len - 1) / 2], dim);
            let n_left = slice.partition_point(|&o| dataset.attr(o, dim) <= split_value);
            let n_right = len - n_left;
            let (small, large) = (n_left.min(n_right), n_left.max(n_right));
            if params.tau * small as f64 <= large as f64 {
                excluded = excluded.with(dim);
                continue;
            }
            break Some((dim, split_value, n_left));
        };

        let left_id = nodes.len() as u32;
        let node = &mut nodes[id as usize];
        node.excluded = excluded;
        let Some((dim, split_value, n_left)) = split else {
            continue;
        };
        node.split_dim = Some(dim);
        node.split_value = split_value;
        let right_id = left_id + 1;
        node.left = Some(left_id);
        node.right = Some(right_id);
        let level = node.level + 1;

        let mut left_region = node.region.clone();
        left_region[dim].hi = split_value;
        let mut right_region = node.region.clone();
        right_region[dim].lo = split_value;
        right_region[dim].lo_open = true;

        let mid = (begin + n_left) as u32;
        let child = |cid: u32, region: Vec<Extent>, b: u32, e: u32| TreeNode {
            id: cid,
            parent: Some(id),
            left: None,
            right: None,
            level,
            region,
            split_dim: None,
            split_value: f64::NAN,
            excluded,
            begin: b,
            end: e,
        };
        nodes.push(child(left_id, left_region, begin as u32, mid));
        nodes.push(child(right_id, right_region, mid, end as u32));
        let next = (dim + 1) % m;
        queue.push_back((left_id, next));
        queue.push_back((right_id, next));
    }

    Ok(PartitionTree::assemble(nodes, ordered_ids, params, m))
}

impl PartitionTree {
    /// Derives the lookup tables from nodes and the ordered id array.
    pub(crate) fn assemble(nodes: Vec<TreeNode>, ordered_ids: Vec<u32>, params: TreeParams, attr_count: usize) -> Self {
        let n = ordered_ids.len();
        let mut position = vec![0u32; n];
        for (pos, &id) in ordered_ids.iter().enumerate() {
            position[id as usize] = pos as u32;
        }
        let mut leaf_of = vec![0u32; n];
        let mut height = 0;
        for node in &nodes {
            height = height.max(node.level as usize + 1);
            if node.is_leaf() {
                for &id in &ordered_ids[node.begin as usize..node.end as usize] {
                    leaf_of[id as usize] = node.id;
                }
            }
        }
        Self {
            nodes,
            ordered_ids,
            position,
            leaf_of,
            height,
            params,
            attr_count,
        }
    }

    #[inline]
    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    #[inline]
    pub fn node(&self, id: u32) -> &TreeNode {
        &self.nodes[id as usize]
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    #[inline]
    pub fn ordered_ids(&self) -> &[u32] {
        &self.ordered_ids
    }

    /// Object ids of `O(p)`, in slice order.
    #[inline]
    pub fn slice(&self, node: u32) -> &[u32] {
        let n = &self.nodes[node as usize];
        &self.ordered_ids[n.begin as usize..n.end as usize]
    }

    #[inline]
    pub fn position(&self, object: u32) -> u32 {
        self.position[object as usize]
    }

    #[inline]
    pub fn leaf_of(&self, object: u32) -> u32 {
        self.leaf_of[object as usize]
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn params(&self) -> TreeParams {
        self.params
    }

    pub fn attr_count(&self) -> usize {
        self.attr_count
    }

    pub fn object_count(&self) -> usize {
        self.ordered_ids.len()
    }

    /// Node ids grouped by level, ascending id within a level.
    pub fn levels(&self) -> Vec<Vec<u32>> {
        let mut levels = vec![Vec::new(); self.height];
        for node in &self.nodes {
            levels[node.level as usize].push(node.id);
        }
        levels
    }

    /// Root-to-leaf node ids of the nodes whose slice contains `object`.
    pub fn path_of(&self, object: u32) -> Result<Vec<u32>> {
        if object as usize >= self.ordered_ids.len() {
            return Err(KhiError::NotFound(object));
        }
        let pos = self.position(object);
        let mut path = Vec::with_capacity(self.height);
        let mut cur = &self.nodes[0];
        loop {
            debug_assert!(cur.contains_position(pos));
            path.push(cur.id);
            match (cur.left, cur.right) {
                (Some(l), Some(r)) => {
                    let left = &self.nodes[l as usize];
                    cur = if left.contains_position(pos) {
                        left
                    } else {
                        &self.nodes[r as usize]
                    };
                }
                _ => break,
            }
        }
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeStats {
    pub height: usize,
    pub node_count: usize,
    pub leaf_count: usize,
    /// Largest `max(|O(l)|, |O(r)|) / min(..)` over internal nodes (1.0 for a
    /// single-node tree).
    pub max_level_imbalance: f64,
    pub level_object_counts: Vec<usize>,
}

pub fn tree_stats(tree: &PartitionTree) -> TreeStats {
    let mut level_object_counts = vec![0usize; tree.height];
    let mut leaf_count = 0;
    let mut max_imbalance = 1.0f64;
    for node in &tree.nodes {
        level_object_counts[node.level as usize] += node.len();
        if let (Some(l), Some(r)) = (node.left, node.right) {
            let a = tree.node(l).len() as f64;
            let b = tree.node(r).len() as f64;
            max_imbalance = max_imbalance.max(a.max(b) / a.min(b));
        } else {
            leaf_count += 1;
        }
    }
    TreeStats {
        height: tree.height,
        node_count: tree.nodes.len(),
        leaf_count,
        max_level_imbalance: max_imbalance,
        level_object_counts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectSchema;
    use crate::synthetic::{self, AttrDistribution};

    fn dataset_from_tuples(tuples: &[Vec<f64>]) -> Dataset {
        let m = tuples[0].len();
        let schema = ObjectSchema::new(1, m).unwrap();
        let vectors = vec![0.0; tuples.len()];
        Dataset::new(schema, vectors, tuples.concat()).unwrap()
    }

    #[test]
    fn eight_object_example_tree_shape() {
        let ds = synthetic::eight_object_example();
        let tree = build_tree(&ds, TreeParams::new(3.0, 2).unwrap()).unwrap();
        let root = tree.root();
        assert_eq!(root.split_dim, Some(0));
        assert_eq!(root.split_value, 3.4);
        let (p1, p2) = (tree.node(1), tree.node(2));
        assert_eq!((p1.len(), p2.len()), (4, 4));
        assert_eq!((p1.split_dim, p1.split_value), (Some(1), 1.4));
        assert_eq!((p2.split_dim, p2.split_value), (Some(1), 5.0));
        for leaf in 3..7 {
            assert!(tree.node(leaf).is_leaf());
            assert_eq!(tree.node(leaf).len(), 2);
            assert!(tree.node(leaf).excluded.is_empty());
        }
        // o3 and o4 (ids 2 and 3) share leaf p4
        let mut p4 = tree.slice(4).to_vec();
        p4.sort_unstable();
        assert_eq!(p4, vec![2, 3]);
        assert_eq!(tree.path_of(3).unwrap(), vec![0, 1, 4]);

        let stats = tree_stats(&tree);
        assert_eq!((stats.height, stats.node_count, stats.leaf_count), (3, 7, 4));
    }

    #[test]
    fn single_object_tree() {
        let ds = dataset_from_tuples(&[vec![1.0]]);
        let tree = build_tree(&ds, TreeParams::default()).unwrap();
        assert_eq!(tree.path_of(0).unwrap(), vec![0]);
        let stats = tree_stats(&tree);
        assert_eq!((stats.height, stats.node_count, stats.leaf_count), (1, 1, 1));
        assert!(matches!(tree.path_of(1), Err(KhiError::NotFound(1))));
    }

    #[test]
    fn constant_dimension_is_excluded() {
        let tuples: Vec<Vec<f64>> = (0..16).map(|i| vec![7.0, i as f64]).collect();
        let ds = dataset_from_tuples(&tuples);
        let tree = build_tree(&ds, TreeParams::new(3.0, 2).unwrap()).unwrap();
        let root = tree.root();
        assert!(root.excluded.contains(0));
        assert_eq!(root.split_dim, Some(1));
        for node in tree.nodes() {
            assert!(node.excluded.contains(0));
            assert_ne!(node.split_dim, Some(0));
        }
    }

    #[test]
    fn all_dimensions_constant_gives_single_leaf() {
        let tuples: Vec<Vec<f64>> = (0..10).map(|_| vec![1.0, 2.0]).collect();
        let ds = dataset_from_tuples(&tuples);
        let tree = build_tree(&ds, TreeParams::default()).unwrap();
        assert_eq!(tree.nodes().len(), 1);
        assert_eq!(tree.root().excluded.len(), 2);
    }

    #[test]
    fn uniform_1024_height_within_lemma_bound() {
        let ds = synthetic::dataset(1024, 2, 4, AttrDistribution::Uniform, 3);
        let params = TreeParams::new(3.0, 2).unwrap();
        let tree = build_tree(&ds, params).unwrap();
        // ceil(log_{4/3}(512)) = 22
        let bound = ((512f64).ln() / (4.0f64 / 3.0).ln()).ceil() as usize;
        assert_eq!(bound, 22);
        assert!(tree.height() <= bound, "height {}", tree.height());
        assert_eq!(params.height_bound(1024), 23);
    }

    #[test]
    fn path_nodes_contain_object_exhaustively() {
        let ds = synthetic::dataset(10_000, 2, 3, AttrDistribution::Gaussian, 5);
        let tree = build_tree(&ds, TreeParams::default()).unwrap();
        for id in 0..ds.len() as u32 {
            let path = tree.path_of(id).unwrap();
            assert_eq!(path[0], 0);
            assert!(tree.node(*path.last().unwrap()).is_leaf());
            assert_eq!(*path.last().unwrap(), tree.leaf_of(id));
            for (lvl, &p) in path.iter().enumerate() {
                let node = tree.node(p);
                assert_eq!(node.level as usize, lvl);
                assert!(node.contains_position(tree.position(id)));
                assert!(tree.slice(p).contains(&id));
            }
        }
        let stats = tree_stats(&tree);
        assert_eq!(stats.node_count, 2 * stats.leaf_count - 1);
    }

    #[test]
    fn regions_and_exclusions_are_consistent() {
        let ds = synthetic::dataset(5_000, 2, 3, AttrDistribution::Zipf(1.2), 9);
        let tree = build_tree(&ds, TreeParams::default()).unwrap();
        for node in tree.nodes() {
            for &id in tree.slice(node.id) {
                for (d, ext) in node.region.iter().enumerate() {
                    assert!(ext.contains(ds.attr(id, d)));
                }
            }
            if let Some(parent) = node.parent {
                assert!(node.excluded.is_superset_of(tree.node(parent).excluded));
            }
        }
    }

    #[test]
    fn deterministic_rebuild() {
        let ds = synthetic::dataset(3_000, 2, 4, AttrDistribution::Zipf(1.2), 1);
        let a = build_tree(&ds, TreeParams::default()).unwrap();
        let b = build_tree(&ds, TreeParams::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(TreeParams::new(1.0, 2).is_err());
        assert!(TreeParams::new(3.0, 0).is_err());
    }
}
