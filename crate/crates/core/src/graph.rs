//! Single-level proximity graphs attached to tree nodes: construction-time
//! beam search, RNG-rule pruning, leaf-graph insertion and child-graph
//! merging.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use parking_lot::RwLock;
use rayon::prelude::*;

use crate::error::{KhiError, Result};
use crate::model::{l2, Dataset};

pub const DEFAULT_MAX_DEGREE: usize = 32;

/// A neighbor id with its distance to the list owner (or to the query).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub id: u32,
    pub dist: f32,
}

impl Neighbor {
    pub fn new(id: u32, dist: f32) -> Self {
        Self { id, dist }
    }
}

/// Total order by distance, ties broken by id.
#[inline]
pub fn cmp_neighbors(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.dist.total_cmp(&b.dist).then(a.id.cmp(&b.id))
}

/// Heap entry ordered like [`cmp_neighbors`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Ranked(pub Neighbor);

impl Eq for Ranked {}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        cmp_neighbors(&self.0, &other.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraphParams {
    /// Maximum out-degree `M`.
    pub max_degree: usize,
    pub ef_build: usize,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            max_degree: DEFAULT_MAX_DEGREE,
            ef_build: DEFAULT_MAX_DEGREE,
        }
    }
}

impl GraphParams {
    pub fn new(max_degree: usize, ef_build: usize) -> Result<Self> {
        let p = Self { max_degree, ef_build };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_degree < 2 {
            return Err(KhiError::InvalidParam("M must be >= 2".into()));
        }
        if self.max_degree > u8::MAX as usize {
            return Err(KhiError::InvalidParam("M must fit in one byte (<= 255)".into()));
        }
        if self.ef_build == 0 {
            return Err(KhiError::InvalidParam("ef_build must be >= 1".into()));
        }
        Ok(())
    }
}

/// Immutable adjacency of one tree node's graph, stored CSR-style over the
/// node's slice positions.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeGraph {
    owner: u32,
    begin: u32,
    offsets: Vec<u32>,
    edges: Vec<Neighbor>,
}

impl NodeGraph {
    pub(crate) fn from_lists(owner: u32, begin: u32, lists: Vec<Vec<Neighbor>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let total: usize = lists.iter().map(Vec::len).sum();
        let mut edges = Vec::with_capacity(total);
        offsets.push(0);
        for list in lists {
            edges.extend_from_slice(&list);
            offsets.push(edges.len() as u32);
        }
        Self {
            owner,
            begin,
            offsets,
            edges,
        }
    }

    pub fn owner(&self) -> u32 {
        self.owner
    }

    /// First tree position covered by this graph.
    pub fn begin(&self) -> u32 {
        self.begin
    }

    /// Number of vertices.
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Neighbors of the vertex at slice offset `local`.
    #[inline]
    pub fn neighbors(&self, local: usize) -> &[Neighbor] {
        &self.edges[self.offsets[local] as usize..self.offsets[local + 1] as usize]
    }

    /// Neighbors of the vertex at tree position `pos`.
    #[inline]
    pub fn neighbors_at(&self, pos: u32) -> &[Neighbor] {
        self.neighbors((pos - self.begin) as usize)
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.len()).map(|i| self.neighbors(i).len()).max().unwrap_or(0)
    }

    pub fn to_lists(&self) -> Vec<Vec<Neighbor>> {
        (0..self.len()).map(|i| self.neighbors(i).to_vec()).collect()
    }
}

/// Read access to a graph under construction, addressed by slice offset.
pub trait Adjacency: Sync {
    fn vertex_count(&self) -> usize;
    fn copy_neighbor_ids(&self, local: usize, out: &mut Vec<u32>);
}

impl Adjacency for NodeGraph {
    fn vertex_count(&self) -> usize {
        self.len()
    }

    fn copy_neighbor_ids(&self, local: usize, out: &mut Vec<u32>) {
        out.extend(self.neighbors(local).iter().map(|n| n.id));
    }
}

impl Adjacency for [Vec<Neighbor>] {
    fn vertex_count(&self) -> usize {
        self.len()
    }

    fn copy_neighbor_ids(&self, local: usize, out: &mut Vec<u32>) {
        out.extend(self[local].iter().map(|n| n.id));
    }
}

impl Adjacency for [RwLock<Vec<Neighbor>>] {
    fn vertex_count(&self) -> usize {
        self.len()
    }

    fn copy_neighbor_ids(&self, local: usize, out: &mut Vec<u32>) {
        out.extend(self[local].read().iter().map(|n| n.id));
    }
}

/// Where a graph's vertices live: the dataset plus the mapping from object
/// id to tree position.
#[derive(Clone, Copy)]
pub struct GraphCtx<'a> {
    pub dataset: &'a Dataset,
    pub position: &'a [u32],
}

impl<'a> GraphCtx<'a> {
    #[inline]
    fn local(&self, id: u32, begin: u32) -> usize {
        (self.position[id as usize] - begin) as usize
    }

    #[inline]
    fn dist(&self, a: u32, b: u32) -> f32 {
        self.dataset.dist(a, b)
    }
}

/// Epoch-stamped visited flags; clearing is O(1).
#[derive(Debug, Clone)]
pub struct VisitedSet {
    marks: Vec<u32>,
    epoch: u32,
}

impl VisitedSet {
    pub fn new(len: usize) -> Self {
        Self {
            marks: vec![0; len],
            epoch: 1,
        }
    }

    pub fn clear(&mut self) {
        if self.epoch == u32::MAX {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        } else {
            self.epoch += 1;
        }
    }

    /// Clears and makes room for at least `len` slots.
    pub fn reset(&mut self, len: usize) {
        if self.marks.len() < len {
            self.marks.resize(len, 0);
        }
        self.clear();
    }

    /// Marks `i`; returns `true` if it was not marked before.
    #[inline]
    pub fn insert(&mut self, i: usize) -> bool {
        if self.marks[i] == self.epoch {
            false
        } else {
            self.marks[i] = self.epoch;
            true
        }
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        self.marks[i] == self.epoch
    }
}

/// Best-first beam search over one graph. Returns up to `ef` vertices
/// sorted ascending by distance to `query`.
pub(crate) fn beam_search<A: Adjacency + ?Sized>(
    adj: &A,
    ctx: GraphCtx<'_>,
    begin: u32,
    query: &[f32],
    ef: usize,
    entries: &[u32],
    visited: &mut VisitedSet,
) -> Result<Vec<Neighbor>> {
    if entries.is_empty() {
        return Err(KhiError::EmptyEntrySet);
    }
    visited.reset(adj.vertex_count());
    let ef = ef.max(1);
    let mut frontier: BinaryHeap<Reverse<Ranked>> = BinaryHeap::new();
    let mut best: BinaryHeap<Ranked> = BinaryHeap::with_capacity(ef + 1);
    for &e in entries {
        if !visited.insert(ctx.local(e, begin)) {
            continue;
        }
        let n = Neighbor::new(e, l2(query, ctx.dataset.vector(e)));
        frontier.push(Reverse(Ranked(n)));
        best.push(Ranked(n));
        if best.len() > ef {
            best.pop();
        }
    }

    let mut ids = Vec::new();
    while let Some(Reverse(Ranked(cur))) = frontier.pop() {
        let worst = best.peek().map(|r| r.0.dist).unwrap_or(f32::INFINITY);
        if best.len() >= ef && cur.dist > worst {
            break;
        }
        ids.clear();
        adj.copy_neighbor_ids(ctx.local(cur.id, begin), &mut ids);
        for &nb in &ids {
            if !visited.insert(ctx.local(nb, begin)) {
                continue;
            }
            let d = l2(query, ctx.dataset.vector(nb));
            let worst = best.peek().map(|r| r.0.dist).unwrap_or(f32::INFINITY);
            if best.len() < ef || d < worst {
                let n = Neighbor::new(nb, d);
                frontier.push(Reverse(Ranked(n)));
                best.push(Ranked(n));
                if best.len() > ef {
                    best.pop();
                }
            }
        }
    }
    Ok(best.into_sorted_vec().into_iter().map(|r| r.0).collect())
}

/// Greedy search over a finished node graph.
pub fn greedy_search(
    graph: &NodeGraph,
    ctx: GraphCtx<'_>,
    query: &[f32],
    ef: usize,
    entries: &[u32],
) -> Result<Vec<Neighbor>> {
    let mut visited = VisitedSet::new(graph.len());
    beam_search(graph, ctx, graph.begin, query, ef, entries, &mut visited)
}

#[inline]
fn shields(v: &Neighbor, kept: &Neighbor, dist: impl Fn(u32, u32) -> f32) -> bool {
    kept.dist < v.dist && dist(v.id, kept.id) < v.dist
}

/// RNG-rule neighbor selection.
///
/// Candidates (distances measured from the centre, which must not be among
/// them) are visited in ascending `(distance, id)` order; `v` is kept iff no
/// already-kept `v'` has both `d(u, v') < d(u, v)` and `d(v, v') < d(u, v)`.
/// Selection stops once `max_degree` neighbors are kept. Duplicate ids are
/// collapsed.
pub fn rng_prune(mut candidates: Vec<Neighbor>, max_degree: usize, dist: impl Fn(u32, u32) -> f32) -> Vec<Neighbor> {
    candidates.sort_unstable_by(cmp_neighbors);
    candidates.dedup_by_key(|n| n.id);
    let mut kept: Vec<Neighbor> = Vec::with_capacity(max_degree.min(candidates.len()));
    for v in candidates {
        if kept.len() >= max_degree {
            break;
        }
        if kept.iter().all(|k| !shields(&v, k, &dist)) {
            kept.push(v);
        }
    }
    kept
}

/// Adds `new` to an RNG-consistent list sorted by [`cmp_neighbors`],
/// producing exactly `rng_prune(list ∪ {new})` without re-examining pairs
/// already known to be unshielded. Returns whether `new` is in the list
/// afterwards.
pub fn rng_insert(list: &mut Vec<Neighbor>, new: Neighbor, max_degree: usize, dist: impl Fn(u32, u32) -> f32) -> bool {
    if list.iter().any(|n| n.id == new.id) {
        return true;
    }
    let at = list.partition_point(|n| cmp_neighbors(n, &new) == Ordering::Less);
    if at >= max_degree || list[..at].iter().any(|k| shields(&new, k, &dist)) {
        return false;
    }
    let tail: Vec<Neighbor> = list.drain(at..).collect();
    list.push(new);
    for v in tail {
        if list.len() >= max_degree {
            break;
        }
        if !shields(&v, &new, &dist) {
            list.push(v);
        }
    }
    true
}

/// Builds a leaf graph by inserting the slice objects in order, then
/// re-links any vertex left unreachable from the first object.
///
/// `ids` is the node's slice (starting at tree position `begin`).
pub fn build_leaf_graph(ctx: GraphCtx<'_>, owner: u32, begin: u32, ids: &[u32], params: GraphParams) -> NodeGraph {
    let mut lists: Vec<Vec<Neighbor>> = vec![Vec::new(); ids.len()];
    let mut visited = VisitedSet::new(ids.len());
    let m = params.max_degree;
    let dist = |a, b| ctx.dist(a, b);
    for (i, &o) in ids.iter().enumerate().skip(1) {
        let query = ctx.dataset.vector(o);
        let mut cands = beam_search(
            lists.as_slice(),
            ctx,
            begin,
            query,
            params.ef_build,
            &ids[..1],
            &mut visited,
        )
        .expect("entry set is non-empty");
        cands.retain(|c| c.id != o);
        let kept = rng_prune(cands, m, dist);
        for nb in &kept {
            let back = Neighbor::new(o, nb.dist);
            rng_insert(&mut lists[ctx.local(nb.id, begin)], back, m, dist);
        }
        lists[i] = kept;
    }
    repair_reachability(&mut lists, ctx, begin, ids, m);
    NodeGraph::from_lists(owner, begin, lists)
}

fn reachable_from_first(lists: &[Vec<Neighbor>], ctx: GraphCtx<'_>, begin: u32) -> Vec<bool> {
    let mut seen = vec![false; lists.len()];
    if lists.is_empty() {
        return seen;
    }
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(u) = stack.pop() {
        for nb in &lists[u] {
            let v = ctx.local(nb.id, begin);
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Gives every vertex not reachable from the entry an in-edge from its
/// nearest reachable vertex that accepts it under the pruning rule. Rounds
/// repeat while the reachable set keeps growing.
fn repair_reachability(lists: &mut [Vec<Neighbor>], ctx: GraphCtx<'_>, begin: u32, ids: &[u32], m: usize) {
    let dist = |a, b| ctx.dist(a, b);
    let mut reached = reachable_from_first(lists, ctx, begin);
    let mut count = reached.iter().filter(|&&r| r).count();
    while count < lists.len() {
        for u in 0..lists.len() {
            if reached[u] {
                continue;
            }
            let mut hosts: Vec<Neighbor> = (0..lists.len())
                .filter(|&v| reached[v])
                .map(|v| Neighbor::new(ids[v], dist(ids[u], ids[v])))
                .collect();
            hosts.sort_unstable_by(cmp_neighbors);
            for h in hosts {
                let host = ctx.local(h.id, begin);
                if rng_insert(&mut lists[host], Neighbor::new(ids[u], h.dist), m, dist) {
                    break;
                }
            }
        }
        reached = reachable_from_first(lists, ctx, begin);
        let now = reached.iter().filter(|&&r| r).count();
        if now <= count {
            break;
        }
        count = now;
    }
}

/// Inputs for merging two child graphs into their parent.
#[derive(Clone, Copy)]
pub struct MergeInput<'a> {
    pub owner: u32,
    pub left: &'a NodeGraph,
    pub right: &'a NodeGraph,
    pub left_ids: &'a [u32],
    pub right_ids: &'a [u32],
}

/// Candidate neighbor list for right-child object `o` in the parent graph.
fn merge_candidates<A: Adjacency + ?Sized>(
    adj: &A,
    ctx: GraphCtx<'_>,
    input: &MergeInput<'_>,
    o: u32,
    params: GraphParams,
    visited: &mut VisitedSet,
) -> Vec<Neighbor> {
    let begin = input.left.begin();
    let mut pool = beam_search(
        adj,
        ctx,
        begin,
        ctx.dataset.vector(o),
        params.ef_build,
        &input.left_ids[..1],
        visited,
    )
    .expect("left slice is non-empty");
    pool.extend_from_slice(input.right.neighbors_at(ctx.position[o as usize]));
    pool.retain(|c| c.id != o);
    rng_prune(pool, params.max_degree, |a, b| ctx.dist(a, b))
}

/// Merges two sibling graphs into the parent graph, inserting right-child
/// objects in slice order.
///
/// The parent starts as a copy of the left graph. Each right object gets the
/// pruned union of its beam-search candidates and its right-graph
/// neighbors; every kept neighbor from the left slice then absorbs a
/// back-edge through the same pruning rule.
pub fn merge_graphs(ctx: GraphCtx<'_>, input: MergeInput<'_>, params: GraphParams) -> NodeGraph {
    let left_len = input.left_ids.len();
    let begin = input.left.begin();
    let mut lists = input.left.to_lists();
    lists.resize(left_len + input.right_ids.len(), Vec::new());
    let mut visited = VisitedSet::new(lists.len());
    let dist = |a, b| ctx.dist(a, b);
    for (j, &o) in input.right_ids.iter().enumerate() {
        let kept = merge_candidates(lists.as_slice(), ctx, &input, o, params, &mut visited);
        for nb in &kept {
            let local = ctx.local(nb.id, begin);
            if local < left_len {
                rng_insert(&mut lists[local], Neighbor::new(o, nb.dist), params.max_degree, dist);
            }
        }
        lists[left_len + j] = kept;
    }
    NodeGraph::from_lists(input.owner, begin, lists)
}

/// [`merge_graphs`] over per-list locks, with right-object insertions
/// spread over the current rayon pool. With `parallel = false` insertions
/// run in slice order and the output equals [`merge_graphs`]; otherwise
/// the result depends on the schedule.
pub fn merge_graphs_concurrent(
    ctx: GraphCtx<'_>,
    input: MergeInput<'_>,
    params: GraphParams,
    parallel: bool,
) -> NodeGraph {
    let left_len = input.left_ids.len();
    let total = left_len + input.right_ids.len();
    let begin = input.left.begin();
    let lists: Vec<RwLock<Vec<Neighbor>>> = (0..total)
        .map(|i| {
            RwLock::new(if i < left_len {
                input.left.neighbors(i).to_vec()
            } else {
                Vec::new()
            })
        })
        .collect();
    let adj = lists.as_slice();

    let insert = |visited: &mut VisitedSet, j: usize, o: u32| {
        let kept = merge_candidates(adj, ctx, &input, o, params, visited);
        for nb in &kept {
            let local = ctx.local(nb.id, begin);
            if local < left_len {
                let mut list = adj[local].write();
                rng_insert(&mut list, Neighbor::new(o, nb.dist), params.max_degree, |a, b| {
                    ctx.dist(a, b)
                });
            }
        }
        *adj[left_len + j].write() = kept;
    };

    if parallel {
        input
            .right_ids
            .par_iter()
            .enumerate()
            .for_each_init(|| VisitedSet::new(total), |vis, (j, &o)| insert(vis, j, o));
    } else {
        let mut vis = VisitedSet::new(total);
        for (j, &o) in input.right_ids.iter().enumerate() {
            insert(&mut vis, j, o);
        }
    }
    let lists = lists.into_iter().map(RwLock::into_inner).collect();
    NodeGraph::from_lists(input.owner, begin, lists)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ObjectSchema;
    use crate::synthetic::{self, AttrDistribution};
    use proptest::prelude::*;

    fn line_dataset(coords: &[f32]) -> Dataset {
        let schema = ObjectSchema::new(1, 1).unwrap();
        Dataset::new(schema, coords.to_vec(), vec![0.0; coords.len()]).unwrap()
    }

    fn identity(n: usize) -> Vec<u32> {
        (0..n as u32).collect()
    }

    fn brute_force(ds: &Dataset, ids: &[u32], q: &[f32], k: usize) -> Vec<Neighbor> {
        let mut all: Vec<Neighbor> = ids.iter().map(|&i| Neighbor::new(i, l2(q, ds.vector(i)))).collect();
        all.sort_by(cmp_neighbors);
        all.truncate(k);
        all
    }

    fn naive_prune(center_dists: &[Neighbor], m: usize, dist: impl Fn(u32, u32) -> f32) -> Vec<Neighbor> {
        let mut c = center_dists.to_vec();
        c.sort_by(cmp_neighbors);
        let mut kept: Vec<Neighbor> = Vec::new();
        for v in &c {
            let mut ok = true;
            for w in &kept {
                if w.dist < v.dist && dist(v.id, w.id) < v.dist {
                    ok = false;
                }
            }
            if ok && kept.len() < m {
                kept.push(*v);
            }
        }
        kept
    }

    #[test]
    fn prune_shields_collinear_points() {
        // u = 0, a = 1, b = 2 on a line
        let pos = [0.0f32, 1.0, 2.0];
        let dist = |x: u32, y: u32| (pos[x as usize] - pos[y as usize]).abs();
        let kept = rng_prune(vec![Neighbor::new(2, 2.0), Neighbor::new(1, 1.0)], 2, dist);
        assert_eq!(kept.iter().map(|n| n.id).collect::<Vec<_>>(), vec![1]);
    }

    #[test]
    fn prune_keeps_equilateral_corners() {
        let dist = |_: u32, _: u32| 1.0f32;
        let kept = rng_prune(vec![Neighbor::new(1, 1.0), Neighbor::new(2, 1.0)], 2, dist);
        assert_eq!(kept.len(), 2);
    }

    #[test]
    fn prune_matches_quadratic_reference() {
        let ds = synthetic::dataset(51, 8, 1, AttrDistribution::Uniform, 4);
        let dist = |a: u32, b: u32| ds.dist(a, b);
        let cands: Vec<Neighbor> = (1..51).map(|i| Neighbor::new(i, ds.dist(0, i))).collect();
        assert_eq!(rng_prune(cands.clone(), 8, dist), naive_prune(&cands, 8, dist));
    }

    #[test]
    fn search_single_vertex() {
        let ds = line_dataset(&[3.0]);
        let g = NodeGraph::from_lists(0, 0, vec![vec![]]);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &[0],
        };
        let out = greedy_search(&g, ctx, &[0.0], 4, &[0]).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].id, 0);
        assert!(matches!(
            greedy_search(&g, ctx, &[0.0], 4, &[]),
            Err(KhiError::EmptyEntrySet)
        ));
    }

    #[test]
    fn search_walks_a_path_graph() {
        let coords: Vec<f32> = (0..10).map(|i| i as f32).collect();
        let ds = line_dataset(&coords);
        let lists: Vec<Vec<Neighbor>> = (0..10u32)
            .map(|i| {
                let mut l = Vec::new();
                if i > 0 {
                    l.push(Neighbor::new(i - 1, 1.0));
                }
                if i < 9 {
                    l.push(Neighbor::new(i + 1, 1.0));
                }
                l
            })
            .collect();
        let g = NodeGraph::from_lists(0, 0, lists);
        let pos = identity(10);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &pos,
        };
        let out = greedy_search(&g, ctx, &[9.1], 2, &[0]).unwrap();
        assert_eq!(out.iter().map(|n| n.id).collect::<Vec<_>>(), vec![9, 8]);
    }

    #[test]
    fn search_on_complete_graph_is_exact() {
        let ds = synthetic::dataset(11, 8, 1, AttrDistribution::Uniform, 2);
        let ids = identity(10);
        let lists: Vec<Vec<Neighbor>> = ids
            .iter()
            .map(|&i| {
                ids.iter()
                    .filter(|&&j| j != i)
                    .map(|&j| Neighbor::new(j, ds.dist(i, j)))
                    .collect()
            })
            .collect();
        let g = NodeGraph::from_lists(0, 0, lists);
        let pos = identity(11);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &pos,
        };
        let q = ds.vector(10);
        let out = greedy_search(&g, ctx, q, 10, &[3]).unwrap();
        assert_eq!(out, brute_force(&ds, &ids, q, 10));
    }

    #[test]
    fn tiny_leaf_graphs() {
        let ds = line_dataset(&[0.0, 1.0]);
        let pos = identity(2);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &pos,
        };
        let g = build_leaf_graph(ctx, 0, 0, &[0], GraphParams::default());
        assert_eq!(g.edge_count(), 0);
        let g = build_leaf_graph(ctx, 0, 0, &[0, 1], GraphParams::default());
        assert_eq!(g.neighbors(0), &[Neighbor::new(1, 1.0)]);
        assert_eq!(g.neighbors(1), &[Neighbor::new(0, 1.0)]);
    }

    fn check_graph_invariants(g: &NodeGraph, ds: &Dataset, ids: &[u32], m: usize) {
        for (local, &u) in ids.iter().enumerate() {
            let list = g.neighbors(local);
            assert!(list.len() <= m);
            for (i, v) in list.iter().enumerate() {
                assert_ne!(v.id, u, "self loop");
                assert!(ids.contains(&v.id));
                assert!(list[..i].iter().all(|w| w.id != v.id), "duplicate");
                let d = ds.dist(u, v.id);
                assert!((d - v.dist).abs() <= 1e-6 * d.max(1e-6));
                for w in &list[..i] {
                    assert!(!(w.dist < v.dist && ds.dist(w.id, v.id) < v.dist), "shielded edge");
                }
            }
        }
    }

    fn connected(g: &NodeGraph) -> bool {
        let mut seen = vec![false; g.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for n in g.neighbors(u) {
                let v = n.id as usize;
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    #[test]
    fn leaf_graph_quality_on_200_points() {
        let ds = synthetic::dataset(200, 16, 1, AttrDistribution::Uniform, 8);
        let ids = identity(200);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &ids,
        };
        let params = GraphParams::new(8, 8).unwrap();
        let g = build_leaf_graph(ctx, 0, 0, &ids, params);
        check_graph_invariants(&g, &ds, &ids, 8);
        assert!(connected(&g));
        let mut total = 0.0;
        for q in 0..50u32 {
            let query = ds.vector(q * 4);
            let got = greedy_search(&g, ctx, query, 32, &[0]).unwrap();
            let truth = brute_force(&ds, &ids, query, 10);
            let hits = got
                .iter()
                .take(10)
                .filter(|n| truth.iter().any(|t| t.id == n.id))
                .count();
            total += hits as f64 / 10.0;
        }
        assert!(total / 50.0 >= 0.9, "recall {}", total / 50.0);
    }

    #[test]
    fn search_quality_on_1k_graph() {
        let (ds, queries) = synthetic::SyntheticSpec {
            n: 1000,
            dim: 16,
            attrs: 1,
            attr_dist: AttrDistribution::Uniform,
            vector_dist: synthetic::VectorDistribution::Gaussian,
            seed: 21,
        }
        .generate(100);
        let ids = identity(1000);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &ids,
        };
        let g = build_leaf_graph(ctx, 0, 0, &ids, GraphParams::new(16, 16).unwrap());
        check_graph_invariants(&g, &ds, &ids, 16);
        let mut total = 0.0;
        for q in &queries {
            let got = greedy_search(&g, ctx, q, 64, &[0]).unwrap();
            let truth = brute_force(&ds, &ids, q, 10);
            total += got
                .iter()
                .take(10)
                .filter(|n| truth.iter().any(|t| t.id == n.id))
                .count() as f64
                / 10.0;
        }
        assert!(total / 100.0 >= 0.95, "recall {}", total / 100.0);
    }

    #[test]
    fn merge_of_two_singletons_is_mutual_edge() {
        let ds = line_dataset(&[0.0, 2.0]);
        let pos = identity(2);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &pos,
        };
        let params = GraphParams::default();
        let left = build_leaf_graph(ctx, 1, 0, &[0], params);
        let right = build_leaf_graph(ctx, 2, 1, &[1], params);
        let input = MergeInput {
            owner: 0,
            left: &left,
            right: &right,
            left_ids: &[0],
            right_ids: &[1],
        };
        let g = merge_graphs(ctx, input, params);
        assert_eq!(g.neighbors(0), &[Neighbor::new(1, 2.0)]);
        assert_eq!(g.neighbors(1), &[Neighbor::new(0, 2.0)]);
    }

    #[test]
    fn sequential_and_locked_merge_agree() {
        let ds = synthetic::dataset(1000, 16, 1, AttrDistribution::Uniform, 17);
        let ids = identity(1000);
        let ctx = GraphCtx {
            dataset: &ds,
            position: &ids,
        };
        let params = GraphParams::new(16, 16).unwrap();
        let left = build_leaf_graph(ctx, 1, 0, &ids[..500], params);
        let right = build_leaf_graph(ctx, 2, 500, &ids[500..], params);
        let input = MergeInput {
            owner: 0,
            left: &left,
            right: &right,
            left_ids: &ids[..500],
            right_ids: &ids[500..],
        };
        let seq = merge_graphs(ctx, input, params);
        let locked = merge_graphs_concurrent(ctx, input, params, false);
        assert_eq!(seq, locked);
        check_graph_invariants(&seq, &ds, &ids, 16);

        let par = merge_graphs_concurrent(ctx, input, params, true);
        check_graph_invariants(&par, &ds, &ids, 16);
    }

    proptest! {
        #[test]
        fn incremental_insert_equals_full_prune(
            pts in prop::collection::vec(prop::collection::vec(-1.0f32..1.0, 3), 3..40),
            m in 2usize..8,
        ) {
            // point 0 is the centre, the last point is inserted afterwards
            let n = pts.len();
            let dist = |a: u32, b: u32| l2(&pts[a as usize], &pts[b as usize]);
            let existing: Vec<Neighbor> = (1..n as u32 - 1).map(|i| Neighbor::new(i, dist(0, i))).collect();
            let mut list = rng_prune(existing, m, dist);
            let new = Neighbor::new(n as u32 - 1, dist(0, n as u32 - 1));
            let mut all = list.clone();
            all.push(new);
            let expected = rng_prune(all, m, dist);
            rng_insert(&mut list, new, m, dist);
            prop_assert_eq!(list, expected);
        }
    }
}
